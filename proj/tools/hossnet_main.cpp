#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "hossnet/harness.hpp"

namespace {

/// Flags shared by the experiment subcommands. Precedence: command line over
/// config file over built-in defaults; HOSSNET_DATA_DIR fills in the dataset
/// root when nothing else names one.
struct CommonOpts {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string variant;
    std::string protocol;
    std::string scenario;
    std::string positive_direction;
    std::int64_t seed = 0;
    bool seed_given = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file (ini)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--data", data_dir, "dataset directory");
        cmd->add_option("--out", out_dir, "output directory for run artifacts");
        cmd->add_option("--variant", variant, "model variant")
            ->check(CLI::IsMember({"HRU", "CNN_LSTM", "HOSSnet_F", "HOSSnet"}));
        cmd->add_option("--protocol", protocol, "train/test split protocol")
            ->check(CLI::IsMember(
                {"over_sample", "over_time", "interpolation_blocks", "interpolation_sparse"}));
        cmd->add_option("--scenario", scenario, "input-to-output mapping")
            ->check(CLI::IsMember({"cauchy_to_fracture", "fracture_to_fracture"}));
        cmd->add_option("--seed", seed, "run seed")->each([this](const std::string&) {
            seed_given = true;
        });
        cmd->add_option("--positive-direction", positive_direction,
                        "enforce non-decreasing damage in emitted predictions")
            ->check(CLI::IsMember({"on", "off"}));
    }

    hossnet::ExperimentConfig resolve() const {
        hossnet::IniConfig ini;
        if (!config_path.empty()) ini.parse_file(config_path);
        if (!variant.empty()) ini.set("experiment", "variant", variant);
        if (!protocol.empty()) ini.set("experiment", "protocol", protocol);
        if (!scenario.empty()) ini.set("experiment", "scenario", scenario);
        if (seed_given) ini.set("experiment", "seed", std::to_string(seed));
        if (!positive_direction.empty())
            ini.set("experiment", "positive_direction", positive_direction);
        if (!data_dir.empty()) ini.set("experiment", "data_dir", data_dir);
        if (!out_dir.empty()) ini.set("experiment", "out_dir", out_dir);

        hossnet::ExperimentConfig cfg = hossnet::ExperimentConfig::from_ini(ini);
        if (cfg.data_dir.empty()) {
            if (const char* env = std::getenv("HOSSNET_DATA_DIR")) cfg.data_dir = env;
        }
        cfg.validate();
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crack propagation surrogate: data generation, training, and evaluation"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, eval_opts, pred_opts;
    std::string eval_checkpoint, pred_checkpoint;
    std::vector<std::string> report_inputs;
    std::string report_out = "report";
    int report_summary_steps = 50, report_interval = 2, report_max_lead = 60;

    auto* gen = app.add_subcommand("generate-data", "synthesize a benchmark dataset");
    gen_opts.attach(gen);
    auto* train = app.add_subcommand("train", "train a model and checkpoint the best state");
    train_opts.attach(train);
    auto* eval = app.add_subcommand("evaluate", "score a checkpoint on the held-out split");
    eval_opts.attach(eval);
    eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint to score")
        ->required()
        ->check(CLI::ExistingFile);
    auto* pred = app.add_subcommand("predict", "write predicted fields as dataset samples");
    pred_opts.attach(pred);
    pred->add_option("--checkpoint", pred_checkpoint, "model checkpoint to run")
        ->required()
        ->check(CLI::ExistingFile);
    auto* rep = app.add_subcommand("report", "merge evaluation record tables into one report");
    rep->add_option("inputs", report_inputs, "records.csv files from evaluate runs")
        ->required()
        ->check(CLI::ExistingFile);
    rep->add_option("--out", report_out, "report output directory");
    rep->add_option("--summary-steps", report_summary_steps, "lead-time cap for summary means");
    rep->add_option("--curve-interval", report_interval, "lead spacing of curve points");
    rep->add_option("--curve-max-lead", report_max_lead, "last lead shown on curves");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const auto dir = hossnet::generate_data(gen_opts.resolve(), &std::cout);
            std::cout << "dataset ready at " << dir.string() << "\n";
        } else if (train->parsed()) {
            const auto out = hossnet::train_experiment(train_opts.resolve(), &std::cout);
            std::cout << "run " << out.run_id << "\nbest validation "
                      << hossnet::format_double(out.best_validation) << " at epoch "
                      << out.best_epoch << "\ncheckpoint " << out.checkpoint_path.string()
                      << "\nmanifest " << out.manifest_path.string() << "\n";
        } else if (eval->parsed()) {
            const auto out =
                hossnet::evaluate_experiment(eval_opts.resolve(), eval_checkpoint, &std::cout);
            std::cout << "run " << out.run_id << "\nrecords " << out.records_path.string()
                      << "\nsummary " << out.summary_path.string() << "\n";
        } else if (pred->parsed()) {
            const auto dir =
                hossnet::predict_experiment(pred_opts.resolve(), pred_checkpoint, &std::cout);
            std::cout << "predictions in " << dir.string() << "\n";
        } else if (rep->parsed()) {
            std::vector<std::filesystem::path> inputs(report_inputs.begin(), report_inputs.end());
            const auto dir = hossnet::write_report(inputs, report_out, report_summary_steps,
                                                   report_interval, report_max_lead);
            std::cout << "report in " << dir.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// Acceptance checks for the crack-field surrogate. Each criterion prints one
// PASS/FAIL line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hossnet/harness.hpp"
#include "oracles.hpp"

using namespace hossnet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, const std::string& title, bool ok, const std::string& detail) {
    std::printf("criterion %d (%s): %s%s%s\n", n, title.c_str(), ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hossnet_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

NdArray random_window(int l, int c, int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    NdArray out({l, c, h, w});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lo + (hi - lo) * rng.uniform01();
    return out;
}

// ---- 1: flow solver against a brute-force minimizer ----

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    auto [a, b] = oracles::translated_sinusoid(16, 16);
    FlowSolverParams params;
    params.n_iterations = 400;

    const FlowField got = estimate_flow(a, b, params);
    auto [ou, ov] = oracles::cg_minimize_flow(a, b, params);

    const double e_got = flow_objective(a, b, got.u, got.v, params);
    const double e_oracle = flow_objective(a, b, ou, ov, params);
    double mae = 0.0;
    for (std::size_t i = 0; i < got.u.size(); ++i)
        mae += std::abs(got.u[i] - ou[i]) + std::abs(got.v[i] - ov[i]);
    mae /= static_cast<double>(2 * got.u.size());
    const double dt = seconds_since(t0);

    std::ostringstream d;
    d << "objective gap " << std::abs(e_got - e_oracle) << " (cap 1e-3), flow MAE " << mae
      << " (cap 0.15), " << dt << " s (cap 10)";
    report(1, "flow solver matches brute-force minimizer",
           std::abs(e_got - e_oracle) < 1e-3 && mae < 0.15 && dt < 10.0, d.str());
}

// ---- 2: exact angle-loss values ----

void criterion_2() {
    const int h = 12, w = 12;
    const int n = h * w;
    const double pi = 3.14159265358979323846;
    Rng rng(17);

    FlowField f1, f2;
    f1.u = NdArray({h, w});
    f1.v = NdArray({h, w});
    for (std::size_t i = 0; i < f1.u.size(); ++i) {
        f1.u[i] = 0.5 + rng.uniform01();
        f1.v[i] = -1.0 + 2.0 * rng.uniform01();
    }
    const double same = flow_angle_loss(f1, f1, 1e-6);

    FlowField right, up, left;
    right.u = NdArray({h, w}, 1.0);
    right.v = NdArray({h, w}, 0.0);
    up.u = NdArray({h, w}, 0.0);
    up.v = NdArray({h, w}, 1.0);
    left.u = NdArray({h, w}, -1.0);
    left.v = NdArray({h, w}, 0.0);

    const double ortho = flow_angle_loss(right, up, 1e-6);
    const double anti = flow_angle_loss(right, left, 1e-6);
    const double ortho_want = n * (pi / 2.0) * (pi / 2.0);
    const double anti_want = n * pi * pi;

    // positive per-pixel rescaling must not move the loss
    FlowField scaled = f1;
    Rng srng(18);
    for (std::size_t i = 0; i < scaled.u.size(); ++i) {
        const double s = 0.1 + 5.0 * srng.uniform01();
        scaled.u[i] *= s;
        scaled.v[i] *= s;
    }
    FlowField obs;
    obs.u = NdArray({h, w});
    obs.v = NdArray({h, w});
    for (std::size_t i = 0; i < obs.u.size(); ++i) {
        obs.u[i] = -1.0 + 2.0 * rng.uniform01();
        obs.v[i] = -1.0 + 2.0 * rng.uniform01();
    }
    const double base = flow_angle_loss(f1, obs, 1e-9);
    const double rescaled = flow_angle_loss(scaled, obs, 1e-9);

    const double rel_ortho = std::abs(ortho - ortho_want) / ortho_want;
    const double rel_anti = std::abs(anti - anti_want) / anti_want;
    const double rel_scale = std::abs(rescaled - base) / base;

    std::ostringstream d;
    d << "identical " << same << ", orthogonal rel err " << rel_ortho << ", antiparallel rel err "
      << rel_anti << ", rescale rel err " << rel_scale << " (caps 0 / 1e-9)";
    report(2, "angle loss hits its closed-form values",
           same == 0.0 && rel_ortho < 1e-9 && rel_anti < 1e-9 && rel_scale < 1e-9, d.str());
}

// ---- 3: gradient fidelity ----

void criterion_3() {
    Rng rng(23);
    const int l = 2, h = 8, w = 8;
    NdArray pred = random_window(l, 1, h, w, rng, 0.1, 0.9);
    NdArray truth = random_window(l, 1, h, w, rng, 0.1, 0.9);
    RandomConvFeatureExtractor extractor(11, 1, 4);
    TotalLossParams params;
    params.weights = {0.1, 0.01};
    params.flow.n_iterations = 25;
    params.extractor = &extractor;
    const RegionMask mask = RegionMask::full(h, w, MaskKind::dynamic);

    Tape tape;
    Var px = tape.put(pred);
    Var loss = total_loss_taped(tape, px, truth, mask, params);
    tape.backward(loss);
    const NdArray& analytic = tape.grad(px);

    const auto fd = oracles::fd_gradient(
        [&](const std::vector<NdArray>& xs) {
            Tape t;
            return t.scalar_value(total_loss_taped(t, t.put(xs[0]), truth, mask, params));
        },
        {pred}, 1e-6);
    const double pred_err = oracles::max_relative_error(analytic, fd[0], 1e-6);

    // end-to-end gradients through a small full model, eval-mode batch norm
    ModelConfig mc;
    mc.in_channels = 1;
    mc.base_width = 4;
    mc.latent_state_size = 4;
    mc.n_res_blocks = 1;
    mc.window_length = l;
    HossnetModel model(mc, 41);
    NdArray inputs = random_window(l, 1, h, w, rng, 0.1, 0.9);

    Tape t2;
    HossnetModel::Taped taped(t2, model, false);
    Var out = taped.forward(t2.put(inputs));
    Var wloss = total_loss_taped(t2, out, truth, mask, params);
    t2.backward(wloss);

    auto loss_of = [&](HossnetModel& m) {
        Tape t;
        return t.scalar_value(
            total_loss_taped(t, t.put(m.forward(inputs, false)), truth, mask, params));
    };
    HossnetModel probe(mc, 41);
    const double step = 1e-5;
    double weight_err = 0.0;
    for (const auto& [name, p] : model.parameters()) {
        const std::size_t stride = std::max<std::size_t>(1, p.size() / 2);
        for (std::size_t i = 0; i < p.size(); i += stride) {
            auto perturbed = [&](double delta) {
                probe.copy_state_from(model);
                probe.parameter(name)[i] += delta;
                return loss_of(probe);
            };
            const double fd_w = (perturbed(step) - perturbed(-step)) / (2.0 * step);
            const double an = t2.grad(taped.param_var(name))[i];
            const double scale = std::max({1e-6, std::abs(fd_w), std::abs(an)});
            weight_err = std::max(weight_err, std::abs(fd_w - an) / scale);
        }
    }

    std::ostringstream d;
    d << "prediction grad rel err " << pred_err << " (cap 1e-4), weight grad rel err "
      << weight_err << " (cap 1e-3)";
    report(3, "loss gradients match finite differences", pred_err < 1e-4 && weight_err < 1e-3,
           d.str());
}

// ---- 4: monotonic post-processing ----

void criterion_4() {
    Rng rng(31);
    SampleSequence pred;
    pred.sample_id = "acc4";
    const int h = 8, w = 8, t_count = 6;
    for (int t = 0; t < t_count; ++t) {
        FieldFrame f;
        f.channel_kind = ChannelKind::fracture_damage;
        f.time_index = t;
        f.values = NdArray({1, h, w});
        for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = rng.uniform01();
        pred.frames.push_back(std::move(f));
    }
    FieldFrame anchor;
    anchor.channel_kind = ChannelKind::fracture_damage;
    anchor.time_index = 0;
    anchor.values = NdArray({1, h, w});
    for (std::size_t i = 0; i < anchor.values.size(); ++i) anchor.values[i] = rng.uniform01();

    const auto once = enforce_positive_direction(pred, anchor);
    const auto twice = enforce_positive_direction(once, anchor);

    bool non_decreasing = true, above_anchor = true, idempotent = true;
    for (int t = 0; t < t_count; ++t) {
        const auto& cur = once.frames[static_cast<std::size_t>(t)].values;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            if (t > 0 && cur[i] < once.frames[static_cast<std::size_t>(t - 1)].values[i])
                non_decreasing = false;
            if (cur[i] < anchor.values[i]) above_anchor = false;
            if (cur[i] != twice.frames[static_cast<std::size_t>(t)].values[i]) idempotent = false;
        }
    }

    // synthetic damage grows by construction, so the pass must not touch it
    CrackSpec spec;
    spec.n_initial_cracks = 4;
    spec.seed = 77;
    spec.grid_h = 16;
    spec.grid_w = 16;
    spec.n_steps = 20;
    const SampleSequence grown = generate_sample(spec);
    const auto same = enforce_positive_direction(grown);
    bool identity = true;
    for (int t = 0; t < grown.length(); ++t)
        for (std::size_t i = 0; i < grown.frames[static_cast<std::size_t>(t)].values.size(); ++i)
            if (same.frames[static_cast<std::size_t>(t)].values[i] !=
                grown.frames[static_cast<std::size_t>(t)].values[i])
                identity = false;

    std::ostringstream d;
    d << "non-decreasing " << non_decreasing << ", idempotent " << idempotent
      << ", identity on monotone " << identity << ", respects anchor " << above_anchor;
    report(4, "positive-direction pass is a projection",
           non_decreasing && idempotent && identity && above_anchor, d.str());
}

// ---- 5: metric identities ----

void criterion_5() {
    Rng rng(37);
    const int h = 8, w = 8;
    NdArray a({h, w}), b({h, w});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform01();
        b[i] = rng.uniform01();
    }
    SsimParams sp{5, 0.01, 0.03, 1.0};

    const bool ssim_self = ssim(a, a, sp) == 1.0;
    const bool ssim_sym = ssim(a, b, sp) == ssim(b, a, sp);
    const bool rmse_sym = rmse(a, b) == rmse(b, a);

    // hand-built wfe: dynamic block of 4 pixels off by 0.1, one fixed pixel off by 0.2
    NdArray truth({h, w}, 0.0), pred2({h, w}, 0.0);
    RegionMask dynamic(h, w, MaskKind::dynamic);
    for (int y = 2; y < 4; ++y)
        for (int x = 2; x < 4; ++x) {
            dynamic.mask.at2(y, x) = 1.0;
            pred2.at2(y, x) = 0.1;
        }
    pred2.at2(6, 6) = 0.2;
    const double rmse_dyn = 0.1;                       // uniform error on 4 dynamic pixels
    const double rmse_fix = std::sqrt(0.2 * 0.2 / (h * w - 4.0));
    const double want = 10.0 * rmse_dyn + rmse_fix;
    const double got = wfe(pred2, truth, dynamic);
    const double wfe_err = std::abs(got - want);

    std::ostringstream d;
    d << "ssim(a,a)==1 " << ssim_self << ", ssim symmetric " << ssim_sym << ", rmse symmetric "
      << rmse_sym << ", wfe err " << wfe_err << " (cap 1e-12)";
    report(5, "metric identities hold", ssim_self && ssim_sym && rmse_sym && wfe_err < 1e-12,
           d.str());
}

// ---- 6: forward shape and range contract ----

void criterion_6() {
    Rng rng(43);
    bool shapes = true, range = true;
    double batch_gap = 0.0;
    for (int in_ch : {1, 3}) {
        for (int h : {8, 16, 32}) {
            for (int w : {8, 16, 32}) {
                ModelConfig mc;
                mc.in_channels = in_ch;
                mc.base_width = 4;
                mc.latent_state_size = 4;
                mc.n_res_blocks = 1;
                mc.window_length = 3;
                HossnetModel model(mc, 51);
                NdArray x = random_window(3, in_ch, h, w, rng);
                const NdArray y = model.forward(x, false);
                shapes = shapes && y.shape() == std::vector<int>{3, 1, h, w};
                for (std::size_t i = 0; i < y.size(); ++i)
                    range = range && y[i] > 0.0 && y[i] < 1.0;
            }
        }
    }
    {
        ModelConfig mc;
        mc.in_channels = 1;
        mc.base_width = 4;
        mc.latent_state_size = 4;
        mc.n_res_blocks = 1;
        mc.window_length = 3;
        HossnetModel model(mc, 52);
        std::vector<NdArray> windows;
        for (int k = 0; k < 3; ++k) windows.push_back(random_window(3, 1, 16, 16, rng));
        const auto batched = model.forward_batch(windows, false);
        for (int k = 0; k < 3; ++k) {
            const NdArray single = model.forward(windows[static_cast<std::size_t>(k)], false);
            for (std::size_t i = 0; i < single.size(); ++i)
                batch_gap = std::max(batch_gap,
                                     std::abs(single[i] - batched[static_cast<std::size_t>(k)][i]));
        }
    }
    std::ostringstream d;
    d << "shapes ok " << shapes << ", outputs in (0,1) " << range << ", batch gap " << batch_gap
      << " (cap 1e-6)";
    report(6, "forward obeys the shape and range contract", shapes && range && batch_gap <= 1e-6,
           d.str());
}

// ---- 7: training smoke on the benchmark corpus ----

void criterion_7() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.data_dir = scratch_dir("c7_data").string();
    cfg.out_dir = scratch_dir("c7_runs").string();
    cfg.scenario = Scenario::fracture_to_fracture;
    cfg.protocol = Protocol::over_sample;
    cfg.variant = Variant::HOSSnet;
    cfg.seed = 1;
    cfg.epochs = 100;
    cfg.batch_size = 4;
    cfg.window_stride = 4;
    cfg.learning_rate = 5e-4;
    cfg.model.base_width = 8;
    cfg.model.latent_state_size = 8;
    cfg.model.window_length = 4;
    cfg.flow.n_iterations = 30;

    generate_data(cfg);
    const auto out = train_experiment(cfg);
    const double dt = seconds_since(t0);

    const double first = out.epochs.front().train.mse;
    const double last = out.epochs.back().train.mse;
    std::ostringstream d;
    d << "train mse epoch 1 " << first << " -> epoch " << out.epochs.size() << " " << last << " ("
      << (last / first * 100.0) << "%, cap 50%), " << dt << " s (cap 600)";
    report(7, "benchmark training halves its mse inside ten minutes",
           last <= 0.5 * first && dt < 600.0, d.str());
}

// ---- 8: split protocol integrity ----

void criterion_8() {
    // production-length samples: 300 steps each
    std::vector<SampleSequence> samples;
    for (int i = 0; i < 6; ++i) {
        SampleSequence seq;
        seq.sample_id = "p" + std::to_string(i);
        for (int t = 0; t < 300; ++t) {
            FieldFrame f;
            f.channel_kind = ChannelKind::fracture_damage;
            f.time_index = t;
            f.values = NdArray({1, 6, 6}, 0.0);
            seq.frames.push_back(std::move(f));
        }
        samples.push_back(std::move(seq));
    }

    bool ok = true;
    std::ostringstream d;
    try {
        for (Protocol p : {Protocol::over_sample, Protocol::over_time,
                           Protocol::interpolation_blocks, Protocol::interpolation_sparse})
            assert_no_leakage(dataset_split(samples, p));

        const auto over_time = split_over_time(samples);
        ok = ok && over_time.train.at("p5").size() == 150 && over_time.test.at("p5").size() == 150;
        ok = ok && over_time.test.at("p5").front() == 150;

        const auto blocks = dataset_split(samples, Protocol::interpolation_blocks);
        ok = ok && blocks.train.at("p5").size() == 200 && blocks.test.at("p5").size() == 100;
        for (int t = 100; t < 200; ++t)
            ok = ok && std::count(blocks.test.at("p5").begin(), blocks.test.at("p5").end(), t) == 1;

        const auto sparse = dataset_split(samples, Protocol::interpolation_sparse);
        ok = ok && sparse.train.at("p5").size() == 30 && sparse.test.at("p5").size() == 270;
        for (int t : sparse.train.at("p5")) ok = ok && t % 10 == 0;

        const auto over_sample = dataset_split(samples, Protocol::over_sample);
        ok = ok && over_sample.test.size() == 1 && over_sample.test.at("p5").size() == 300 &&
             over_sample.train.size() == 5;

        d << "over_time 150/150, blocks 200/100 (middle third hidden), sparse 30/270, "
             "over_sample 5+1; no leakage in any protocol";
    } catch (const std::exception& e) {
        ok = false;
        d << "exception: " << e.what();
    }
    report(8, "splits match the published proportions with zero leakage", ok, d.str());
}

// ---- 9: directional ablation against the recurrent-free baseline ----

void criterion_9() {
    ExperimentConfig base;
    base.data_dir = scratch_dir("c9_data").string();
    base.out_dir = scratch_dir("c9_runs").string();
    base.scenario = Scenario::cauchy_to_fracture;
    base.protocol = Protocol::over_sample;
    base.epochs = 25;
    base.batch_size = 4;
    base.window_stride = 3;
    base.learning_rate = 5e-4;
    base.model.base_width = 6;
    base.model.latent_state_size = 6;
    base.model.window_length = 3;
    base.flow.n_iterations = 30;
    base.extractor_width = 6;
    base.datagen.n_samples = 6;
    base.datagen.n_steps = 30;
    base.datagen.grid = 16;
    base.datagen.n_initial_cracks = 4;
    generate_data(base);

    auto mean_wfe = [&](Variant v, std::uint64_t seed) {
        ExperimentConfig cfg = base;
        cfg.variant = v;
        cfg.seed = seed;
        const auto trained = train_experiment(cfg);
        const auto ev = evaluate_experiment(cfg, trained.checkpoint_path);
        double sum = 0.0;
        int n = 0;
        for (const auto& r : ev.records)
            if (r.lead_time <= 10) {
                sum += r.wfe;
                ++n;
            }
        return n > 0 ? sum / n : std::numeric_limits<double>::infinity();
    };

    int wins = 0;
    std::ostringstream d;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const double full = mean_wfe(Variant::HOSSnet, seed);
        const double baseline = mean_wfe(Variant::HRU, seed);
        const bool win = full <= baseline;
        wins += win;
        d << "seed " << seed << ": HOSSnet " << full << (win ? " <= " : " > ") << "HRU "
          << baseline << "; ";
    }
    d << wins << "/3 seeds (need >= 2)";
    report(9, "full model beats the recurrent-free baseline on early-step wfe", wins >= 2,
           d.str());
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

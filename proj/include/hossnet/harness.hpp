#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hossnet/config.hpp"
#include "hossnet/core.hpp"
#include "hossnet/datagen.hpp"
#include "hossnet/flow.hpp"
#include "hossnet/io.hpp"
#include "hossnet/losses.hpp"
#include "hossnet/metrics.hpp"
#include "hossnet/model.hpp"
#include "hossnet/plot.hpp"
#include "hossnet/postproc.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

// ---- experiment vocabulary ----

enum class Scenario { cauchy_to_fracture, fracture_to_fracture };
enum class Protocol { over_sample, over_time, interpolation_blocks, interpolation_sparse };
enum class Variant { HRU, CNN_LSTM, HOSSnet_F, HOSSnet };

inline std::string to_string(Scenario s) {
    return s == Scenario::cauchy_to_fracture ? "cauchy_to_fracture" : "fracture_to_fracture";
}
inline std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::over_sample: return "over_sample";
        case Protocol::over_time: return "over_time";
        case Protocol::interpolation_blocks: return "interpolation_blocks";
        case Protocol::interpolation_sparse: return "interpolation_sparse";
    }
    throw std::logic_error("unknown Protocol");
}
inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::HRU: return "HRU";
        case Variant::CNN_LSTM: return "CNN_LSTM";
        case Variant::HOSSnet_F: return "HOSSnet_F";
        case Variant::HOSSnet: return "HOSSnet";
    }
    throw std::logic_error("unknown Variant");
}

inline Scenario scenario_from_string(const std::string& s) {
    if (s == "cauchy_to_fracture") return Scenario::cauchy_to_fracture;
    if (s == "fracture_to_fracture") return Scenario::fracture_to_fracture;
    throw std::invalid_argument("unknown scenario: " + s);
}
inline Protocol protocol_from_string(const std::string& s) {
    if (s == "over_sample") return Protocol::over_sample;
    if (s == "over_time") return Protocol::over_time;
    if (s == "interpolation_blocks") return Protocol::interpolation_blocks;
    if (s == "interpolation_sparse") return Protocol::interpolation_sparse;
    throw std::invalid_argument("unknown protocol: " + s);
}
inline Variant variant_from_string(const std::string& s) {
    if (s == "HRU") return Variant::HRU;
    if (s == "CNN_LSTM") return Variant::CNN_LSTM;
    if (s == "HOSSnet_F") return Variant::HOSSnet_F;
    if (s == "HOSSnet") return Variant::HOSSnet;
    throw std::invalid_argument("unknown variant: " + s);
}

// ---- experiment configuration ----

struct DataGenSettings {
    int n_samples = 6;
    int n_steps = 60;
    int grid = 32;
    int n_initial_cracks = 6;
    double growth_rate = 0.35;
    double branching_prob = 0.03;
    std::uint64_t base_seed = 1000;
    bool with_stress = true;

    CrackSpec crack_spec() const {
        CrackSpec spec;
        spec.n_initial_cracks = n_initial_cracks;
        spec.seed = base_seed;
        spec.growth_rate = growth_rate;
        spec.branching_prob = branching_prob;
        spec.grid_h = grid;
        spec.grid_w = grid;
        spec.n_steps = n_steps;
        return spec;
    }
};

struct ExperimentConfig {
    Scenario scenario = Scenario::fracture_to_fracture;
    Protocol protocol = Protocol::over_sample;
    Variant variant = Variant::HOSSnet;
    std::uint64_t seed = 0;
    int held_out = -1;  // index into the id-sorted fracture samples; -1 = last
    bool positive_direction = true;
    std::string data_dir;
    std::string out_dir = "runs";

    ModelConfig model;  // in_channels is derived from the scenario
    LossWeights loss_weights;
    std::string extractor = "random_conv";
    int extractor_depth = 2;
    int extractor_width = 8;
    std::uint64_t extractor_seed = 0;
    int mask_dilation = 4;
    double magnitude_floor = 1e-6;
    FlowSolverParams flow;

    double learning_rate = 5e-4;
    int epochs = 500;
    int batch_size = 4;
    int window_stride = 1;
    double validation_fraction = 0.1;

    int summary_steps = 50;
    int curve_interval = 2;
    int curve_max_lead = 60;
    std::vector<int> triptych_steps = {1, 11, 21, 31, 41, 51};
    int sparse_stride = 10;

    DataGenSettings datagen;

    void validate() const {
        if (!(learning_rate > 0.0))
            throw std::invalid_argument("ExperimentConfig: learning_rate must be > 0");
        if (epochs < 1) throw std::invalid_argument("ExperimentConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("ExperimentConfig: batch_size must be >= 1");
        if (window_stride < 1)
            throw std::invalid_argument("ExperimentConfig: window_stride must be >= 1");
        if (validation_fraction < 0.0 || validation_fraction > 0.5)
            throw std::invalid_argument("ExperimentConfig: validation_fraction must be in [0, 0.5]");
        if (sparse_stride < 2)
            throw std::invalid_argument("ExperimentConfig: sparse_stride must be >= 2");
        if (summary_steps < 1 || curve_interval < 1 || curve_max_lead < 1)
            throw std::invalid_argument("ExperimentConfig: evaluation knobs must be >= 1");
        model.validate();
        loss_weights.validate();
        flow.validate();
        if (!(magnitude_floor > 0.0))
            throw std::invalid_argument("ExperimentConfig: magnitude_floor must be > 0");
    }

    static ExperimentConfig from_ini(const IniConfig& ini) {
        ExperimentConfig c;
        c.scenario = scenario_from_string(
            ini.get_string("experiment", "scenario", to_string(c.scenario)));
        c.protocol = protocol_from_string(
            ini.get_string("experiment", "protocol", to_string(c.protocol)));
        c.variant =
            variant_from_string(ini.get_string("experiment", "variant", to_string(c.variant)));
        c.seed = static_cast<std::uint64_t>(
            ini.get_int("experiment", "seed", static_cast<std::int64_t>(c.seed)));
        c.held_out = static_cast<int>(ini.get_int("experiment", "held_out", c.held_out));
        c.positive_direction =
            ini.get_bool("experiment", "positive_direction", c.positive_direction);
        c.data_dir = ini.get_string("experiment", "data_dir", c.data_dir);
        c.out_dir = ini.get_string("experiment", "out_dir", c.out_dir);

        c.model.base_width = static_cast<int>(ini.get_int("model", "base_width", 8));
        c.model.n_res_blocks = static_cast<int>(ini.get_int("model", "n_res_blocks", 2));
        c.model.latent_state_size = static_cast<int>(ini.get_int("model", "latent_state_size", 8));
        c.model.window_length = static_cast<int>(ini.get_int("model", "window_length", 4));
        const std::string merge = ini.get_string("model", "skip_merge", "add");
        if (merge == "add") c.model.skip_merge = SkipMerge::add;
        else if (merge == "concat") c.model.skip_merge = SkipMerge::concat;
        else throw std::runtime_error("config: unknown skip_merge " + merge);
        const std::string up = ini.get_string("model", "upsample_mode", "nearest");
        if (up == "nearest") c.model.upsample_mode = UpsampleMode::nearest;
        else if (up == "transposed") c.model.upsample_mode = UpsampleMode::transposed;
        else throw std::runtime_error("config: unknown upsample_mode " + up);
        const std::string act = ini.get_string("model", "output_activation", "sigmoid");
        if (act == "sigmoid") c.model.output_activation = OutputActivation::sigmoid;
        else if (act == "none") c.model.output_activation = OutputActivation::none;
        else throw std::runtime_error("config: unknown output_activation " + act);

        c.loss_weights.alpha_perc = ini.get_double("loss", "alpha_perc", c.loss_weights.alpha_perc);
        c.loss_weights.alpha_op = ini.get_double("loss", "alpha_op", c.loss_weights.alpha_op);
        c.extractor = ini.get_string("loss", "extractor", c.extractor);
        c.extractor_depth = static_cast<int>(ini.get_int("loss", "extractor_depth", c.extractor_depth));
        c.extractor_width = static_cast<int>(ini.get_int("loss", "extractor_width", c.extractor_width));
        c.extractor_seed = static_cast<std::uint64_t>(
            ini.get_int("loss", "extractor_seed", static_cast<std::int64_t>(c.extractor_seed)));
        c.mask_dilation = static_cast<int>(ini.get_int("loss", "mask_dilation", c.mask_dilation));
        c.magnitude_floor = ini.get_double("loss", "magnitude_floor", c.magnitude_floor);

        c.flow.lambda = ini.get_double("flow", "lambda", c.flow.lambda);
        c.flow.n_iterations = static_cast<int>(ini.get_int("flow", "iterations", c.flow.n_iterations));
        const std::string scheme = ini.get_string("flow", "scheme", "central");
        if (scheme == "central") c.flow.derivative_scheme = DerivativeScheme::central;
        else if (scheme == "forward") c.flow.derivative_scheme = DerivativeScheme::forward;
        else throw std::runtime_error("config: unknown flow scheme " + scheme);

        c.learning_rate = ini.get_double("train", "learning_rate", c.learning_rate);
        c.epochs = static_cast<int>(ini.get_int("train", "epochs", c.epochs));
        c.batch_size = static_cast<int>(ini.get_int("train", "batch_size", c.batch_size));
        c.window_stride = static_cast<int>(ini.get_int("train", "window_stride", c.window_stride));
        c.validation_fraction =
            ini.get_double("train", "validation_fraction", c.validation_fraction);

        c.summary_steps = static_cast<int>(ini.get_int("eval", "summary_steps", c.summary_steps));
        c.curve_interval = static_cast<int>(ini.get_int("eval", "curve_interval", c.curve_interval));
        c.curve_max_lead = static_cast<int>(ini.get_int("eval", "curve_max_lead", c.curve_max_lead));
        c.triptych_steps = ini.get_int_list("eval", "triptych_steps", c.triptych_steps);
        c.sparse_stride = static_cast<int>(ini.get_int("eval", "sparse_stride", c.sparse_stride));

        c.datagen.n_samples = static_cast<int>(ini.get_int("data", "n_samples", c.datagen.n_samples));
        c.datagen.n_steps = static_cast<int>(ini.get_int("data", "n_steps", c.datagen.n_steps));
        c.datagen.grid = static_cast<int>(ini.get_int("data", "grid", c.datagen.grid));
        c.datagen.n_initial_cracks =
            static_cast<int>(ini.get_int("data", "n_initial_cracks", c.datagen.n_initial_cracks));
        c.datagen.growth_rate = ini.get_double("data", "growth_rate", c.datagen.growth_rate);
        c.datagen.branching_prob =
            ini.get_double("data", "branching_prob", c.datagen.branching_prob);
        c.datagen.base_seed = static_cast<std::uint64_t>(
            ini.get_int("data", "base_seed", static_cast<std::int64_t>(c.datagen.base_seed)));
        c.datagen.with_stress = ini.get_bool("data", "with_stress", c.datagen.with_stress);
        return c;
    }

    nlohmann::json to_json() const {
        return {
            {"experiment",
             {{"scenario", to_string(scenario)},
              {"protocol", to_string(protocol)},
              {"variant", to_string(variant)},
              {"seed", seed},
              {"held_out", held_out},
              {"positive_direction", positive_direction},
              {"data_dir", data_dir},
              {"out_dir", out_dir}}},
            {"model", model.to_json()},
            {"loss",
             {{"alpha_perc", loss_weights.alpha_perc},
              {"alpha_op", loss_weights.alpha_op},
              {"extractor", extractor},
              {"extractor_depth", extractor_depth},
              {"extractor_width", extractor_width},
              {"extractor_seed", extractor_seed},
              {"mask_dilation", mask_dilation},
              {"magnitude_floor", magnitude_floor}}},
            {"flow",
             {{"lambda", flow.lambda},
              {"iterations", flow.n_iterations},
              {"scheme",
               flow.derivative_scheme == DerivativeScheme::central ? "central" : "forward"}}},
            {"train",
             {{"learning_rate", learning_rate},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"window_stride", window_stride},
              {"validation_fraction", validation_fraction}}},
            {"eval",
             {{"summary_steps", summary_steps},
              {"curve_interval", curve_interval},
              {"curve_max_lead", curve_max_lead},
              {"triptych_steps", triptych_steps},
              {"sparse_stride", sparse_stride}}},
            {"data",
             {{"n_samples", datagen.n_samples},
              {"n_steps", datagen.n_steps},
              {"grid", datagen.grid},
              {"n_initial_cracks", datagen.n_initial_cracks},
              {"growth_rate", datagen.growth_rate},
              {"branching_prob", datagen.branching_prob},
              {"base_seed", datagen.base_seed},
              {"with_stress", datagen.with_stress}}},
        };
    }
};

/// Model/loss adjustments that define each variant. HRU drops the recurrent
/// latent transition, CNN_LSTM drops residual blocks and physics losses,
/// HOSSnet_F drops only the perceptual term.
inline std::pair<ModelConfig, LossWeights> apply_variant(const ExperimentConfig& cfg) {
    ModelConfig mc = cfg.model;
    mc.in_channels = cfg.scenario == Scenario::cauchy_to_fracture ? 3 : 1;
    LossWeights lw = cfg.loss_weights;
    switch (cfg.variant) {
        case Variant::HRU: mc.use_rtl = false; break;
        case Variant::CNN_LSTM:
            mc.n_res_blocks = 0;
            lw = LossWeights{0.0, 0.0};
            break;
        case Variant::HOSSnet_F: lw.alpha_perc = 0.0; break;
        case Variant::HOSSnet: break;
    }
    return {mc, lw};
}

// ---- splits ----

struct SplitIndex {
    std::map<std::string, std::vector<int>> train;  // sample_id -> sorted time steps
    std::map<std::string, std::vector<int>> test;
};

inline void assert_no_leakage(const SplitIndex& split) {
    for (const auto& [id, train_steps] : split.train) {
        const auto it = split.test.find(id);
        if (it == split.test.end()) continue;
        std::vector<int> overlap;
        std::set_intersection(train_steps.begin(), train_steps.end(), it->second.begin(),
                              it->second.end(), std::back_inserter(overlap));
        if (!overlap.empty())
            throw std::logic_error("split leakage: sample " + id + " step " +
                                   std::to_string(overlap.front()) + " is in train and test");
    }
}

namespace detail {

inline std::vector<int> iota_steps(int lo, int hi) {  // [lo, hi)
    std::vector<int> v;
    for (int t = lo; t < hi; ++t) v.push_back(t);
    return v;
}

inline int resolve_held_out(std::size_t n, int held_out) {
    if (held_out == -1) return static_cast<int>(n) - 1;
    if (held_out < 0 || held_out >= static_cast<int>(n))
        throw std::invalid_argument("held_out index out of range");
    return held_out;
}

}  // namespace detail

/// Whole-sample holdout: every step of one sample is test, the rest train.
inline SplitIndex split_over_sample(const std::vector<SampleSequence>& samples, int held_out = -1) {
    if (samples.size() < 2)
        throw std::invalid_argument("split_over_sample: need at least 2 samples");
    const int held = detail::resolve_held_out(samples.size(), held_out);
    SplitIndex split;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto steps = detail::iota_steps(0, samples[i].length());
        if (static_cast<int>(i) == held)
            split.test[samples[i].sample_id] = std::move(steps);
        else
            split.train[samples[i].sample_id] = std::move(steps);
    }
    return split;
}

/// Temporal holdout on one sample: its first floor(T/2) steps train, the rest
/// test; all other samples train in full.
inline SplitIndex split_over_time(const std::vector<SampleSequence>& samples, int held_out = -1) {
    if (samples.size() < 2) throw std::invalid_argument("split_over_time: need at least 2 samples");
    const int held = detail::resolve_held_out(samples.size(), held_out);
    SplitIndex split;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int t_count = samples[i].length();
        if (static_cast<int>(i) == held) {
            const int half = t_count / 2;
            if (half < 1 || half >= t_count)
                throw std::invalid_argument("split_over_time: sample too short to halve");
            split.train[samples[i].sample_id] = detail::iota_steps(0, half);
            split.test[samples[i].sample_id] = detail::iota_steps(half, t_count);
        } else {
            split.train[samples[i].sample_id] = detail::iota_steps(0, t_count);
        }
    }
    return split;
}

/// Within-sample interpolation split. blocks: first and last thirds train,
/// middle third test. sparse: every `sparse_stride`-th step trains, the rest
/// test.
inline std::pair<std::vector<int>, std::vector<int>> split_interpolation(
    const SampleSequence& sample, Protocol mode, int sparse_stride = 10) {
    const int t_count = sample.length();
    std::vector<int> train, test;
    if (mode == Protocol::interpolation_blocks) {
        const int third = t_count / 3;
        if (third < 1)
            throw std::invalid_argument("split_interpolation: sample too short for thirds");
        for (int t = 0; t < t_count; ++t) {
            if (t < third || t >= t_count - third)
                train.push_back(t);
            else
                test.push_back(t);
        }
    } else if (mode == Protocol::interpolation_sparse) {
        if (sparse_stride < 2)
            throw std::invalid_argument("split_interpolation: sparse_stride must be >= 2");
        if (t_count < sparse_stride + 1)
            throw std::invalid_argument("split_interpolation: sample too short for sparse split");
        for (int t = 0; t < t_count; ++t) {
            if (t % sparse_stride == 0)
                train.push_back(t);
            else
                test.push_back(t);
        }
    } else {
        throw std::invalid_argument("split_interpolation: not an interpolation protocol");
    }
    return {train, test};
}

/// Dataset-level split for any protocol; interpolation protocols split the
/// held-out sample internally and keep the others fully in train.
inline SplitIndex dataset_split(const std::vector<SampleSequence>& samples, Protocol protocol,
                                int held_out = -1, int sparse_stride = 10) {
    if (samples.empty()) throw std::invalid_argument("dataset_split: no samples");
    if (protocol == Protocol::over_sample) return split_over_sample(samples, held_out);
    if (protocol == Protocol::over_time) return split_over_time(samples, held_out);
    const int held = detail::resolve_held_out(samples.size(), held_out);
    SplitIndex split;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (static_cast<int>(i) == held) {
            auto [train, test] = split_interpolation(samples[i], protocol, sparse_stride);
            split.train[samples[i].sample_id] = std::move(train);
            split.test[samples[i].sample_id] = std::move(test);
        } else {
            split.train[samples[i].sample_id] = detail::iota_steps(0, samples[i].length());
        }
    }
    return split;
}

// ---- dataset organization ----

/// Fracture samples sorted by id plus their optional "<id>_stress" partners.
struct DatasetView {
    std::vector<SampleSequence> fracture;
    std::map<std::string, SampleSequence> stress;  // keyed by the fracture id

    const SampleSequence& fracture_by_id(const std::string& id) const {
        for (const auto& s : fracture)
            if (s.sample_id == id) return s;
        throw std::invalid_argument("unknown fracture sample " + id);
    }
};

inline DatasetView partition_dataset(std::vector<SampleSequence> samples) {
    DatasetView view;
    for (auto& s : samples) {
        s.validate();
        if (s.kind() == ChannelKind::fracture_damage) {
            view.fracture.push_back(std::move(s));
        } else {
            const std::string suffix = "_stress";
            if (s.sample_id.size() <= suffix.size() ||
                s.sample_id.compare(s.sample_id.size() - suffix.size(), suffix.size(), suffix) != 0)
                throw std::runtime_error("stress sample id must end in _stress: " + s.sample_id);
            view.stress[s.sample_id.substr(0, s.sample_id.size() - suffix.size())] = std::move(s);
        }
    }
    std::sort(view.fracture.begin(), view.fracture.end(),
              [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    if (view.fracture.empty()) throw std::runtime_error("dataset has no fracture samples");
    for (const auto& [base_id, seq] : view.stress) {
        bool found = false;
        for (const auto& f : view.fracture) found = found || f.sample_id == base_id;
        if (!found)
            throw std::runtime_error("stress sample " + seq.sample_id + " has no fracture partner");
    }
    return view;
}

/// Min-max stats of one channel kind computed from training frames only.
inline NormStats train_split_stats(const DatasetView& view, const SplitIndex& split,
                                   ChannelKind kind) {
    std::vector<SampleSequence> subset;
    for (const auto& f : view.fracture) {
        const auto it = split.train.find(f.sample_id);
        if (it == split.train.end() || it->second.empty()) continue;
        const SampleSequence* source = &f;
        if (kind == ChannelKind::cauchy_stress) {
            const auto st = view.stress.find(f.sample_id);
            if (st == view.stress.end())
                throw std::runtime_error("no stress channels for sample " + f.sample_id +
                                         "; regenerate the dataset with stress enabled");
            source = &st->second;
        }
        SampleSequence sub;
        sub.sample_id = source->sample_id;
        for (int t : it->second) sub.frames.push_back(source->frames.at(static_cast<std::size_t>(t)));
        subset.push_back(std::move(sub));
    }
    if (subset.empty()) throw std::runtime_error("train split selects no frames");
    return compute_norm_stats(subset);
}

inline DatasetView normalize_view(const DatasetView& view, const NormStats& fracture_stats,
                                  const NormStats* stress_stats) {
    DatasetView out;
    for (const auto& f : view.fracture) out.fracture.push_back(apply_norm(f, fracture_stats));
    if (stress_stats)
        for (const auto& [id, s] : view.stress) out.stress[id] = apply_norm(s, *stress_stats);
    return out;
}

// ---- training windows ----

struct TrainWindow {
    std::string sample_id;
    int t_start = 0;   // time of the first input frame
    NdArray inputs;    // (L, C_in, H, W)
    NdArray targets;   // (L, 1, H, W)
};

namespace detail {

inline std::vector<std::pair<int, int>> contiguous_runs(const std::vector<int>& steps) {
    std::vector<std::pair<int, int>> runs;  // [first, last] inclusive
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!runs.empty() && steps[i] == runs.back().second + 1)
            runs.back().second = steps[i];
        else
            runs.emplace_back(steps[i], steps[i]);
    }
    return runs;
}

inline void copy_frame_channels(NdArray& window, int slot, const FieldFrame& frame) {
    const int c_count = frame.channels(), h = frame.height(), w = frame.width();
    for (int c = 0; c < c_count; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) window.at4(slot, c, y, x) = frame.values.at3(c, y, x);
}

inline NdArray frame_plane(const FieldFrame& frame, int channel = 0) {
    NdArray out({frame.height(), frame.width()});
    for (int y = 0; y < frame.height(); ++y)
        for (int x = 0; x < frame.width(); ++x) out.at2(y, x) = frame.values.at3(channel, y, x);
    return out;
}

}  // namespace detail

/// Sliding windows over the contiguous runs of each sample's training steps.
/// fracture_to_fracture maps frames t..t+L-1 to t+1..t+L (one step ahead);
/// cauchy_to_fracture maps stress frames to fracture frames at the same steps.
inline std::vector<TrainWindow> build_training_windows(const DatasetView& view,
                                                       const SplitIndex& split, Scenario scenario,
                                                       int window_length, int stride) {
    if (window_length < 1 || stride < 1)
        throw std::invalid_argument("build_training_windows: bad window length or stride");
    std::vector<TrainWindow> windows;
    for (const auto& f : view.fracture) {
        const auto it = split.train.find(f.sample_id);
        if (it == split.train.end() || it->second.empty()) continue;
        const SampleSequence* input_seq = &f;
        if (scenario == Scenario::cauchy_to_fracture) {
            const auto st = view.stress.find(f.sample_id);
            if (st == view.stress.end())
                throw std::runtime_error("no stress channels for sample " + f.sample_id);
            input_seq = &st->second;
            if (input_seq->length() != f.length())
                throw std::runtime_error("stress/fracture length mismatch for " + f.sample_id);
        }
        const int c_in = input_seq->channels();
        const int h = f.height(), w = f.width();
        const int target_offset = scenario == Scenario::fracture_to_fracture ? 1 : 0;
        for (const auto& [run_first, run_last] : detail::contiguous_runs(it->second)) {
            const int last_start = run_last - window_length + 1 - target_offset;
            for (int t = run_first; t <= last_start; t += stride) {
                TrainWindow win;
                win.sample_id = f.sample_id;
                win.t_start = t;
                win.inputs = NdArray({window_length, c_in, h, w});
                win.targets = NdArray({window_length, 1, h, w});
                for (int n = 0; n < window_length; ++n) {
                    detail::copy_frame_channels(win.inputs, n,
                                                input_seq->frames[static_cast<std::size_t>(t + n)]);
                    detail::copy_frame_channels(
                        win.targets, n,
                        f.frames[static_cast<std::size_t>(t + n + target_offset)]);
                }
                windows.push_back(std::move(win));
            }
        }
    }
    return windows;
}

// ---- run bookkeeping ----

inline std::string source_revision() {
    namespace fs = std::filesystem;
    fs::path dir = fs::current_path();
    for (int depth = 0; depth < 16; ++depth) {
        const fs::path head = dir / ".git" / "HEAD";
        std::error_code ec;
        if (fs::exists(head, ec)) {
            std::ifstream in(head);
            std::string line;
            std::getline(in, line);
            line = detail::trim(line);
            if (line.rfind("ref: ", 0) == 0) {
                std::ifstream ref(dir / ".git" / line.substr(5));
                std::string rev;
                if (ref && std::getline(ref, rev)) return detail::trim(rev);
                return "unknown";
            }
            return line.empty() ? "unknown" : line;
        }
        if (!dir.has_parent_path() || dir.parent_path() == dir) break;
        dir = dir.parent_path();
    }
    return "unknown";
}

inline nlohmann::json loss_report_json(const LossReport& r) {
    return {{"mse", r.mse}, {"perceptual", r.perceptual}, {"optical", r.optical},
            {"total", r.total}};
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

struct EpochLog {
    int epoch = 0;
    LossReport train;
    double validation = 0.0;
};

struct TrainOutcome {
    std::string run_id;
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint_path;
    std::filesystem::path manifest_path;
    std::vector<EpochLog> epochs;
    double best_validation = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    nlohmann::json manifest;
};

namespace detail {

inline std::string config_fingerprint(const ExperimentConfig& cfg, const std::string& dataset_id) {
    // filesystem locations do not change what the run computes
    nlohmann::json j = cfg.to_json();
    j["experiment"].erase("data_dir");
    j["experiment"].erase("out_dir");
    const std::string text = j.dump() + "|" + dataset_id;
    return to_hex(fnv1a64(text.data(), text.size())).substr(0, 8);
}

/// Loss of one already-predicted window, evaluated off any training tape.
inline double window_loss_value(const NdArray& pred, const NdArray& targets,
                                const RegionMask& mask, const TotalLossParams& params) {
    Tape t;
    return t.scalar_value(total_loss_taped(t, t.put(pred), targets, mask, params));
}

}  // namespace detail

/// Full training run: split, normalize, window, optimize, checkpoint the best
/// validation state, and write manifest plus per-epoch log.
inline TrainOutcome train_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (cfg.data_dir.empty())
        throw std::runtime_error("no dataset directory: set data_dir or HOSSNET_DATA_DIR");
    const auto t_begin = std::chrono::steady_clock::now();

    const DatasetView raw = partition_dataset(load_dataset(cfg.data_dir));
    const std::string data_hash = dataset_hash(cfg.data_dir);
    const SplitIndex split =
        dataset_split(raw.fracture, cfg.protocol, cfg.held_out, cfg.sparse_stride);
    assert_no_leakage(split);

    const auto [model_cfg, weights] = apply_variant(cfg);
    const NormStats fracture_stats = train_split_stats(raw, split, ChannelKind::fracture_damage);
    std::optional<NormStats> stress_stats;
    if (cfg.scenario == Scenario::cauchy_to_fracture)
        stress_stats = train_split_stats(raw, split, ChannelKind::cauchy_stress);
    const DatasetView data =
        normalize_view(raw, fracture_stats, stress_stats ? &*stress_stats : nullptr);

    std::vector<TrainWindow> windows = build_training_windows(
        data, split, cfg.scenario, model_cfg.window_length, cfg.window_stride);
    if (windows.empty())
        throw std::runtime_error(
            "no training windows: shorten window_length, reduce stride, or pick a protocol with "
            "longer contiguous training runs");
    std::vector<RegionMask> masks;
    masks.reserve(windows.size());
    for (const auto& w : windows) masks.push_back(default_subregion_mask(w.targets, cfg.mask_dilation));

    // last fraction of the window list validates; at least one window trains
    int n_val = static_cast<int>(std::floor(static_cast<double>(windows.size()) *
                                            cfg.validation_fraction));
    n_val = std::min<int>(n_val, static_cast<int>(windows.size()) - 1);
    const int n_train = static_cast<int>(windows.size()) - n_val;

    std::unique_ptr<FeatureExtractor> extractor;
    if (weights.alpha_perc > 0.0)
        extractor = make_feature_extractor(cfg.extractor, cfg.extractor_seed, cfg.extractor_depth,
                                           cfg.extractor_width);
    TotalLossParams loss_params;
    loss_params.weights = weights;
    loss_params.flow = cfg.flow;
    loss_params.magnitude_floor = cfg.magnitude_floor;
    loss_params.extractor = extractor.get();

    HossnetModel model(model_cfg, cfg.seed);
    AdamParams adam;
    adam.lr = cfg.learning_rate;
    const std::vector<std::string> param_names = [&] {
        std::vector<std::string> names;
        for (const auto& [name, p] : model.parameters()) names.push_back(name);
        return names;
    }();

    const std::string run_id = "train-" + to_string(cfg.variant) + "-" + to_string(cfg.protocol) +
                               "-" + (cfg.scenario == Scenario::cauchy_to_fracture ? "c2f" : "f2f") +
                               "-s" + std::to_string(cfg.seed) + "-" +
                               detail::config_fingerprint(cfg, data_hash);
    TrainOutcome outcome;
    outcome.run_id = run_id;
    outcome.run_dir = fs::path(cfg.out_dir) / run_id;
    fs::create_directories(outcome.run_dir);
    outcome.checkpoint_path = outcome.run_dir / "checkpoint_best.ckpt";
    outcome.manifest_path = outcome.run_dir / "manifest.json";

    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch));
        for (int i = n_train - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);

        LossReport epoch_report;
        int done = 0;
        while (done < n_train) {
            const int batch_n = std::min(cfg.batch_size, n_train - done);
            std::map<std::string, NdArray> grads;
            for (int b = 0; b < batch_n; ++b) {
                const int wi = order[static_cast<std::size_t>(done + b)];
                const TrainWindow& win = windows[static_cast<std::size_t>(wi)];
                Tape tape;
                HossnetModel::Taped taped(tape, model, /*training=*/true);
                Var pred = taped.forward(tape.put(win.inputs));
                LossReport report;
                Var loss = total_loss_taped(tape, pred, win.targets,
                                            masks[static_cast<std::size_t>(wi)], loss_params,
                                            &report);
                if (!std::isfinite(report.total))
                    throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", window " +
                                             win.sample_id + "@" + std::to_string(win.t_start));
                tape.backward(loss);
                for (const auto& name : param_names) {
                    const NdArray& g = tape.grad(taped.param_var(name));
                    auto it = grads.find(name);
                    if (it == grads.end()) {
                        grads.emplace(name, g);
                    } else {
                        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
                    }
                }
                epoch_report.mse += report.mse;
                epoch_report.perceptual += report.perceptual;
                epoch_report.optical += report.optical;
                epoch_report.total += report.total;
            }
            for (auto& [name, g] : grads)
                for (std::size_t i = 0; i < g.size(); ++i) g[i] /= static_cast<double>(batch_n);
            model.apply_gradients(grads, adam);
            done += batch_n;
        }
        epoch_report.mse /= n_train;
        epoch_report.perceptual /= n_train;
        epoch_report.optical /= n_train;
        epoch_report.total /= n_train;

        // validation in eval mode; falls back to train windows when the split
        // is too small to spare any
        double val_total = 0.0;
        const int val_begin = n_val > 0 ? n_train : 0;
        const int val_count = n_val > 0 ? n_val : n_train;
        for (int i = 0; i < val_count; ++i) {
            const TrainWindow& win = windows[static_cast<std::size_t>(val_begin + i)];
            const NdArray pred = model.forward(win.inputs, /*training=*/false);
            val_total += detail::window_loss_value(
                pred, win.targets, masks[static_cast<std::size_t>(val_begin + i)], loss_params);
        }
        val_total /= val_count;
        if (!std::isfinite(val_total))
            throw std::runtime_error("training diverged: non-finite validation loss at epoch " +
                                     std::to_string(epoch));

        outcome.epochs.push_back({epoch, epoch_report, val_total});
        if (val_total < outcome.best_validation) {
            outcome.best_validation = val_total;
            outcome.best_epoch = epoch;
            model.save_checkpoint(outcome.checkpoint_path.string());
        }
        if (log)
            (*log) << "epoch " << epoch << "/" << cfg.epochs << " train " << epoch_report.total
                   << " (mse " << epoch_report.mse << " perc " << epoch_report.perceptual
                   << " op " << epoch_report.optical << ") val " << val_total << "\n";
    }

    {
        std::ofstream log_csv(outcome.run_dir / "training_log.csv");
        log_csv << "epoch,mse,perceptual,optical,total,validation\n";
        for (const auto& e : outcome.epochs)
            log_csv << e.epoch << "," << format_double(e.train.mse) << ","
                    << format_double(e.train.perceptual) << "," << format_double(e.train.optical)
                    << "," << format_double(e.train.total) << "," << format_double(e.validation)
                    << "\n";
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin)
                            .count();
    outcome.manifest = {{"run_id", run_id},
                        {"kind", "train"},
                        {"config", cfg.to_json()},
                        {"source_revision", source_revision()},
                        {"dataset_hash", data_hash},
                        {"wall_clock_seconds", wall},
                        {"final_loss", loss_report_json(outcome.epochs.back().train)},
                        {"best_validation_total", outcome.best_validation},
                        {"best_epoch", outcome.best_epoch},
                        {"epochs_run", cfg.epochs},
                        {"n_train_windows", n_train},
                        {"n_validation_windows", n_val},
                        {"checkpoint", outcome.checkpoint_path.string()}};
    write_json_file(outcome.manifest_path, outcome.manifest);
    return outcome;
}

// ---- prediction and evaluation ----

/// Predictions for one sample's test steps, in original (denormalized) units.
struct SamplePrediction {
    std::string sample_id;
    std::map<int, NdArray> frames;  // time step -> (H, W)
    std::map<int, int> leads;       // time step -> steps past last given frame
};

namespace detail {

inline NdArray denorm_plane(const NdArray& plane, const NormStats& stats) {
    NdArray out = plane;
    const double lo = stats.ch_min.at(0), hi = stats.ch_max.at(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * (hi - lo) + lo;
    return out;
}

/// Autoregressive rollout for fracture inputs: the window advances on the
/// model's own (optionally direction-corrected) outputs except at steps whose
/// ground truth is known, which are fed back verbatim (teacher forcing).
inline SamplePrediction rollout_fracture(HossnetModel& model, const SampleSequence& fracture_norm,
                                         const std::vector<int>& train_steps,
                                         const std::vector<int>& test_steps,
                                         bool positive_direction, std::ostream* log) {
    const int window_length = model.config().window_length;
    const int h = fracture_norm.height(), w = fracture_norm.width();
    const std::set<int> known(train_steps.begin(), train_steps.end());
    const int first_test = test_steps.front();

    // context: the L frames before the first test step when fully known,
    // otherwise the first L frames of the sample as the initial condition
    int ctx_begin = first_test - window_length;
    bool ctx_known = ctx_begin >= 0;
    for (int t = ctx_begin; ctx_known && t < first_test; ++t) ctx_known = known.count(t) > 0;
    if (!ctx_known) {
        ctx_begin = 0;
        if (fracture_norm.length() < window_length + 1)
            throw std::runtime_error("sample too short for rollout with window_length " +
                                     std::to_string(window_length));
        int consumed = 0;
        for (int t = ctx_begin; t < ctx_begin + window_length; ++t) consumed += !known.count(t);
        if (log && consumed > 0)
            (*log) << "rollout seeds on the first " << window_length << " frames of "
                   << fracture_norm.sample_id << "; " << consumed
                   << " test steps are consumed as givens\n";
    }
    const int ctx_end = ctx_begin + window_length - 1;

    std::deque<NdArray> window;
    for (int t = ctx_begin; t <= ctx_end; ++t)
        window.push_back(frame_plane(fracture_norm.frames[static_cast<std::size_t>(t)]));
    NdArray prev = window.back();
    int last_given = ctx_end;

    SamplePrediction out;
    out.sample_id = fracture_norm.sample_id;
    const std::set<int> test(test_steps.begin(), test_steps.end());
    const int last_test = test_steps.back();
    for (int t = ctx_end + 1; t <= last_test; ++t) {
        if (known.count(t)) {
            window.push_back(frame_plane(fracture_norm.frames[static_cast<std::size_t>(t)]));
            window.pop_front();
            prev = window.back();
            last_given = t;
            continue;
        }
        NdArray inputs({window_length, 1, h, w});
        for (int n = 0; n < window_length; ++n)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    inputs.at4(n, 0, y, x) = window[static_cast<std::size_t>(n)].at2(y, x);
        const NdArray pred_all = model.forward(inputs, /*training=*/false);
        NdArray pred({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) pred.at2(y, x) = pred_all.at4(window_length - 1, 0, y, x);
        if (positive_direction)
            for (std::size_t i = 0; i < pred.size(); ++i)
                pred[i] = std::max(pred[i], prev[i]);
        if (test.count(t)) {
            out.frames[t] = pred;
            out.leads[t] = t - last_given;
        }
        window.push_back(pred);
        window.pop_front();
        prev = std::move(pred);
    }
    return out;
}

/// Direct mapping for stress inputs: non-overlapping windows tile the whole
/// timeline, predictions are kept for test steps only, then the positive
/// direction pass runs over the predicted subsequence.
inline SamplePrediction map_stress(HossnetModel& model, const SampleSequence& fracture_norm,
                                   const SampleSequence& stress_norm,
                                   const std::vector<int>& train_steps,
                                   const std::vector<int>& test_steps, bool positive_direction) {
    const int window_length = model.config().window_length;
    const int h = fracture_norm.height(), w = fracture_norm.width();
    const int t_count = stress_norm.length();
    if (t_count < window_length)
        throw std::runtime_error("sample too short for window_length " +
                                 std::to_string(window_length));
    const std::set<int> test(test_steps.begin(), test_steps.end());

    SamplePrediction out;
    out.sample_id = fracture_norm.sample_id;
    std::vector<int> starts;
    for (int s = 0; s + window_length <= t_count; s += window_length) starts.push_back(s);
    if (starts.empty() || starts.back() + window_length < t_count)
        starts.push_back(t_count - window_length);
    for (int s : starts) {
        bool wanted = false;
        for (int n = 0; n < window_length; ++n)
            wanted = wanted || (test.count(s + n) && !out.frames.count(s + n));
        if (!wanted) continue;
        NdArray inputs({window_length, stress_norm.channels(), h, w});
        for (int n = 0; n < window_length; ++n)
            copy_frame_channels(inputs, n, stress_norm.frames[static_cast<std::size_t>(s + n)]);
        const NdArray pred_all = model.forward(inputs, /*training=*/false);
        for (int n = 0; n < window_length; ++n) {
            const int t = s + n;
            if (!test.count(t) || out.frames.count(t)) continue;
            NdArray pred({h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) pred.at2(y, x) = pred_all.at4(n, 0, y, x);
            out.frames[t] = std::move(pred);
            int last_known = -1;
            for (int k : train_steps)
                if (k < t) last_known = std::max(last_known, k);
            out.leads[t] = t - last_known;  // lead = t + 1 when nothing is known
        }
    }
    if (positive_direction && !out.frames.empty()) {
        // running max over predictions, re-anchored on the latest known frame
        // so interleaved observations keep tightening the bound
        NdArray floor_plane;
        bool have_floor = false;
        int folded_known = -1;
        for (auto& [t, frame] : out.frames) {
            int latest = folded_known;
            for (int k : train_steps)
                if (k < t) latest = std::max(latest, k);
            if (latest > folded_known) {
                NdArray known =
                    frame_plane(fracture_norm.frames[static_cast<std::size_t>(latest)]);
                if (!have_floor) {
                    floor_plane = std::move(known);
                    have_floor = true;
                } else {
                    for (std::size_t i = 0; i < floor_plane.size(); ++i)
                        floor_plane[i] = std::max(floor_plane[i], known[i]);
                }
                folded_known = latest;
            }
            if (have_floor)
                for (std::size_t i = 0; i < frame.size(); ++i)
                    frame[i] = std::max(frame[i], floor_plane[i]);
            floor_plane = frame;
            have_floor = true;
        }
    }
    return out;
}

}  // namespace detail

/// Predictions for every sample that has test steps, in original units.
inline std::vector<SamplePrediction> predict_test_steps(HossnetModel& model,
                                                        const DatasetView& normalized,
                                                        const SplitIndex& split,
                                                        const NormStats& fracture_stats,
                                                        const ExperimentConfig& cfg,
                                                        std::ostream* log = nullptr) {
    std::vector<SamplePrediction> predictions;
    for (const auto& f : normalized.fracture) {
        const auto test_it = split.test.find(f.sample_id);
        if (test_it == split.test.end() || test_it->second.empty()) continue;
        static const std::vector<int> kNoSteps;
        const auto train_it = split.train.find(f.sample_id);
        const std::vector<int>& train_steps =
            train_it == split.train.end() ? kNoSteps : train_it->second;

        SamplePrediction pred;
        if (cfg.scenario == Scenario::fracture_to_fracture) {
            pred = detail::rollout_fracture(model, f, train_steps, test_it->second,
                                            cfg.positive_direction, log);
        } else {
            const auto st = normalized.stress.find(f.sample_id);
            if (st == normalized.stress.end())
                throw std::runtime_error("no stress channels for sample " + f.sample_id);
            pred = detail::map_stress(model, f, st->second, train_steps, test_it->second,
                                      cfg.positive_direction);
        }
        for (auto& [t, frame] : pred.frames) frame = detail::denorm_plane(frame, fracture_stats);
        predictions.push_back(std::move(pred));
    }
    if (predictions.empty()) throw std::runtime_error("no sample has test steps to predict");
    return predictions;
}

/// Metric records for one sample's predictions against its ground truth, with
/// the WFE dynamic region detected from truth over the evaluated span.
inline std::vector<EvalRecord> build_eval_records(const SampleSequence& truth,
                                                  const SamplePrediction& pred,
                                                  const SsimParams& ssim_params = {},
                                                  double dynamic_threshold = 1e-4,
                                                  int dynamic_dilation = 2) {
    if (pred.frames.empty()) throw std::invalid_argument("build_eval_records: no predictions");
    const int t_first = pred.frames.begin()->first, t_last = pred.frames.rbegin()->first;
    RegionMask dynamic(truth.height(), truth.width(), MaskKind::dynamic);
    if (t_first < t_last)
        dynamic = detect_dynamic_region(truth, t_first, t_last, dynamic_threshold, dynamic_dilation);

    std::vector<EvalRecord> records;
    for (const auto& [t, frame] : pred.frames) {
        if (t < 0 || t >= truth.length())
            throw std::invalid_argument("build_eval_records: prediction outside the sequence");
        const NdArray truth_plane =
            detail::frame_plane(truth.frames[static_cast<std::size_t>(t)]);
        EvalRecord r;
        r.sample_id = truth.sample_id;
        r.lead_time = pred.leads.at(t);
        r.rmse = rmse(frame, truth_plane);
        r.ssim = ssim(frame, truth_plane, ssim_params);
        r.wfe = wfe(frame, truth_plane, dynamic);
        r.validate();
        records.push_back(std::move(r));
    }
    return records;
}

struct EvalOutcome {
    std::string run_id;
    std::filesystem::path run_dir;
    std::filesystem::path records_path;
    std::filesystem::path summary_path;
    std::filesystem::path manifest_path;
    std::vector<EvalRecord> records;
    double mean_rmse = 0.0, mean_ssim = 0.0, mean_wfe = 0.0;  // first summary_steps leads
    nlohmann::json manifest;
};

namespace detail {

inline std::string file_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<char> buf(1 << 16);
    std::uint64_t h = 0xcbf29ce484222325ull;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(buf.data(), static_cast<std::size_t>(in.gcount()), h);
    }
    return to_hex(h).substr(0, 8);
}

}  // namespace detail

/// Held-out evaluation: rollout or stress mapping, metrics per lead time,
/// summary and curve tables, triptych images, and a manifest tying them all
/// to one deterministic run id.
inline EvalOutcome evaluate_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& checkpoint,
                                       std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (cfg.data_dir.empty())
        throw std::runtime_error("no dataset directory: set data_dir or HOSSNET_DATA_DIR");
    const auto t_begin = std::chrono::steady_clock::now();

    const DatasetView raw = partition_dataset(load_dataset(cfg.data_dir));
    const std::string data_hash = dataset_hash(cfg.data_dir);
    const SplitIndex split =
        dataset_split(raw.fracture, cfg.protocol, cfg.held_out, cfg.sparse_stride);
    assert_no_leakage(split);

    const ModelConfig model_cfg = HossnetModel::peek_checkpoint_config(checkpoint.string());
    if (!(model_cfg == apply_variant(cfg).first))
        throw std::runtime_error(
            "checkpoint model config does not match this experiment's variant and model "
            "settings; evaluate with the config the checkpoint was trained under");
    HossnetModel model(model_cfg, cfg.seed);
    model.load_checkpoint(checkpoint.string());

    const NormStats fracture_stats = train_split_stats(raw, split, ChannelKind::fracture_damage);
    std::optional<NormStats> stress_stats;
    if (cfg.scenario == Scenario::cauchy_to_fracture)
        stress_stats = train_split_stats(raw, split, ChannelKind::cauchy_stress);
    const DatasetView data =
        normalize_view(raw, fracture_stats, stress_stats ? &*stress_stats : nullptr);

    const auto predictions = predict_test_steps(model, data, split, fracture_stats, cfg, log);

    EvalOutcome out;
    out.run_id = "eval-" + detail::file_fingerprint(checkpoint) + "-" +
                 detail::config_fingerprint(cfg, data_hash);
    out.run_dir = fs::path(cfg.out_dir) / out.run_id;
    fs::create_directories(out.run_dir);

    for (const auto& pred : predictions) {
        const SampleSequence& truth = raw.fracture_by_id(pred.sample_id);
        auto records = build_eval_records(truth, pred);
        out.records.insert(out.records.end(), records.begin(), records.end());

        for (int step : cfg.triptych_steps) {
            for (const auto& [t, frame] : pred.frames) {
                if (pred.leads.at(t) != step) continue;
                const NdArray truth_plane =
                    detail::frame_plane(truth.frames[static_cast<std::size_t>(t)]);
                write_triptych_png(out.run_dir / ("triptych_" + pred.sample_id + "_lead" +
                                                  std::to_string(step) + ".png"),
                                   frame, truth_plane, "LEAD " + std::to_string(step), out.run_id);
                break;
            }
        }
    }

    out.records_path = out.run_dir / "records.csv";
    write_eval_csv(out.records_path, out.records, out.run_id);

    // summary over the first summary_steps leads, overall and per sample
    out.summary_path = out.run_dir / "summary.csv";
    {
        std::ofstream sum(out.summary_path);
        sum << "# manifest: " << out.run_id << "\n";
        sum << "scope,n_records,rmse,ssim,wfe\n";
        auto emit = [&](const std::string& scope, auto pred_fn) {
            double r = 0.0, s = 0.0, w = 0.0;
            int n = 0;
            for (const auto& rec : out.records)
                if (rec.lead_time <= cfg.summary_steps && pred_fn(rec)) {
                    r += rec.rmse;
                    s += rec.ssim;
                    w += rec.wfe;
                    ++n;
                }
            if (n == 0) return std::tuple(0.0, 0.0, 0.0, 0);
            r /= n;
            s /= n;
            w /= n;
            sum << scope << "," << n << "," << format_double(r) << "," << format_double(s) << ","
                << format_double(w) << "\n";
            return std::tuple(r, s, w, n);
        };
        auto [r, s, w, n] = emit("all", [](const EvalRecord&) { return true; });
        out.mean_rmse = r;
        out.mean_ssim = s;
        out.mean_wfe = w;
        std::set<std::string> ids;
        for (const auto& rec : out.records) ids.insert(rec.sample_id);
        for (const auto& id : ids)
            emit("sample:" + id, [&](const EvalRecord& rec) { return rec.sample_id == id; });
    }

    // temporal degradation curves, one file per metric plus a combined table
    {
        std::ofstream curves_csv(out.run_dir / "curves.csv");
        curves_csv << "# manifest: " << out.run_id << "\n";
        curves_csv << "metric,lead_time,mean,count\n";
        for (MetricKind metric : {MetricKind::rmse, MetricKind::ssim, MetricKind::wfe}) {
            const auto curve =
                temporal_curve(out.records, metric, cfg.curve_interval, cfg.curve_max_lead);
            CurveSeries series;
            series.label = to_string(metric);
            for (const auto& p : curve) {
                series.points.emplace_back(p.lead_time, p.mean);
                curves_csv << to_string(metric) << "," << p.lead_time << ","
                           << format_double(p.mean) << "," << p.count << "\n";
            }
            write_curves_png(out.run_dir / ("curve_" + to_string(metric) + ".png"), {series},
                             "LEAD", to_string(metric), out.run_id);
        }
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin)
                            .count();
    out.manifest_path = out.run_dir / "manifest.json";
    out.manifest = {{"run_id", out.run_id},
                    {"kind", "evaluate"},
                    {"config", cfg.to_json()},
                    {"source_revision", source_revision()},
                    {"dataset_hash", data_hash},
                    {"checkpoint", checkpoint.string()},
                    {"checkpoint_fingerprint", detail::file_fingerprint(checkpoint)},
                    {"wall_clock_seconds", wall},
                    {"n_records", out.records.size()},
                    {"summary",
                     {{"lead_cap", cfg.summary_steps},
                      {"rmse", out.mean_rmse},
                      {"ssim", out.mean_ssim},
                      {"wfe", out.mean_wfe}}}};
    write_json_file(out.manifest_path, out.manifest);
    if (log)
        (*log) << "evaluated " << out.records.size() << " steps: rmse " << out.mean_rmse
               << " ssim " << out.mean_ssim << " wfe " << out.mean_wfe << " (leads <= "
               << cfg.summary_steps << ")\n";
    return out;
}

/// Writes the predicted test-step frames of every held-out sample back out as
/// dataset samples ("<id>_pred"), preserving original units.
inline std::filesystem::path predict_experiment(const ExperimentConfig& cfg,
                                                const std::filesystem::path& checkpoint,
                                                std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (cfg.data_dir.empty())
        throw std::runtime_error("no dataset directory: set data_dir or HOSSNET_DATA_DIR");

    const DatasetView raw = partition_dataset(load_dataset(cfg.data_dir));
    const std::string data_hash = dataset_hash(cfg.data_dir);
    const SplitIndex split =
        dataset_split(raw.fracture, cfg.protocol, cfg.held_out, cfg.sparse_stride);
    assert_no_leakage(split);

    const ModelConfig model_cfg = HossnetModel::peek_checkpoint_config(checkpoint.string());
    if (!(model_cfg == apply_variant(cfg).first))
        throw std::runtime_error(
            "checkpoint model config does not match this experiment's variant and model "
            "settings; predict with the config the checkpoint was trained under");
    HossnetModel model(model_cfg, cfg.seed);
    model.load_checkpoint(checkpoint.string());

    const NormStats fracture_stats = train_split_stats(raw, split, ChannelKind::fracture_damage);
    std::optional<NormStats> stress_stats;
    if (cfg.scenario == Scenario::cauchy_to_fracture)
        stress_stats = train_split_stats(raw, split, ChannelKind::cauchy_stress);
    const DatasetView data =
        normalize_view(raw, fracture_stats, stress_stats ? &*stress_stats : nullptr);

    const auto predictions = predict_test_steps(model, data, split, fracture_stats, cfg, log);

    const std::string run_id = "predict-" + detail::file_fingerprint(checkpoint) + "-" +
                               detail::config_fingerprint(cfg, data_hash);
    const fs::path run_dir = fs::path(cfg.out_dir) / run_id;
    fs::create_directories(run_dir);
    for (const auto& pred : predictions) {
        SampleSequence seq;
        seq.sample_id = pred.sample_id + "_pred";
        int slot = 0;
        for (const auto& [t, frame] : pred.frames) {
            FieldFrame f;
            f.channel_kind = ChannelKind::fracture_damage;
            f.time_index = slot++;
            f.values = NdArray({1, frame.dim(0), frame.dim(1)});
            for (std::size_t i = 0; i < frame.size(); ++i) f.values[i] = frame[i];
            seq.metadata["source_step_" + std::to_string(f.time_index)] = t;
            seq.frames.push_back(std::move(f));
        }
        save_sample(run_dir, seq, std::nullopt);
        if (log) (*log) << "wrote " << seq.sample_id << " (" << seq.length() << " frames)\n";
    }
    nlohmann::json manifest = {{"run_id", run_id},
                               {"kind", "predict"},
                               {"config", cfg.to_json()},
                               {"source_revision", source_revision()},
                               {"dataset_hash", data_hash},
                               {"checkpoint", checkpoint.string()},
                               {"n_samples", predictions.size()}};
    write_json_file(run_dir / "manifest.json", manifest);
    return run_dir;
}

/// Synthesizes the benchmark corpus (optionally with stress partners) into a
/// dataset directory.
inline std::filesystem::path generate_data(const ExperimentConfig& cfg,
                                           std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    if (cfg.data_dir.empty())
        throw std::runtime_error("no dataset directory: set data_dir or HOSSNET_DATA_DIR");
    const fs::path dir(cfg.data_dir);
    fs::create_directories(dir);
    auto samples = build_benchmark_set(cfg.datagen.n_samples, cfg.datagen.crack_spec());
    std::vector<SampleSequence> all = samples;
    if (cfg.datagen.with_stress)
        for (const auto& s : samples) all.push_back(derive_stress_channels(s));
    save_dataset(dir, all);
    if (log)
        (*log) << "wrote " << all.size() << " samples (" << samples.size() << " fracture) to "
               << dir.string() << "\nhash " << dataset_hash(dir) << "\n";
    return dir;
}

/// Cross-run comparison: merges several evaluation record CSVs into one
/// summary table and one curve figure per metric.
inline std::filesystem::path write_report(const std::vector<std::filesystem::path>& record_csvs,
                                          const std::filesystem::path& out_dir,
                                          int summary_steps = 50, int curve_interval = 2,
                                          int curve_max_lead = 60) {
    namespace fs = std::filesystem;
    if (record_csvs.empty()) throw std::invalid_argument("write_report: no input CSVs");
    fs::create_directories(out_dir);

    struct Input {
        std::string manifest;
        std::vector<EvalRecord> records;
    };
    std::vector<Input> inputs;
    for (const auto& path : record_csvs) {
        Input in;
        in.records = read_eval_csv(path, &in.manifest);
        if (in.records.empty()) throw std::runtime_error("no records in " + path.string());
        if (in.manifest.empty()) in.manifest = path.stem().string();
        inputs.push_back(std::move(in));
    }

    std::string combined_ids;
    for (const auto& in : inputs) combined_ids += in.manifest + ";";
    const std::string report_id =
        "report-" + to_hex(fnv1a64(combined_ids.data(), combined_ids.size())).substr(0, 8);

    {
        std::ofstream sum(out_dir / "report_summary.csv");
        sum << "# manifest: " << report_id << "\n";
        sum << "run,n_records,rmse,ssim,wfe\n";
        for (const auto& in : inputs) {
            double r = 0.0, s = 0.0, w = 0.0;
            int n = 0;
            for (const auto& rec : in.records)
                if (rec.lead_time <= summary_steps) {
                    r += rec.rmse;
                    s += rec.ssim;
                    w += rec.wfe;
                    ++n;
                }
            if (n > 0) {
                r /= n;
                s /= n;
                w /= n;
            }
            sum << in.manifest << "," << n << "," << format_double(r) << "," << format_double(s)
                << "," << format_double(w) << "\n";
        }
    }
    for (MetricKind metric : {MetricKind::rmse, MetricKind::ssim, MetricKind::wfe}) {
        std::vector<CurveSeries> series;
        for (const auto& in : inputs) {
            CurveSeries s;
            s.label = in.manifest.substr(0, 18);
            for (const auto& p : temporal_curve(in.records, metric, curve_interval, curve_max_lead))
                s.points.emplace_back(p.lead_time, p.mean);
            series.push_back(std::move(s));
        }
        write_curves_png(out_dir / ("report_" + to_string(metric) + ".png"), series, "LEAD",
                         to_string(metric), report_id);
    }
    return out_dir;
}

}  // namespace hossnet

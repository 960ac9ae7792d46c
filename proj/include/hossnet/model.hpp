#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hossnet/ad.hpp"
#include "hossnet/tensor.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

enum class OutputActivation { sigmoid, none };
enum class SkipMerge { add, concat };
enum class UpsampleMode { nearest, transposed };

struct ModelConfig {
    int in_channels = 1;
    int base_width = 64;
    int n_res_blocks = 3;
    int latent_state_size = 64;
    int window_length = 5;
    OutputActivation output_activation = OutputActivation::sigmoid;
    bool use_rtl = true;
    SkipMerge skip_merge = SkipMerge::add;
    UpsampleMode upsample_mode = UpsampleMode::nearest;

    void validate() const {
        if (in_channels != 1 && in_channels != 3)
            throw std::invalid_argument("ModelConfig: in_channels must be 1 or 3");
        if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be >= 1");
        if (n_res_blocks < 0) throw std::invalid_argument("ModelConfig: n_res_blocks must be >= 0");
        if (latent_state_size < 1)
            throw std::invalid_argument("ModelConfig: latent_state_size must be >= 1");
        if (window_length < 1)
            throw std::invalid_argument("ModelConfig: window_length must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"in_channels", in_channels},
                {"base_width", base_width},
                {"n_res_blocks", n_res_blocks},
                {"latent_state_size", latent_state_size},
                {"window_length", window_length},
                {"output_activation", output_activation == OutputActivation::sigmoid ? "sigmoid" : "none"},
                {"use_rtl", use_rtl},
                {"skip_merge", skip_merge == SkipMerge::add ? "add" : "concat"},
                {"upsample_mode", upsample_mode == UpsampleMode::nearest ? "nearest" : "transposed"}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.in_channels = j.at("in_channels").get<int>();
        c.base_width = j.at("base_width").get<int>();
        c.n_res_blocks = j.at("n_res_blocks").get<int>();
        c.latent_state_size = j.at("latent_state_size").get<int>();
        c.window_length = j.at("window_length").get<int>();
        const std::string act = j.at("output_activation").get<std::string>();
        if (act == "sigmoid") c.output_activation = OutputActivation::sigmoid;
        else if (act == "none") c.output_activation = OutputActivation::none;
        else throw std::invalid_argument("ModelConfig: unknown output_activation " + act);
        c.use_rtl = j.at("use_rtl").get<bool>();
        const std::string merge = j.at("skip_merge").get<std::string>();
        if (merge == "add") c.skip_merge = SkipMerge::add;
        else if (merge == "concat") c.skip_merge = SkipMerge::concat;
        else throw std::invalid_argument("ModelConfig: unknown skip_merge " + merge);
        const std::string up = j.at("upsample_mode").get<std::string>();
        if (up == "nearest") c.upsample_mode = UpsampleMode::nearest;
        else if (up == "transposed") c.upsample_mode = UpsampleMode::transposed;
        else throw std::invalid_argument("ModelConfig: unknown upsample_mode " + up);
        c.validate();
        return c;
    }

    bool operator==(const ModelConfig& o) const { return to_json() == o.to_json(); }
};

/// Encoder output per window: states laid out (L, C, H', W').
struct LatentSequence {
    NdArray states;
};

struct AdamParams {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

/// Encoder / recurrent-transition / decoder network over frame windows.
///
/// Data layout throughout is (L, C, H, W) with the window's time axis first.
/// Batch-norm statistics are computed per window over (L, H, W), so a batch
/// of windows forwards identically whether processed together or one by one.
class HossnetModel {
public:
    HossnetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        build_parameters(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::map<std::string, NdArray>& parameters() const { return params_; }
    const std::map<std::string, NdArray>& buffers() const { return buffers_; }

    /// Mutable access for weight surgery (ablations, tests).
    NdArray& parameter(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::logic_error("unknown parameter " + name);
        return it->second;
    }

    /// Copies weights and batch-norm buffers from a same-config model.
    void copy_state_from(const HossnetModel& other) {
        if (!(other.cfg_ == cfg_))
            throw std::invalid_argument("copy_state_from: config mismatch");
        params_ = other.params_;
        buffers_ = other.buffers_;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p.size();
        return n;
    }

    // ---- taped forward ----

    /// Puts every parameter on the tape as a leaf and exposes the network as
    /// tape ops. One instance per window; read gradients back via param_var.
    class Taped {
    public:
        Taped(Tape& t, HossnetModel& m, bool training) : t_(t), m_(m), training_(training) {
            for (const auto& [name, value] : m.params_) vars_[name] = t.put(value);
        }

        Var param_var(const std::string& name) const {
            auto it = vars_.find(name);
            if (it == vars_.end()) throw std::logic_error("unknown parameter " + name);
            return it->second;
        }

        /// (L,Cin,H,W) -> latent (L,bw,H/2,W/2); skip_out gets the pre-pool
        /// activation (L,bw,H,W).
        Var encode(Var x, Var* skip_out) {
            const NdArray& vx = t_.value(x);
            if (vx.ndim() != 4 || vx.dim(1) != m_.cfg_.in_channels)
                throw std::invalid_argument("encode: expected (L," +
                                            std::to_string(m_.cfg_.in_channels) + ",H,W), got " +
                                            vx.shape_string());
            if (vx.dim(2) % 2 != 0 || vx.dim(3) % 2 != 0)
                throw std::invalid_argument("encode: H and W must be even, got " +
                                            vx.shape_string());
            Var h = t_.relu(conv(x, "enc.conv_in"));
            h = res_stage(h, "enc.stage1");
            if (skip_out) *skip_out = h;
            h = t_.maxpool2(h);
            h = t_.relu(conv(h, "enc.conv_mid"));
            h = res_stage(h, "enc.stage2");
            h = t_.relu(conv(h, "enc.conv_out"));
            return h;
        }

        /// Per-pixel LSTM along the window axis, zero initial state. A shared
        /// linear projection restores the channel width when the LSTM state
        /// size differs from it, keeping output shape equal to input shape.
        Var rtl_step(Var latent) {
            const NdArray& v = t_.value(latent);
            if (v.ndim() != 4) throw std::invalid_argument("rtl_step: expected (L,C,H,W)");
            const int L = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
            const int S = m_.cfg_.latent_state_size;
            const int rows = H * W;

            Var wx = param_var("rtl.wx");
            Var wh = param_var("rtl.wh");
            Var b = param_var("rtl.b");
            if (t_.value(wx).dim(0) != C)
                throw std::invalid_argument("rtl_step: latent width mismatch");

            Var h = t_.put(NdArray({rows, S}, 0.0));
            Var c = t_.put(NdArray({rows, S}, 0.0));
            std::vector<Var> out_frames;
            for (int n = 0; n < L; ++n) {
                Var x_rows = t_.frame_to_rows(latent, n);
                Var z = t_.add(t_.matmul(x_rows, wx), t_.matmul(h, wh));
                z = t_.add_rowvec(z, b);
                Var gi = t_.sigmoid(t_.slice_cols(z, 0, S));
                Var gf = t_.sigmoid(t_.slice_cols(z, S, 2 * S));
                Var gg = t_.tanh_op(t_.slice_cols(z, 2 * S, 3 * S));
                Var go = t_.sigmoid(t_.slice_cols(z, 3 * S, 4 * S));
                c = t_.add(t_.mul(gf, c), t_.mul(gi, gg));
                h = t_.mul(go, t_.tanh_op(c));
                Var out = h;
                if (S != C)
                    out = t_.add_rowvec(t_.matmul(out, param_var("rtl.proj.w")),
                                        param_var("rtl.proj.b"));
                out_frames.push_back(t_.rows_to_frame(out, H, W));
            }
            return t_.stack_frames(out_frames);
        }

        /// latent (L,bw,H/2,W/2) + skip (L,bw,H,W) -> (L,1,H,W).
        Var decode(Var latent, Var skip) {
            Var h = latent;
            if (m_.cfg_.upsample_mode == UpsampleMode::nearest) {
                h = t_.relu(conv(h, "dec.conv_pre"));
                h = t_.upsample2_nearest(h);
            } else {
                h = t_.relu(t_.conv_transpose2x2(h, param_var("dec.up.w"), param_var("dec.up.b")));
            }
            const NdArray& vh = t_.value(h);
            const NdArray& vs = t_.value(skip);
            if (vh.ndim() != 4 || vs.ndim() != 4 || vh.dim(0) != vs.dim(0) ||
                vh.dim(1) != vs.dim(1) || vh.dim(2) != vs.dim(2) || vh.dim(3) != vs.dim(3))
                throw std::invalid_argument("decode: upsampled latent " + vh.shape_string() +
                                            " does not match skip " + vs.shape_string());
            if (m_.cfg_.skip_merge == SkipMerge::add) {
                h = t_.add(h, skip);
            } else {
                h = t_.concat_channels(h, skip);
                h = t_.relu(conv(h, "dec.fuse"));
            }
            h = res_stage(h, "dec.stage");
            h = t_.relu(conv(h, "dec.conv_post"));
            h = conv(h, "dec.head");
            if (m_.cfg_.output_activation == OutputActivation::sigmoid) h = t_.sigmoid(h);
            return h;
        }

        Var forward(Var x) {
            Var skip;
            Var latent = encode(x, &skip);
            if (m_.cfg_.use_rtl) latent = rtl_step(latent);
            return decode(latent, skip);
        }

    private:
        Var conv(Var x, const std::string& prefix) {
            return t_.conv2d(x, param_var(prefix + ".w"), param_var(prefix + ".b"));
        }

        Var res_block(Var x, const std::string& prefix) {
            Var h = conv(x, prefix + ".conv");
            if (training_) {
                h = t_.batchnorm_train(h, param_var(prefix + ".bn.gamma"),
                                       param_var(prefix + ".bn.beta"), kBatchNormEps,
                                       kBatchNormMomentum,
                                       &m_.buffers_.at(prefix + ".bn.running_mean"),
                                       &m_.buffers_.at(prefix + ".bn.running_var"));
            } else {
                h = t_.batchnorm_eval(h, param_var(prefix + ".bn.gamma"),
                                      param_var(prefix + ".bn.beta"),
                                      m_.buffers_.at(prefix + ".bn.running_mean"),
                                      m_.buffers_.at(prefix + ".bn.running_var"), kBatchNormEps);
            }
            h = t_.prelu(h, param_var(prefix + ".prelu.slopes"));
            return t_.add(x, h);
        }

        Var res_stage(Var x, const std::string& prefix) {
            for (int i = 0; i < m_.cfg_.n_res_blocks; ++i)
                x = res_block(x, prefix + ".res" + std::to_string(i));
            return x;
        }

        Tape& t_;
        HossnetModel& m_;
        bool training_;
        std::map<std::string, Var> vars_;
    };

    // ---- plain (value-only) API ----

    NdArray forward(const NdArray& window, bool training = false) {
        Tape t;
        Taped tm(t, *this, training);
        return t.value(tm.forward(t.put(window)));
    }

    std::vector<NdArray> forward_batch(const std::vector<NdArray>& windows,
                                       bool training = false) {
        std::vector<NdArray> out;
        out.reserve(windows.size());
        for (const auto& w : windows) out.push_back(forward(w, training));
        return out;
    }

    LatentSequence encode(const NdArray& window, LatentSequence* skip_out = nullptr,
                          bool training = false) {
        Tape t;
        Taped tm(t, *this, training);
        Var skip;
        Var latent = tm.encode(t.put(window), &skip);
        if (skip_out) skip_out->states = t.value(skip);
        return {t.value(latent)};
    }

    LatentSequence rtl_step(const LatentSequence& latents) {
        Tape t;
        Taped tm(t, *this, false);
        return {t.value(tm.rtl_step(t.put(latents.states)))};
    }

    NdArray decode(const LatentSequence& latents, const LatentSequence& skip,
                   bool training = false) {
        Tape t;
        Taped tm(t, *this, training);
        return t.value(tm.decode(t.put(latents.states), t.put(skip.states)));
    }

    // ---- optimizer ----

    void apply_gradients(const std::map<std::string, NdArray>& grads, const AdamParams& ap) {
        ++adam_t_;
        const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(adam_t_));
        const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(adam_t_));
        for (auto& [name, p] : params_) {
            auto it = grads.find(name);
            if (it == grads.end()) throw std::logic_error("missing gradient for " + name);
            const NdArray& g = it->second;
            require_same_shape(p, g, "apply_gradients");
            NdArray& m = adam_m_.at(name);
            NdArray& v = adam_v_.at(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = ap.beta1 * m[i] + (1.0 - ap.beta1) * g[i];
                v[i] = ap.beta2 * v[i] + (1.0 - ap.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= ap.lr * mhat / (std::sqrt(vhat) + ap.eps);
            }
        }
    }

    // ---- checkpointing ----

    static constexpr const char* kCheckpointMagic = "HOSSNETCKPT1\n";

    void save_checkpoint(const std::string& path) const {
        nlohmann::json index = nlohmann::json::array();
        std::size_t offset = 0;
        auto add_entries = [&](const std::map<std::string, NdArray>& group, const char* kind) {
            for (const auto& [name, a] : group) {
                index.push_back({{"name", name},
                                 {"kind", kind},
                                 {"shape", a.shape()},
                                 {"offset", offset}});
                offset += a.size();
            }
        };
        add_entries(params_, "param");
        add_entries(buffers_, "buffer");
        nlohmann::json header = {{"config", cfg_.to_json()}, {"tensors", index}};
        const std::string hs = header.dump();

        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
        os.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
        const std::uint64_t hlen = hs.size();
        os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        auto write_group = [&](const std::map<std::string, NdArray>& group) {
            for (const auto& [name, a] : group)
                os.write(reinterpret_cast<const char*>(a.data()),
                         static_cast<std::streamsize>(a.size() * sizeof(double)));
        };
        write_group(params_);
        write_group(buffers_);
        if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
    }

    static ModelConfig peek_checkpoint_config(const std::string& path) {
        nlohmann::json header = read_checkpoint_header(path);
        return ModelConfig::from_json(header.at("config"));
    }

    /// Loads tensors from a checkpoint whose config must equal this model's.
    void load_checkpoint(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
        nlohmann::json header = read_checkpoint_header_stream(is, path);
        const ModelConfig file_cfg = ModelConfig::from_json(header.at("config"));
        if (!(file_cfg == cfg_))
            throw std::runtime_error("load_checkpoint: config mismatch in " + path);
        for (const auto& e : header.at("tensors")) {
            const std::string name = e.at("name").get<std::string>();
            const std::string kind = e.at("kind").get<std::string>();
            const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
            auto& group = kind == "param" ? params_ : buffers_;
            auto it = group.find(name);
            if (it == group.end())
                throw std::runtime_error("load_checkpoint: unexpected tensor " + name);
            if (it->second.shape() != shape)
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
            is.read(reinterpret_cast<char*>(it->second.data()),
                    static_cast<std::streamsize>(it->second.size() * sizeof(double)));
            if (!is) throw std::runtime_error("load_checkpoint: short read in " + path);
        }
    }

private:
    friend class Taped;

    static nlohmann::json read_checkpoint_header(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
        return read_checkpoint_header_stream(is, path);
    }

    static nlohmann::json read_checkpoint_header_stream(std::ifstream& is,
                                                        const std::string& path) {
        const std::size_t magic_len = std::strlen(kCheckpointMagic);
        std::string magic(magic_len, '\0');
        is.read(magic.data(), static_cast<std::streamsize>(magic_len));
        if (!is || magic != kCheckpointMagic)
            throw std::runtime_error("checkpoint: bad magic in " + path);
        std::uint64_t hlen = 0;
        is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
        std::string hs(hlen, '\0');
        is.read(hs.data(), static_cast<std::streamsize>(hlen));
        if (!is) throw std::runtime_error("checkpoint: truncated header in " + path);
        return nlohmann::json::parse(hs);
    }

    void add_param(const std::string& name, NdArray value) {
        adam_m_[name] = NdArray::zeros_like(value);
        adam_v_[name] = NdArray::zeros_like(value);
        params_[name] = std::move(value);
    }

    NdArray he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
        NdArray a(std::move(shape));
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = std_dev * rng.normal();
        return a;
    }

    void add_conv(const std::string& prefix, int c_out, int c_in, int k, Rng& rng) {
        add_param(prefix + ".w", he_normal({c_out, c_in, k, k}, c_in * k * k, rng));
        add_param(prefix + ".b", NdArray({c_out}, 0.0));
    }

    void add_res_block(const std::string& prefix, int width, Rng& rng) {
        add_conv(prefix + ".conv", width, width, 3, rng);
        add_param(prefix + ".bn.gamma", NdArray({width}, 1.0));
        add_param(prefix + ".bn.beta", NdArray({width}, 0.0));
        add_param(prefix + ".prelu.slopes", NdArray({width}, 0.25));
        buffers_[prefix + ".bn.running_mean"] = NdArray({width}, 0.0);
        buffers_[prefix + ".bn.running_var"] = NdArray({width}, 1.0);
    }

    void add_res_stage(const std::string& prefix, int width, Rng& rng) {
        for (int i = 0; i < cfg_.n_res_blocks; ++i)
            add_res_block(prefix + ".res" + std::to_string(i), width, rng);
    }

    void build_parameters(Rng& rng) {
        const int bw = cfg_.base_width;
        const int s = cfg_.latent_state_size;

        add_conv("enc.conv_in", bw, cfg_.in_channels, 3, rng);
        add_res_stage("enc.stage1", bw, rng);
        add_conv("enc.conv_mid", bw, bw, 3, rng);
        add_res_stage("enc.stage2", bw, rng);
        add_conv("enc.conv_out", bw, bw, 3, rng);

        if (cfg_.use_rtl) {
            add_param("rtl.wx", he_normal({bw, 4 * s}, bw, rng));
            add_param("rtl.wh", he_normal({s, 4 * s}, s, rng));
            NdArray b({4 * s}, 0.0);
            // forget-gate bias starts open
            for (int i = s; i < 2 * s; ++i) b[static_cast<std::size_t>(i)] = 1.0;
            add_param("rtl.b", std::move(b));
            if (s != bw) {
                add_param("rtl.proj.w", he_normal({s, bw}, s, rng));
                add_param("rtl.proj.b", NdArray({bw}, 0.0));
            }
        }

        if (cfg_.upsample_mode == UpsampleMode::nearest) {
            add_conv("dec.conv_pre", bw, bw, 3, rng);
        } else {
            add_param("dec.up.w", he_normal({bw, bw, 2, 2}, bw * 4, rng));
            add_param("dec.up.b", NdArray({bw}, 0.0));
        }
        if (cfg_.skip_merge == SkipMerge::concat) add_conv("dec.fuse", bw, 2 * bw, 3, rng);
        add_res_stage("dec.stage", bw, rng);
        add_conv("dec.conv_post", bw, bw, 3, rng);
        add_conv("dec.head", 1, bw, 1, rng);
    }

    ModelConfig cfg_;
    std::map<std::string, NdArray> params_;
    std::map<std::string, NdArray> buffers_;
    std::map<std::string, NdArray> adam_m_, adam_v_;
    long long adam_t_ = 0;
};

}  // namespace hossnet

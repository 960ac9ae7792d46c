#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hossnet/model.hpp"
#include "hossnet/util.hpp"
#include "oracles.hpp"

using namespace hossnet;

namespace {

ModelConfig tiny_config(int in_ch = 1) {
    ModelConfig c;
    c.in_channels = in_ch;
    c.base_width = 4;
    c.n_res_blocks = 1;
    c.latent_state_size = 4;
    c.window_length = 2;
    return c;
}

NdArray random_window(int l, int c, int h, int w, Rng& rng) {
    NdArray a({l, c, h, w});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform01();
    return a;
}

}  // namespace

TEST_CASE("config validation and json round-trip") {
    ModelConfig c = tiny_config();
    c.skip_merge = SkipMerge::concat;
    c.upsample_mode = UpsampleMode::transposed;
    c.output_activation = OutputActivation::none;
    ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back == c);

    ModelConfig bad = tiny_config();
    bad.in_channels = 2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tiny_config();
    bad.window_length = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("shape contract over grid sizes and input channel counts") {
    Rng rng(50);
    for (int in_ch : {1, 3})
        for (int hw : {8, 16, 32}) {
            HossnetModel model(tiny_config(in_ch), 7);
            NdArray w = random_window(2, in_ch, hw, hw, rng);
            NdArray y = model.forward(w);
            CHECK(y.dim(0) == 2);
            CHECK(y.dim(1) == 1);
            CHECK(y.dim(2) == hw);
            CHECK(y.dim(3) == hw);
            // sigmoid output strictly inside (0,1)
            CHECK(y.min_value() > 0.0);
            CHECK(y.max_value() < 1.0);
            CHECK(y.all_finite());
        }
}

TEST_CASE("odd grids are rejected") {
    HossnetModel model(tiny_config(), 7);
    Rng rng(51);
    NdArray w = random_window(2, 1, 7, 8, rng);
    CHECK_THROWS_AS(model.forward(w), std::invalid_argument);
}

TEST_CASE("encoder halves the grid, decoder restores it") {
    HossnetModel model(tiny_config(), 8);
    Rng rng(52);
    NdArray w = random_window(2, 1, 16, 16, rng);
    LatentSequence skip;
    LatentSequence latent = model.encode(w, &skip);
    CHECK(latent.states.shape_string() == "(2,4,8,8)");
    CHECK(skip.states.shape_string() == "(2,4,16,16)");
    LatentSequence after = model.rtl_step(latent);
    CHECK(after.states.shape_string() == latent.states.shape_string());
    NdArray y = model.decode(after, skip);
    CHECK(y.shape_string() == "(2,1,16,16)");
}

TEST_CASE("rtl output preserves shape when state size differs from width") {
    ModelConfig c = tiny_config();
    c.latent_state_size = 6;  // != base_width 4
    HossnetModel model(c, 9);
    Rng rng(53);
    NdArray w = random_window(2, 1, 8, 8, rng);
    LatentSequence latent = model.encode(w, nullptr);
    LatentSequence after = model.rtl_step(latent);
    CHECK(after.states.shape_string() == latent.states.shape_string());
}

TEST_CASE("rtl is order-sensitive") {
    HossnetModel model(tiny_config(), 10);
    Rng rng(54);
    NdArray w = random_window(2, 1, 8, 8, rng);
    NdArray swapped = w;
    for (std::size_t i = 0; i < 64; ++i) {
        std::swap(swapped[i], swapped[64 + i]);
    }
    NdArray a = model.forward(w);
    NdArray b = model.forward(swapped);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("window length 1 works") {
    ModelConfig c = tiny_config();
    c.window_length = 1;
    HossnetModel model(c, 11);
    Rng rng(55);
    NdArray w = random_window(1, 1, 8, 8, rng);
    CHECK(model.forward(w).shape_string() == "(1,1,8,8)");
}

TEST_CASE("zeroed residual branch is an identity mapping") {
    // with the block conv zeroed, BN(0)=0 / PReLU(0)=0 leave only the shortcut
    ModelConfig c = tiny_config();
    HossnetModel model(c, 12);
    HossnetModel zeroed(c, 12);
    zeroed.parameter("enc.stage1.res0.conv.w").fill(0.0);
    zeroed.parameter("enc.stage1.res0.conv.b").fill(0.0);

    Rng rng(56);
    NdArray w = random_window(2, 1, 8, 8, rng);
    LatentSequence skip_full, skip_zeroed;
    (void)model.encode(w, &skip_full);
    (void)zeroed.encode(w, &skip_zeroed);

    // reference: conv_in + relu only (the zeroed model's single stage-1 block
    // must pass its input through untouched)
    Tape t;
    Var xv = t.put(w);
    Var ref = t.relu(t.conv2d(xv, t.put(model.parameters().at("enc.conv_in.w")),
                              t.put(model.parameters().at("enc.conv_in.b"))));
    for (std::size_t i = 0; i < skip_zeroed.states.size(); ++i)
        CHECK(skip_zeroed.states[i] == t.value(ref)[i]);
    // sanity: the untouched model differs
    bool differs = false;
    for (std::size_t i = 0; i < skip_full.states.size(); ++i)
        if (skip_full.states[i] != t.value(ref)[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("zero-initialized head with no activation gives all-zero output") {
    ModelConfig c = tiny_config();
    c.output_activation = OutputActivation::none;
    HossnetModel model(c, 13);
    model.parameter("dec.head.w").fill(0.0);
    model.parameter("dec.head.b").fill(0.0);
    Rng rng(63);
    NdArray y = model.forward(random_window(2, 1, 8, 8, rng));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);

    // Adam step with zero gradients leaves every weight unchanged
    std::map<std::string, NdArray> grads;
    for (const auto& [name, p] : model.parameters()) grads[name] = NdArray::zeros_like(p);
    NdArray before = model.parameters().at("enc.conv_in.w");
    model.apply_gradients(grads, AdamParams{});
    NdArray after = model.parameters().at("enc.conv_in.w");
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("batched forward equals per-window forward") {
    HossnetModel model(tiny_config(), 15);
    Rng rng(57);
    std::vector<NdArray> windows{random_window(2, 1, 8, 8, rng), random_window(2, 1, 8, 8, rng)};
    std::vector<NdArray> batched = model.forward_batch(windows);
    for (int i = 0; i < 2; ++i) {
        NdArray single = model.forward(windows[static_cast<std::size_t>(i)]);
        for (std::size_t j = 0; j < single.size(); ++j)
            CHECK(batched[static_cast<std::size_t>(i)][j] == single[j]);
    }
}

TEST_CASE("forward is deterministic for fixed seed and input") {
    Rng rng(58);
    NdArray w = random_window(2, 1, 8, 8, rng);
    HossnetModel m1(tiny_config(), 99);
    HossnetModel m2(tiny_config(), 99);
    NdArray a = m1.forward(w);
    NdArray b = m2.forward(w);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("config variants forward with correct shapes") {
    Rng rng(59);
    NdArray w = random_window(2, 1, 8, 8, rng);
    for (auto merge : {SkipMerge::add, SkipMerge::concat})
        for (auto up : {UpsampleMode::nearest, UpsampleMode::transposed})
            for (bool rtl : {true, false}) {
                ModelConfig c = tiny_config();
                c.skip_merge = merge;
                c.upsample_mode = up;
                c.use_rtl = rtl;
                HossnetModel model(c, 22);
                NdArray y = model.forward(w);
                CHECK(y.shape_string() == "(2,1,8,8)");
                CHECK(y.all_finite());
            }
}

TEST_CASE("checkpoint round-trip preserves weights; config mismatch rejected") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "hossnet_ckpt_test.ckpt").string();
    HossnetModel model(tiny_config(), 31);
    Rng rng(60);
    NdArray w = random_window(2, 1, 8, 8, rng);
    // move running stats off their init values
    (void)model.forward(w, true);
    NdArray ref = model.forward(w);
    model.save_checkpoint(path);

    CHECK(HossnetModel::peek_checkpoint_config(path) == tiny_config());

    HossnetModel other(tiny_config(), 777);
    other.load_checkpoint(path);
    NdArray got = other.forward(w);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == ref[i]);

    ModelConfig different = tiny_config();
    different.base_width = 6;
    HossnetModel mismatch(different, 1);
    CHECK_THROWS_AS(mismatch.load_checkpoint(path), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("training-mode batchnorm updates running buffers") {
    HossnetModel model(tiny_config(), 32);
    Rng rng(61);
    NdArray w = random_window(2, 1, 8, 8, rng);
    NdArray before = model.buffers().at("enc.stage1.res0.bn.running_mean");
    (void)model.forward(w, true);
    NdArray after = model.buffers().at("enc.stage1.res0.bn.running_mean");
    bool moved = false;
    for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i] != after[i]) moved = true;
    CHECK(moved);
    // eval mode must not touch buffers
    NdArray frozen = model.buffers().at("enc.stage1.res0.bn.running_mean");
    (void)model.forward(w, false);
    NdArray still = model.buffers().at("enc.stage1.res0.bn.running_mean");
    for (std::size_t i = 0; i < frozen.size(); ++i) CHECK(still[i] == frozen[i]);
}

TEST_CASE("end-to-end weight gradients match finite differences") {
    // 8x8, L=2, base_width=4 instance per the gradient fidelity contract.
    // Eval-mode BN keeps the loss a smooth function of each weight.
    ModelConfig c = tiny_config();
    HossnetModel model(c, 41);
    Rng rng(62);
    NdArray w = random_window(2, 1, 8, 8, rng);
    NdArray target = random_window(2, 1, 8, 8, rng);

    auto loss_of = [&](HossnetModel& m) {
        NdArray y = m.forward(w, false);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target[i]) * (y[i] - target[i]);
        return s / static_cast<double>(y.size());
    };

    Tape t;
    HossnetModel::Taped tm(t, model, false);
    Var y = tm.forward(t.put(w));
    Var diff = t.sub(y, t.put(target));
    Var loss = t.mean_all(t.mul(diff, diff));
    t.backward(loss);

    // FD over a deterministic subsample of weights from every tensor
    HossnetModel probe(c, 41);
    const double h = 1e-5;
    for (const auto& [name, p] : model.parameters()) {
        const std::size_t stride = std::max<std::size_t>(1, p.size() / 3);
        for (std::size_t i = 0; i < p.size(); i += stride) {
            auto perturbed = [&](double delta) {
                probe.copy_state_from(model);
                probe.parameter(name)[i] += delta;
                return loss_of(probe);
            };
            const double fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            const double an = t.grad(tm.param_var(name))[i];
            const double scale = std::max({1e-6, std::abs(fd), std::abs(an)});
            CAPTURE(name);
            CAPTURE(i);
            CHECK(std::abs(fd - an) / scale < 1e-3);
        }
    }
}

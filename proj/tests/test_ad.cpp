#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "hossnet/ad.hpp"
#include "hossnet/util.hpp"

using namespace hossnet;

namespace {

NdArray random_array(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    NdArray a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
    return a;
}

// Central finite differences of a scalar-valued graph w.r.t. every input,
// compared against the tape's reverse-mode gradients.
//
// builder(tape, leaves) must rebuild the graph from scratch and return the
// scalar root.
void check_gradients(
    const std::vector<NdArray>& inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& builder, double h = 1e-6,
    double tol = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& a : inputs) leaves.push_back(tape.put(a));
    Var root = builder(tape, leaves);
    tape.backward(root);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<NdArray> shifted = inputs;
                shifted[k][i] += delta;
                Tape t2;
                std::vector<Var> l2;
                for (const auto& a : shifted) l2.push_back(t2.put(a));
                return t2.scalar_value(builder(t2, l2));
            };
            const double fd = (eval(h) - eval(-h)) / (2.0 * h);
            const double an = tape.grad(leaves[k])[i];
            const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
            CAPTURE(k);
            CAPTURE(i);
            CHECK(std::abs(fd - an) / scale < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(11);
    std::vector<NdArray> in{random_array({3, 4}, rng), random_array({3, 4}, rng, 0.5, 2.0)};
    check_gradients(in, [](Tape& t, const std::vector<Var>& l) {
        Var s = t.add(l[0], l[1]);
        s = t.mul(s, l[0]);
        s = t.div(s, l[1]);
        s = t.sub(s, l[0]);
        s = t.scale(s, 1.7);
        s = t.add_scalar(s, 0.3);
        return t.sum_all(t.mul(s, s));
    });
}

TEST_CASE("activations match finite differences") {
    Rng rng(12);
    // keep relu inputs away from the kink
    NdArray a = random_array({2, 3}, rng);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i]) < 0.05) a[i] = 0.1;
    check_gradients({a}, [](Tape& t, const std::vector<Var>& l) {
        Var s = t.add(t.relu(l[0]), t.sigmoid(l[0]));
        s = t.add(s, t.tanh_op(l[0]));
        return t.mean_all(t.mul(s, s));
    });
}

TEST_CASE("prelu trains both input and slopes") {
    Rng rng(13);
    NdArray x = random_array({2, 3, 4, 4}, rng);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] = -0.2;
    NdArray slopes({3});
    slopes[0] = 0.25;
    slopes[1] = 0.1;
    slopes[2] = 0.7;
    check_gradients({x, slopes}, [](Tape& t, const std::vector<Var>& l) {
        Var y = t.prelu(l[0], l[1]);
        return t.sum_all(t.mul(y, y));
    });
}

TEST_CASE("conv2d 3x3 and 1x1 match finite differences") {
    Rng rng(14);
    for (int k : {1, 3}) {
        std::vector<NdArray> in{random_array({2, 2, 4, 5}, rng), random_array({3, 2, k, k}, rng),
                                random_array({3}, rng)};
        check_gradients(in, [](Tape& t, const std::vector<Var>& l) {
            Var y = t.conv2d(l[0], l[1], l[2]);
            return t.sum_all(t.mul(y, y));
        });
    }
}

TEST_CASE("conv2d rejects even kernels and bad shapes") {
    Tape t;
    Var x = t.put(NdArray({1, 2, 4, 4}));
    Var w_even = t.put(NdArray({2, 2, 2, 2}));
    Var w_badci = t.put(NdArray({2, 3, 3, 3}));
    Var b = t.put(NdArray({2}));
    CHECK_THROWS_AS(t.conv2d(x, w_even, b), std::invalid_argument);
    CHECK_THROWS_AS(t.conv2d(x, w_badci, b), std::invalid_argument);
}

TEST_CASE("conv_transpose2x2 doubles resolution and matches finite differences") {
    Rng rng(15);
    std::vector<NdArray> in{random_array({1, 2, 3, 3}, rng), random_array({2, 3, 2, 2}, rng),
                            random_array({3}, rng)};
    {
        Tape t;
        Var y = t.conv_transpose2x2(t.put(in[0]), t.put(in[1]), t.put(in[2]));
        CHECK(t.value(y).shape_string() == "(1,3,6,6)");
    }
    check_gradients(in, [](Tape& t, const std::vector<Var>& l) {
        Var y = t.conv_transpose2x2(l[0], l[1], l[2]);
        return t.sum_all(t.mul(y, y));
    });
}

TEST_CASE("maxpool2 and upsample2_nearest match finite differences") {
    Rng rng(16);
    NdArray x = random_array({2, 2, 4, 4}, rng);
    // separate pooled values so the argmax is stable under the FD probe
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.001 * static_cast<double>(i);
    check_gradients({x}, [](Tape& t, const std::vector<Var>& l) {
        Var y = t.maxpool2(l[0]);
        y = t.upsample2_nearest(y);
        return t.sum_all(t.mul(y, y));
    });
    Tape t;
    CHECK_THROWS_AS(t.maxpool2(t.put(NdArray({1, 1, 3, 4}))), std::invalid_argument);
}

TEST_CASE("batchnorm_train normalizes and matches finite differences") {
    Rng rng(17);
    NdArray x = random_array({3, 2, 3, 3}, rng, -2.0, 2.0);
    NdArray gamma({2}, 1.0), beta({2}, 0.0);
    gamma[1] = 1.5;
    beta[1] = -0.25;

    Tape t;
    Var y = t.batchnorm_train(t.put(x), t.put(gamma), t.put(beta), 1e-5, 0.9);
    // per-channel output mean ~ beta, variance ~ gamma^2 (up to eps)
    const NdArray& vy = t.value(y);
    for (int c = 0; c < 2; ++c) {
        double s = 0.0, sq = 0.0;
        int cnt = 0;
        for (int n = 0; n < 3; ++n)
            for (int i = 0; i < 9; ++i) {
                const double v = vy[(static_cast<std::size_t>(n) * 2 + c) * 9 + i];
                s += v;
                sq += v * v;
                ++cnt;
            }
        const double mean = s / cnt;
        const double var = sq / cnt - mean * mean;
        CHECK(mean == doctest::Approx(beta[c]).epsilon(1e-9));
        CHECK(var == doctest::Approx(gamma[c] * gamma[c]).epsilon(1e-3));
    }

    check_gradients({x, gamma, beta}, [](Tape& tt, const std::vector<Var>& l) {
        Var yy = tt.batchnorm_train(l[0], l[1], l[2], 1e-5, 0.9);
        return tt.sum_all(tt.mul(yy, yy));
    }, 1e-6, 1e-5);
}

TEST_CASE("batchnorm running stats update with momentum") {
    NdArray x({2, 1, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
    NdArray rm({1}, 0.0), rv({1}, 1.0);
    Tape t;
    t.batchnorm_train(t.put(x), t.put(NdArray({1}, 1.0)), t.put(NdArray({1}, 0.0)), 1e-5, 0.9,
                      &rm, &rv);
    // batch mean 3.5, biased var 5.25, unbiased 6.0
    CHECK(rm[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 3.5));
    CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 6.0));
}

TEST_CASE("batchnorm_eval applies frozen statistics") {
    Rng rng(18);
    NdArray x = random_array({2, 2, 2, 2}, rng);
    NdArray rm({2}), rv({2});
    rm[0] = 0.2; rm[1] = -0.4;
    rv[0] = 1.3; rv[1] = 0.8;
    NdArray gamma({2}, 1.1), beta({2}, 0.1);
    Tape t;
    Var y = t.batchnorm_eval(t.put(x), t.put(gamma), t.put(beta), rm, rv, 1e-5);
    const double got = t.value(y).at4(1, 1, 0, 1);
    const double want = (x.at4(1, 1, 0, 1) - rm[1]) / std::sqrt(rv[1] + 1e-5) * 1.1 + 0.1;
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    check_gradients({x, gamma, beta}, [rm, rv](Tape& tt, const std::vector<Var>& l) {
        Var yy = tt.batchnorm_eval(l[0], l[1], l[2], rm, rv, 1e-5);
        return tt.sum_all(tt.mul(yy, yy));
    });
}

TEST_CASE("layout ops round-trip and match finite differences") {
    Rng rng(19);
    NdArray x = random_array({2, 3, 2, 2}, rng);

    Tape t;
    Var xv = t.put(x);
    Var rows = t.frame_to_rows(xv, 1);
    CHECK(t.value(rows).shape_string() == "(4,3)");
    CHECK(t.value(rows).at2(3, 2) == x.at4(1, 2, 1, 1));
    Var back = t.rows_to_frame(rows, 2, 2);
    CHECK(t.value(back).at4(0, 2, 1, 1) == x.at4(1, 2, 1, 1));

    check_gradients({x}, [](Tape& tt, const std::vector<Var>& l) {
        Var r0 = tt.frame_to_rows(l[0], 0);
        Var r1 = tt.frame_to_rows(l[0], 1);
        Var f0 = tt.rows_to_frame(r0, 2, 2);
        Var f1 = tt.rows_to_frame(r1, 2, 2);
        Var stacked = tt.stack_frames({f0, f1});
        Var cat = tt.concat_channels(stacked, stacked);
        Var cropped = tt.crop_hw(cat, 0, 1, 2, 1);
        Var hw = tt.extract_hw(cropped, 1, 4);
        return tt.sum_all(tt.mul(hw, hw));
    });
}

TEST_CASE("matmul, add_rowvec, slice_cols match finite differences") {
    Rng rng(20);
    std::vector<NdArray> in{random_array({3, 4}, rng), random_array({4, 6}, rng),
                            random_array({6}, rng)};
    check_gradients(in, [](Tape& t, const std::vector<Var>& l) {
        Var y = t.matmul(l[0], l[1]);
        y = t.add_rowvec(y, l[2]);
        Var a = t.slice_cols(y, 0, 3);
        Var b = t.slice_cols(y, 3, 6);
        return t.sum_all(t.mul(a, b));
    });
}

TEST_CASE("fixed-kernel conv and spatial differences match finite differences") {
    Rng rng(21);
    NdArray x = random_array({5, 6}, rng);
    const std::array<double, 9> kern{1.0 / 12, 1.0 / 6, 1.0 / 12, 1.0 / 6, 0.0,
                                     1.0 / 6,  1.0 / 12, 1.0 / 6, 1.0 / 12};
    check_gradients({x}, [kern](Tape& t, const std::vector<Var>& l) {
        Var a = t.conv3x3_fixed(l[0], kern);
        Var b = t.dx_central(l[0]);
        Var c = t.dy_central(l[0]);
        Var d = t.dx_forward(l[0]);
        Var e = t.dy_forward(l[0]);
        Var s = t.add(t.add(a, b), t.add(c, t.add(d, e)));
        return t.sum_all(t.mul(s, s));
    });
}

TEST_CASE("spatial difference values: central with replicated borders") {
    NdArray x({2, 3});
    // row 0: 1 2 4 ; row 1: 0 0 9
    x[0] = 1; x[1] = 2; x[2] = 4; x[3] = 0; x[4] = 0; x[5] = 9;
    Tape t;
    const NdArray& dx = t.value(t.dx_central(t.put(x)));
    CHECK(dx.at2(0, 0) == doctest::Approx(0.5 * (2 - 1)));
    CHECK(dx.at2(0, 1) == doctest::Approx(0.5 * (4 - 1)));
    CHECK(dx.at2(0, 2) == doctest::Approx(0.5 * (4 - 2)));
    const NdArray& dy = t.value(t.dy_central(t.put(x)));
    CHECK(dy.at2(0, 1) == doctest::Approx(0.5 * (0 - 2)));
    CHECK(dy.at2(1, 2) == doctest::Approx(0.5 * (9 - 4)));
    const NdArray& dxf = t.value(t.dx_forward(t.put(x)));
    CHECK(dxf.at2(0, 2) == 0.0);
    CHECK(dxf.at2(1, 1) == doctest::Approx(9.0));
}

TEST_CASE("angle_loss value and gradients") {
    // two 1x2 flow fields: first pixel parallel, second orthogonal
    NdArray u1({1, 2}), v1({1, 2}), u2({1, 2}), v2({1, 2});
    u1[0] = 1.0; v1[0] = 0.0; u2[0] = 2.0; v2[0] = 0.0;  // parallel
    u1[1] = 0.0; v1[1] = 1.0; u2[1] = 3.0; v2[1] = 0.0;  // orthogonal
    Tape t;
    Var loss = t.angle_loss(t.put(u1), t.put(v1), t.put(u2), t.put(v2), 1e-6);
    const double pi = 3.14159265358979323846;
    CHECK(t.scalar_value(loss) == doctest::Approx(pi * pi / 4.0).epsilon(1e-12));

    // antiparallel
    NdArray w2 = u2;
    w2[0] = -1.0;
    NdArray z2({1, 2}, 0.0);
    Tape t2;
    NdArray uu({1, 1}, 1.0), vv({1, 1}, 0.0), ua({1, 1}, -2.0), va({1, 1}, 0.0);
    Var anti = t2.angle_loss(t2.put(uu), t2.put(vv), t2.put(ua), t2.put(va), 1e-6);
    CHECK(t2.scalar_value(anti) == doctest::Approx(pi * pi).epsilon(1e-12));

    // below-floor pixels contribute nothing
    Tape t3;
    NdArray small({1, 1}, 1e-9);
    Var zero = t3.angle_loss(t3.put(small), t3.put(small), t3.put(uu), t3.put(vv), 1e-6);
    CHECK(t3.scalar_value(zero) == 0.0);

    // gradient check away from the clamp boundary
    Rng rng(22);
    NdArray gu1 = random_array({3, 3}, rng, 0.3, 1.0);
    NdArray gv1 = random_array({3, 3}, rng, -1.0, -0.3);
    NdArray gu2 = random_array({3, 3}, rng, 0.3, 1.0);
    NdArray gv2 = random_array({3, 3}, rng, 0.3, 1.0);
    check_gradients({gu1, gv1, gu2, gv2}, [](Tape& tt, const std::vector<Var>& l) {
        return tt.angle_loss(l[0], l[1], l[2], l[3], 1e-6);
    }, 1e-6, 1e-5);
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // f(x) = (x+x)·x = 2x², df/dx = 4x
    Tape t;
    Var x = t.put(NdArray({1}, 3.0));
    Var y = t.mul(t.add(x, x), x);
    t.backward(y);
    CHECK(t.grad(x)[0] == doctest::Approx(12.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape t;
    Var x = t.put(NdArray({2}, 1.0));
    CHECK_THROWS_AS(t.backward(x), std::logic_error);
}

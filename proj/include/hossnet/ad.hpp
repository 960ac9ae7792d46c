#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hossnet/tensor.hpp"

namespace hossnet {

/// Reverse-mode automatic differentiation over dense double tensors.
///
/// A Tape owns a growing list of nodes; every op appends one node holding the
/// forward value, a zeroed gradient buffer, and a closure that scatters the
/// node's gradient into its inputs. backward(root) seeds the (scalar) root
/// with 1 and runs closures in reverse creation order. Handles are plain ids,
/// so they stay valid across the tape's internal reallocation.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var put(NdArray value) {
        nodes_.push_back(Node{std::move(value), NdArray(), {}});
        nodes_.back().grad = NdArray::zeros_like(nodes_.back().value);
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var scalar(double v) { return put(NdArray({1}, v)); }

    const NdArray& value(Var x) const { return node(x).value; }
    const NdArray& grad(Var x) const { return node(x).grad; }
    double scalar_value(Var x) const {
        const NdArray& v = value(x);
        if (v.size() != 1) throw std::logic_error("scalar_value: node is not scalar");
        return v[0];
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var root) {
        NdArray& g = node(root).grad;
        if (g.size() != 1) throw std::logic_error("backward: root must be scalar");
        g[0] = 1.0;
        for (int i = root.id; i >= 0; --i)
            if (nodes_[static_cast<std::size_t>(i)].back)
                nodes_[static_cast<std::size_t>(i)].back(*this);
    }

    // ---- elementwise (shape-agnostic) ----

    Var add(Var a, Var b) {
        const NdArray &va = value(a), &vb = value(b);
        require_same_shape(va, vb, "add");
        NdArray out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            accumulate(t.node(a).grad, n.grad);
            accumulate(t.node(b).grad, n.grad);
        });
    }

    Var sub(Var a, Var b) {
        const NdArray &va = value(a), &vb = value(b);
        require_same_shape(va, vb, "sub");
        NdArray out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            accumulate(t.node(a).grad, n.grad);
            NdArray& gb = t.node(b).grad;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
        });
    }

    Var mul(Var a, Var b) {
        const NdArray &va = value(a), &vb = value(b);
        require_same_shape(va, vb, "mul");
        NdArray out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            const NdArray &va2 = t.value(a), &vb2 = t.value(b);
            NdArray &ga = t.node(a).grad, &gb = t.node(b).grad;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += n.grad[i] * vb2[i];
                gb[i] += n.grad[i] * va2[i];
            }
        });
    }

    Var div(Var a, Var b) {
        const NdArray &va = value(a), &vb = value(b);
        require_same_shape(va, vb, "div");
        NdArray out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            const NdArray& vb2 = t.value(b);
            const NdArray& vz = n.value;
            NdArray &ga = t.node(a).grad, &gb = t.node(b).grad;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double inv = 1.0 / vb2[i];
                ga[i] += n.grad[i] * inv;
                gb[i] -= n.grad[i] * vz[i] * inv;
            }
        });
    }

    Var scale(Var a, double c) {
        NdArray out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return make(std::move(out), [a, c](Tape& t, const Node& n) {
            NdArray& ga = t.node(a).grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * n.grad[i];
        });
    }

    Var add_scalar(Var a, double c) {
        NdArray out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
        return make(std::move(out),
                    [a](Tape& t, const Node& n) { accumulate(t.node(a).grad, n.grad); });
    }

    Var relu(Var a) {
        NdArray out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i] < 0.0) out[i] = 0.0;
        return make(std::move(out), [a](Tape& t, const Node& n) {
            const NdArray& va = t.value(a);
            NdArray& ga = t.node(a).grad;
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (va[i] > 0.0) ga[i] += n.grad[i];
        });
    }

    Var sigmoid(Var a) {
        NdArray out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double x = out[i];
            out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
        }
        return make(std::move(out), [a](Tape& t, const Node& n) {
            NdArray& ga = t.node(a).grad;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double s = n.value[i];
                ga[i] += n.grad[i] * s * (1.0 - s);
            }
        });
    }

    Var tanh_op(Var a) {
        NdArray out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        return make(std::move(out), [a](Tape& t, const Node& n) {
            NdArray& ga = t.node(a).grad;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
        });
    }

    /// PReLU over (N,C,H,W) with one learned slope per channel.
    Var prelu(Var a, Var slopes) {
        const NdArray& va = value(a);
        const NdArray& vs = value(slopes);
        if (va.ndim() != 4 || vs.ndim() != 1 || vs.dim(0) != va.dim(1))
            throw std::invalid_argument("prelu: expected (N,C,H,W) and per-channel slopes");
        NdArray out = va;
        const int N = va.dim(0), C = va.dim(1);
        const std::size_t plane = static_cast<std::size_t>(va.dim(2)) * va.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const double s = vs[static_cast<std::size_t>(c)];
                double* p = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    if (p[i] < 0.0) p[i] *= s;
            }
        return make(std::move(out), [a, slopes](Tape& t, const Node& nd) {
            const NdArray& va2 = t.value(a);
            const NdArray& vs2 = t.value(slopes);
            NdArray& ga = t.node(a).grad;
            NdArray& gs = t.node(slopes).grad;
            const int N = va2.dim(0), C = va2.dim(1);
            const std::size_t plane = static_cast<std::size_t>(va2.dim(2)) * va2.dim(3);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const double s = vs2[static_cast<std::size_t>(c)];
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double x = va2[base + i];
                        const double g = nd.grad[base + i];
                        if (x > 0.0) {
                            ga[base + i] += g;
                        } else {
                            ga[base + i] += g * s;
                            acc += g * x;
                        }
                    }
                    gs[static_cast<std::size_t>(c)] += acc;
                }
        });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        NdArray out({1}, value(a).sum());
        return make(std::move(out), [a](Tape& t, const Node& n) {
            NdArray& ga = t.node(a).grad;
            const double g = n.grad[0];
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }

    Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

    // ---- image ops on (N,C,H,W) ----

    /// 2-D convolution, stride 1, same padding; weight (Cout,Cin,k,k), k odd.
    Var conv2d(Var x, Var weight, Var bias) {
        const NdArray& vx = value(x);
        const NdArray& vw = value(weight);
        const NdArray& vb = value(bias);
        if (vx.ndim() != 4 || vw.ndim() != 4)
            throw std::invalid_argument("conv2d: expected (N,C,H,W) input and (Co,Ci,k,k) weight");
        const int N = vx.dim(0), Ci = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const int Co = vw.dim(0), k = vw.dim(2);
        if (vw.dim(1) != Ci || vw.dim(3) != k || k % 2 == 0)
            throw std::invalid_argument("conv2d: weight shape mismatch (want odd square kernel, Ci=" +
                                        std::to_string(Ci) + ", got " + vw.shape_string() + ")");
        if (vb.ndim() != 1 || vb.dim(0) != Co)
            throw std::invalid_argument("conv2d: bias must be (Cout)");
        const int pad = k / 2;

        NdArray out({N, Co, H, W});
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
                double* op = out.data() + (static_cast<std::size_t>(n) * Co + co) * plane;
                const double b = vb[static_cast<std::size_t>(co)];
                for (std::size_t i = 0; i < plane; ++i) op[i] = b;
                for (int ci = 0; ci < Ci; ++ci) {
                    const double* ip = vx.data() + (static_cast<std::size_t>(n) * Ci + ci) * plane;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const double w = vw.at4(co, ci, dy, dx);
                            if (w == 0.0) continue;
                            const int oy0 = std::max(0, pad - dy), oy1 = std::min(H, H + pad - dy);
                            const int ox0 = std::max(0, pad - dx), ox1 = std::min(W, W + pad - dx);
                            for (int y = oy0; y < oy1; ++y) {
                                double* orow = op + static_cast<std::size_t>(y) * W;
                                const double* irow =
                                    ip + static_cast<std::size_t>(y + dy - pad) * W + (dx - pad);
                                for (int xp = ox0; xp < ox1; ++xp) orow[xp] += w * irow[xp];
                            }
                        }
                }
            }

        return make(std::move(out), [x, weight, bias, N, Ci, Co, H, W, k, pad](Tape& t,
                                                                               const Node& nd) {
            const NdArray& vx2 = t.value(x);
            const NdArray& vw2 = t.value(weight);
            NdArray& gx = t.node(x).grad;
            NdArray& gw = t.node(weight).grad;
            NdArray& gb = t.node(bias).grad;
            const std::size_t plane = static_cast<std::size_t>(H) * W;
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const double* gp = nd.grad.data() + (static_cast<std::size_t>(n) * Co + co) * plane;
                    double acc_b = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc_b += gp[i];
                    gb[static_cast<std::size_t>(co)] += acc_b;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const double* ip = vx2.data() + (static_cast<std::size_t>(n) * Ci + ci) * plane;
                        double* gip = gx.data() + (static_cast<std::size_t>(n) * Ci + ci) * plane;
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                const double w = vw2.at4(co, ci, dy, dx);
                                double acc_w = 0.0;
                                const int oy0 = std::max(0, pad - dy), oy1 = std::min(H, H + pad - dy);
                                const int ox0 = std::max(0, pad - dx), ox1 = std::min(W, W + pad - dx);
                                for (int y = oy0; y < oy1; ++y) {
                                    const double* grow = gp + static_cast<std::size_t>(y) * W;
                                    const std::size_t ioff =
                                        static_cast<std::size_t>(y + dy - pad) * W + (dx - pad);
                                    const double* irow = ip + ioff;
                                    double* girow = gip + ioff;
                                    for (int xp = ox0; xp < ox1; ++xp) {
                                        acc_w += grow[xp] * irow[xp];
                                        girow[xp] += grow[xp] * w;
                                    }
                                }
                                gw.at4(co, ci, dy, dx) += acc_w;
                            }
                    }
                }
        });
    }

    /// Transposed convolution with 2×2 kernel, stride 2: (N,Ci,H,W) -> (N,Co,2H,2W).
    /// Weight layout (Ci,Co,2,2).
    Var conv_transpose2x2(Var x, Var weight, Var bias) {
        const NdArray& vx = value(x);
        const NdArray& vw = value(weight);
        const NdArray& vb = value(bias);
        if (vx.ndim() != 4 || vw.ndim() != 4 || vw.dim(2) != 2 || vw.dim(3) != 2)
            throw std::invalid_argument("conv_transpose2x2: want (N,Ci,H,W) and (Ci,Co,2,2)");
        const int N = vx.dim(0), Ci = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const int Co = vw.dim(1);
        if (vw.dim(0) != Ci || vb.ndim() != 1 || vb.dim(0) != Co)
            throw std::invalid_argument("conv_transpose2x2: weight/bias shape mismatch");

        NdArray out({N, Co, 2 * H, 2 * W});
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
                const double b = vb[static_cast<std::size_t>(co)];
                for (int y = 0; y < 2 * H; ++y)
                    for (int xp = 0; xp < 2 * W; ++xp) out.at4(n, co, y, xp) = b;
                for (int ci = 0; ci < Ci; ++ci)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const double w = vw.at4(ci, co, dy, dx);
                            for (int y = 0; y < H; ++y)
                                for (int xp = 0; xp < W; ++xp)
                                    out.at4(n, co, 2 * y + dy, 2 * xp + dx) += w * vx.at4(n, ci, y, xp);
                        }
            }

        return make(std::move(out), [x, weight, bias, N, Ci, Co, H, W](Tape& t, const Node& nd) {
            const NdArray& vx2 = t.value(x);
            const NdArray& vw2 = t.value(weight);
            NdArray& gx = t.node(x).grad;
            NdArray& gw = t.node(weight).grad;
            NdArray& gb = t.node(bias).grad;
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    double acc_b = 0.0;
                    for (int y = 0; y < 2 * H; ++y)
                        for (int xp = 0; xp < 2 * W; ++xp) acc_b += nd.grad.at4(n, co, y, xp);
                    gb[static_cast<std::size_t>(co)] += acc_b;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double w = vw2.at4(ci, co, dy, dx);
                                double acc_w = 0.0;
                                for (int y = 0; y < H; ++y)
                                    for (int xp = 0; xp < W; ++xp) {
                                        const double g = nd.grad.at4(n, co, 2 * y + dy, 2 * xp + dx);
                                        acc_w += g * vx2.at4(n, ci, y, xp);
                                        gx.at4(n, ci, y, xp) += g * w;
                                    }
                                gw.at4(ci, co, dy, dx) += acc_w;
                            }
                }
        });
    }

    /// 2×2 max pooling, stride 2. H and W must be even.
    Var maxpool2(Var x) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4) throw std::invalid_argument("maxpool2: expected (N,C,H,W)");
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        if (H % 2 != 0 || W % 2 != 0)
            throw std::invalid_argument("maxpool2: H and W must be even, got " + vx.shape_string());
        NdArray out({N, C, H / 2, W / 2});
        std::vector<std::size_t> argmax(out.size());
        std::size_t o = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; y += 2)
                    for (int xp = 0; xp < W; xp += 2) {
                        std::size_t best = 0;
                        double bv = -std::numeric_limits<double>::infinity();
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    ((static_cast<std::size_t>(n) * C + c) * H + (y + dy)) * W +
                                    (xp + dx);
                                if (vx[idx] > bv) {
                                    bv = vx[idx];
                                    best = idx;
                                }
                            }
                        out[o] = bv;
                        argmax[o] = best;
                        ++o;
                    }
        return make(std::move(out), [x, argmax = std::move(argmax)](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += nd.grad[i];
        });
    }

    /// Nearest-neighbour 2× upsampling: (N,C,H,W) -> (N,C,2H,2W).
    Var upsample2_nearest(Var x) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4) throw std::invalid_argument("upsample2_nearest: expected (N,C,H,W)");
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        NdArray out({N, C, 2 * H, 2 * W});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xp = 0; xp < W; ++xp) {
                        const double v = vx.at4(n, c, y, xp);
                        out.at4(n, c, 2 * y, 2 * xp) = v;
                        out.at4(n, c, 2 * y, 2 * xp + 1) = v;
                        out.at4(n, c, 2 * y + 1, 2 * xp) = v;
                        out.at4(n, c, 2 * y + 1, 2 * xp + 1) = v;
                    }
        return make(std::move(out), [x, N, C, H, W](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int xp = 0; xp < W; ++xp)
                            gx.at4(n, c, y, xp) += nd.grad.at4(n, c, 2 * y, 2 * xp) +
                                                   nd.grad.at4(n, c, 2 * y, 2 * xp + 1) +
                                                   nd.grad.at4(n, c, 2 * y + 1, 2 * xp) +
                                                   nd.grad.at4(n, c, 2 * y + 1, 2 * xp + 1);
        });
    }

    /// Batch norm, training mode. Statistics per channel over (N,H,W) of this
    /// call only. Normalization uses the biased variance; running buffers (if
    /// given) are updated in place with the unbiased variance.
    Var batchnorm_train(Var x, Var gamma, Var beta, double eps, double momentum,
                        NdArray* running_mean = nullptr, NdArray* running_var = nullptr) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4) throw std::invalid_argument("batchnorm: expected (N,C,H,W)");
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const NdArray& vg = value(gamma);
        const NdArray& vbt = value(beta);
        if (vg.ndim() != 1 || vg.dim(0) != C || vbt.ndim() != 1 || vbt.dim(0) != C)
            throw std::invalid_argument("batchnorm: gamma/beta must be (C)");
        const std::size_t m = static_cast<std::size_t>(N) * H * W;
        const std::size_t plane = static_cast<std::size_t>(H) * W;

        std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
        std::vector<double> var(static_cast<std::size_t>(C), 0.0);
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = vx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = vx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            mean[static_cast<std::size_t>(c)] = mu;
            var[static_cast<std::size_t>(c)] = sq / static_cast<double>(m);
        }
        if (running_mean && running_var) {
            for (int c = 0; c < C; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double unbiased =
                    m > 1 ? var[cc] * static_cast<double>(m) / static_cast<double>(m - 1) : var[cc];
                (*running_mean)[cc] = momentum * (*running_mean)[cc] + (1.0 - momentum) * mean[cc];
                (*running_var)[cc] = momentum * (*running_var)[cc] + (1.0 - momentum) * unbiased;
            }
        }

        NdArray out({N, C, H, W});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double inv = 1.0 / std::sqrt(var[cc] + eps);
                const double g = vg[cc], b = vbt[cc], mu = mean[cc];
                const double* p = vx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                double* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) op[i] = (p[i] - mu) * inv * g + b;
            }

        return make(std::move(out), [x, gamma, beta, mean = std::move(mean), var = std::move(var),
                                     eps, N, C, H, W](Tape& t, const Node& nd) {
            const NdArray& vx2 = t.value(x);
            const NdArray& vg2 = t.value(gamma);
            NdArray& gx = t.node(x).grad;
            NdArray& gg = t.node(gamma).grad;
            NdArray& gb = t.node(beta).grad;
            const std::size_t m = static_cast<std::size_t>(N) * H * W;
            const std::size_t plane = static_cast<std::size_t>(H) * W;
            const double dm = static_cast<double>(m);
            for (int c = 0; c < C; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double mu = mean[cc];
                const double inv = 1.0 / std::sqrt(var[cc] + eps);
                const double g = vg2[cc];
                // two reduction passes, then the standard closed-form input grad
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < N; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = nd.grad[base + i];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (vx2[base + i] - mu) * inv;
                    }
                }
                gg[cc] += sum_dy_xhat;
                gb[cc] += sum_dy;
                for (int n = 0; n < N; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = nd.grad[base + i];
                        const double xhat = (vx2[base + i] - mu) * inv;
                        gx[base + i] += g * inv * (dy - sum_dy / dm - xhat * sum_dy_xhat / dm);
                    }
                }
            }
        });
    }

    /// Batch norm, inference mode: affine transform with frozen statistics.
    Var batchnorm_eval(Var x, Var gamma, Var beta, const NdArray& running_mean,
                       const NdArray& running_var, double eps) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4) throw std::invalid_argument("batchnorm: expected (N,C,H,W)");
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const NdArray& vg = value(gamma);
        const NdArray& vbt = value(beta);
        if (running_mean.size() != static_cast<std::size_t>(C) ||
            running_var.size() != static_cast<std::size_t>(C))
            throw std::invalid_argument("batchnorm_eval: running stats must be (C)");
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        std::vector<double> scale_c(static_cast<std::size_t>(C)), shift_c(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            const double inv = 1.0 / std::sqrt(running_var[cc] + eps);
            scale_c[cc] = vg[cc] * inv;
            shift_c[cc] = vbt[cc] - running_mean[cc] * vg[cc] * inv;
        }
        NdArray out({N, C, H, W});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double* p = vx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                double* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) op[i] = p[i] * scale_c[cc] + shift_c[cc];
            }
        NdArray rm = running_mean, rv = running_var;
        return make(std::move(out), [x, gamma, beta, rm = std::move(rm), rv = std::move(rv), eps, N,
                                     C, H, W](Tape& t, const Node& nd) {
            const NdArray& vx2 = t.value(x);
            const NdArray& vg2 = t.value(gamma);
            NdArray& gx = t.node(x).grad;
            NdArray& gg = t.node(gamma).grad;
            NdArray& gb = t.node(beta).grad;
            const std::size_t plane = static_cast<std::size_t>(H) * W;
            for (int c = 0; c < C; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double inv = 1.0 / std::sqrt(rv[cc] + eps);
                double acc_g = 0.0, acc_b = 0.0;
                for (int n = 0; n < N; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = nd.grad[base + i];
                        gx[base + i] += dy * vg2[cc] * inv;
                        acc_g += dy * (vx2[base + i] - rm[cc]) * inv;
                        acc_b += dy;
                    }
                }
                gg[cc] += acc_g;
                gb[cc] += acc_b;
            }
        });
    }

    // ---- layout ops ----

    /// Extracts frame n of (N,C,H,W) as rows (H·W, C), pixel-major.
    Var frame_to_rows(Var x, int n) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4 || n < 0 || n >= vx.dim(0))
            throw std::invalid_argument("frame_to_rows: bad frame index");
        const int C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        NdArray out({static_cast<int>(plane), C});
        for (int c = 0; c < C; ++c) {
            const double* p = vx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) out[i * static_cast<std::size_t>(C) + c] = p[i];
        }
        return make(std::move(out), [x, n, C, plane](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (int c = 0; c < C; ++c) {
                double* gp = gx.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    gp[i] += nd.grad[i * static_cast<std::size_t>(C) + c];
            }
        });
    }

    /// Inverse of frame_to_rows for a single frame: (H·W, C) -> (1,C,H,W).
    Var rows_to_frame(Var x, int h, int w) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 2 || vx.dim(0) != h * w)
            throw std::invalid_argument("rows_to_frame: rows must be (H*W, C)");
        const int C = vx.dim(1);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        NdArray out({1, C, h, w});
        for (int c = 0; c < C; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                out[static_cast<std::size_t>(c) * plane + i] = vx[i * static_cast<std::size_t>(C) + c];
        return make(std::move(out), [x, C, plane](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    gx[i * static_cast<std::size_t>(C) + c] +=
                        nd.grad[static_cast<std::size_t>(c) * plane + i];
        });
    }

    /// Concatenates (1,C,H,W) frames along N.
    Var stack_frames(const std::vector<Var>& frames) {
        if (frames.empty()) throw std::invalid_argument("stack_frames: empty");
        const NdArray& f0 = value(frames[0]);
        if (f0.ndim() != 4 || f0.dim(0) != 1)
            throw std::invalid_argument("stack_frames: expected (1,C,H,W) frames");
        const int C = f0.dim(1), H = f0.dim(2), W = f0.dim(3);
        const std::size_t step = f0.size();
        NdArray out({static_cast<int>(frames.size()), C, H, W});
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const NdArray& fi = value(frames[i]);
            require_same_shape(fi, f0, "stack_frames");
            for (std::size_t j = 0; j < step; ++j) out[i * step + j] = fi[j];
        }
        return make(std::move(out), [frames, step](Tape& t, const Node& nd) {
            for (std::size_t i = 0; i < frames.size(); ++i) {
                NdArray& g = t.node(frames[i]).grad;
                for (std::size_t j = 0; j < step; ++j) g[j] += nd.grad[i * step + j];
            }
        });
    }

    Var concat_channels(Var a, Var b) {
        const NdArray& va = value(a);
        const NdArray& vb = value(b);
        if (va.ndim() != 4 || vb.ndim() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
            va.dim(3) != vb.dim(3))
            throw std::invalid_argument("concat_channels: incompatible shapes " + va.shape_string() +
                                        " vs " + vb.shape_string());
        const int N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        NdArray out({N, Ca + Cb, H, W});
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < Ca; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    out[((static_cast<std::size_t>(n) * (Ca + Cb)) + c) * plane + i] =
                        va[(static_cast<std::size_t>(n) * Ca + c) * plane + i];
            for (int c = 0; c < Cb; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    out[((static_cast<std::size_t>(n) * (Ca + Cb)) + Ca + c) * plane + i] =
                        vb[(static_cast<std::size_t>(n) * Cb + c) * plane + i];
        }
        return make(std::move(out), [a, b, N, Ca, Cb, plane](Tape& t, const Node& nd) {
            NdArray& ga = t.node(a).grad;
            NdArray& gb = t.node(b).grad;
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < Ca; ++c)
                    for (std::size_t i = 0; i < plane; ++i)
                        ga[(static_cast<std::size_t>(n) * Ca + c) * plane + i] +=
                            nd.grad[((static_cast<std::size_t>(n) * (Ca + Cb)) + c) * plane + i];
                for (int c = 0; c < Cb; ++c)
                    for (std::size_t i = 0; i < plane; ++i)
                        gb[(static_cast<std::size_t>(n) * Cb + c) * plane + i] +=
                            nd.grad[((static_cast<std::size_t>(n) * (Ca + Cb)) + Ca + c) * plane + i];
            }
        });
    }

    /// Spatial crop of (N,C,H,W).
    Var crop_hw(Var x, int y0, int x0, int h, int w) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4) throw std::invalid_argument("crop_hw: expected (N,C,H,W)");
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > H || x0 + w > W)
            throw std::invalid_argument("crop_hw: window out of bounds");
        NdArray out({N, C, h, w});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    for (int xp = 0; xp < w; ++xp)
                        out.at4(n, c, y, xp) = vx.at4(n, c, y0 + y, x0 + xp);
        return make(std::move(out), [x, y0, x0, h, w, N, C](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < h; ++y)
                        for (int xp = 0; xp < w; ++xp)
                            gx.at4(n, c, y0 + y, x0 + xp) += nd.grad.at4(n, c, y, xp);
        });
    }

    /// Extracts one channel of one frame as a plain (H,W) image.
    Var extract_hw(Var x, int n, int c) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 4 || n < 0 || n >= vx.dim(0) || c < 0 || c >= vx.dim(1))
            throw std::invalid_argument("extract_hw: bad indices");
        const int C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
        NdArray out({H, W});
        for (std::size_t i = 0; i < plane; ++i) out[i] = vx[base + i];
        return make(std::move(out), [x, base, plane](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (std::size_t i = 0; i < plane; ++i) gx[base + i] += nd.grad[i];
        });
    }

    // ---- row-matrix ops ----

    Var matmul(Var a, Var b) {
        const NdArray& va = value(a);
        const NdArray& vb = value(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
            throw std::invalid_argument("matmul: shape mismatch " + va.shape_string() + " x " +
                                        vb.shape_string());
        const int R = va.dim(0), K = va.dim(1), M = vb.dim(1);
        NdArray out({R, M});
        for (int r = 0; r < R; ++r)
            for (int k = 0; k < K; ++k) {
                const double av = va.at2(r, k);
                if (av == 0.0) continue;
                const double* brow = vb.data() + static_cast<std::size_t>(k) * M;
                double* orow = out.data() + static_cast<std::size_t>(r) * M;
                for (int mcol = 0; mcol < M; ++mcol) orow[mcol] += av * brow[mcol];
            }
        return make(std::move(out), [a, b, R, K, M](Tape& t, const Node& nd) {
            const NdArray& va2 = t.value(a);
            const NdArray& vb2 = t.value(b);
            NdArray& ga = t.node(a).grad;
            NdArray& gb = t.node(b).grad;
            for (int r = 0; r < R; ++r) {
                const double* grow = nd.grad.data() + static_cast<std::size_t>(r) * M;
                for (int k = 0; k < K; ++k) {
                    const double* brow = vb2.data() + static_cast<std::size_t>(k) * M;
                    double acc = 0.0;
                    for (int mcol = 0; mcol < M; ++mcol) acc += grow[mcol] * brow[mcol];
                    ga.at2(r, k) += acc;
                    const double av = va2.at2(r, k);
                    double* gbrow = gb.data() + static_cast<std::size_t>(k) * M;
                    for (int mcol = 0; mcol < M; ++mcol) gbrow[mcol] += av * grow[mcol];
                }
            }
        });
    }

    /// Adds a row vector (M) to every row of (R,M).
    Var add_rowvec(Var x, Var v) {
        const NdArray& vx = value(x);
        const NdArray& vv = value(v);
        if (vx.ndim() != 2 || vv.ndim() != 1 || vv.dim(0) != vx.dim(1))
            throw std::invalid_argument("add_rowvec: shape mismatch");
        const int R = vx.dim(0), M = vx.dim(1);
        NdArray out = vx;
        for (int r = 0; r < R; ++r)
            for (int mcol = 0; mcol < M; ++mcol)
                out.at2(r, mcol) += vv[static_cast<std::size_t>(mcol)];
        return make(std::move(out), [x, v, R, M](Tape& t, const Node& nd) {
            accumulate(t.node(x).grad, nd.grad);
            NdArray& gv = t.node(v).grad;
            for (int r = 0; r < R; ++r)
                for (int mcol = 0; mcol < M; ++mcol)
                    gv[static_cast<std::size_t>(mcol)] += nd.grad.at2(r, mcol);
        });
    }

    Var slice_cols(Var x, int lo, int hi) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 2 || lo < 0 || hi <= lo || hi > vx.dim(1))
            throw std::invalid_argument("slice_cols: bad range");
        const int R = vx.dim(0), M = vx.dim(1), Mo = hi - lo;
        NdArray out({R, Mo});
        for (int r = 0; r < R; ++r)
            for (int mcol = 0; mcol < Mo; ++mcol) out.at2(r, mcol) = vx.at2(r, lo + mcol);
        return make(std::move(out), [x, lo, R, M, Mo](Tape& t, const Node& nd) {
            (void)M;
            NdArray& gx = t.node(x).grad;
            for (int r = 0; r < R; ++r)
                for (int mcol = 0; mcol < Mo; ++mcol) gx.at2(r, lo + mcol) += nd.grad.at2(r, mcol);
        });
    }

    // ---- 2-D image ops for the flow solver, inputs (H,W) ----

    /// Zero-padded correlation of an (H,W) image with a fixed 3×3 kernel.
    /// The kernel is constant (not a tape node), so backward correlates the
    /// gradient with the flipped kernel.
    Var conv3x3_fixed(Var x, const std::array<double, 9>& kernel) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("conv3x3_fixed: expected (H,W)");
        const int H = vx.dim(0), W = vx.dim(1);
        NdArray out({H, W});
        for (int y = 0; y < H; ++y)
            for (int xp = 0; xp < W; ++xp) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = xp + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        s += kernel[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))] *
                             vx.at2(yy, xx);
                    }
                out.at2(y, xp) = s;
            }
        return make(std::move(out), [x, kernel, H, W](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            for (int y = 0; y < H; ++y)
                for (int xp = 0; xp < W; ++xp) {
                    const double g = nd.grad.at2(y, xp);
                    if (g == 0.0) continue;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = y + dy, xx = xp + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            gx.at2(yy, xx) +=
                                g * kernel[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))];
                        }
                }
        });
    }

    /// d/dx by central differences with replicated borders on (H,W).
    Var dx_central(Var x) { return spatial_diff(x, /*horizontal=*/true, /*central=*/true); }
    Var dy_central(Var x) { return spatial_diff(x, /*horizontal=*/false, /*central=*/true); }
    /// One-sided forward differences (zero on the trailing border).
    Var dx_forward(Var x) { return spatial_diff(x, /*horizontal=*/true, /*central=*/false); }
    Var dy_forward(Var x) { return spatial_diff(x, /*horizontal=*/false, /*central=*/false); }

    /// Sum of arccos(clamp(r))² over pixels where both (u1,v1) and (u2,v2)
    /// have magnitude ≥ floor; r is the cosine similarity. Gradients flow into
    /// all four fields; the clamp's backward uses a tightened interval so the
    /// derivative stays finite at |r| = 1 (one-sided limit at r -> 1 is -2).
    Var angle_loss(Var u1, Var v1, Var u2, Var v2, double floor_mag) {
        const NdArray& a = value(u1);
        require_same_shape(a, value(v1), "angle_loss");
        require_same_shape(a, value(u2), "angle_loss");
        require_same_shape(a, value(v2), "angle_loss");
        double total = 0.0;
        const NdArray &b = value(v1), &c = value(u2), &d = value(v2);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double s1 = a[i] * a[i] + b[i] * b[i];
            const double s2 = c[i] * c[i] + d[i] * d[i];
            if (std::sqrt(s1) < floor_mag || std::sqrt(s2) < floor_mag) continue;
            // sqrt(s1*s2) instead of sqrt(s1)*sqrt(s2): identical vectors then
            // give r == 1 exactly and a zero contribution
            double r = (a[i] * c[i] + b[i] * d[i]) / std::sqrt(s1 * s2);
            r = std::clamp(r, -1.0, 1.0);
            const double th = std::acos(r);
            total += th * th;
        }
        return make(NdArray({1}, total), [u1, v1, u2, v2, floor_mag](Tape& t, const Node& nd) {
            const double g = nd.grad[0];
            if (g == 0.0) return;
            const NdArray &a2 = t.value(u1), &b2 = t.value(v1), &c2 = t.value(u2),
                          &d2 = t.value(v2);
            NdArray &ga = t.node(u1).grad, &gb = t.node(v1).grad, &gc = t.node(u2).grad,
                    &gd = t.node(v2).grad;
            for (std::size_t i = 0; i < a2.size(); ++i) {
                const double s1 = a2[i] * a2[i] + b2[i] * b2[i];
                const double s2 = c2[i] * c2[i] + d2[i] * d2[i];
                if (std::sqrt(s1) < floor_mag || std::sqrt(s2) < floor_mag) continue;
                const double dot = a2[i] * c2[i] + b2[i] * d2[i];
                const double n12 = std::sqrt(s1 * s2);
                const double r = dot / n12;
                const double rc = std::clamp(r, -1.0 + 1e-7, 1.0 - 1e-7);
                const double dtheta2_dr = -2.0 * std::acos(rc) / std::sqrt(1.0 - rc * rc);
                const double gr = g * dtheta2_dr;
                const double inv12 = 1.0 / n12;
                ga[i] += gr * (c2[i] * inv12 - r * a2[i] / s1);
                gb[i] += gr * (d2[i] * inv12 - r * b2[i] / s1);
                gc[i] += gr * (a2[i] * inv12 - r * c2[i] / s2);
                gd[i] += gr * (b2[i] * inv12 - r * d2[i] / s2);
            }
        });
    }

private:
    struct Node {
        NdArray value;
        NdArray grad;
        std::function<void(Tape&)> back;
    };

    Node& node(Var x) {
        if (!x.valid() || static_cast<std::size_t>(x.id) >= nodes_.size())
            throw std::logic_error("Tape: invalid var");
        return nodes_[static_cast<std::size_t>(x.id)];
    }
    const Node& node(Var x) const {
        if (!x.valid() || static_cast<std::size_t>(x.id) >= nodes_.size())
            throw std::logic_error("Tape: invalid var");
        return nodes_[static_cast<std::size_t>(x.id)];
    }

    template <typename F>
    Var make(NdArray value, F&& backward_fn) {
        nodes_.push_back(Node{std::move(value), NdArray(), {}});
        Node& n = nodes_.back();
        n.grad = NdArray::zeros_like(n.value);
        const int id = static_cast<int>(nodes_.size()) - 1;
        n.back = [id, fn = std::forward<F>(backward_fn)](Tape& t) {
            fn(t, t.nodes_[static_cast<std::size_t>(id)]);
        };
        return Var{id};
    }

    static void accumulate(NdArray& dst, const NdArray& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    Var spatial_diff(Var x, bool horizontal, bool central) {
        const NdArray& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("spatial_diff: expected (H,W)");
        const int H = vx.dim(0), W = vx.dim(1);
        NdArray out({H, W});
        for (int y = 0; y < H; ++y)
            for (int xp = 0; xp < W; ++xp) {
                int yp = y, xq = xp, ym = y, xm = xp;
                if (horizontal) {
                    xq = std::min(xp + 1, W - 1);
                    if (central) xm = std::max(xp - 1, 0);
                } else {
                    yp = std::min(y + 1, H - 1);
                    if (central) ym = std::max(y - 1, 0);
                }
                const double d = vx.at2(yp, xq) - vx.at2(ym, xm);
                out.at2(y, xp) = central ? 0.5 * d : d;
            }
        return make(std::move(out), [x, horizontal, central, H, W](Tape& t, const Node& nd) {
            NdArray& gx = t.node(x).grad;
            const double s = central ? 0.5 : 1.0;
            for (int y = 0; y < H; ++y)
                for (int xp = 0; xp < W; ++xp) {
                    const double g = s * nd.grad.at2(y, xp);
                    if (g == 0.0) continue;
                    int yp = y, xq = xp, ym = y, xm = xp;
                    if (horizontal) {
                        xq = std::min(xp + 1, W - 1);
                        if (central) xm = std::max(xp - 1, 0);
                    } else {
                        yp = std::min(y + 1, H - 1);
                        if (central) ym = std::max(y - 1, 0);
                    }
                    gx.at2(yp, xq) += g;
                    gx.at2(ym, xm) -= g;
                }
        });
    }

    std::vector<Node> nodes_;
};

}  // namespace hossnet

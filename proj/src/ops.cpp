#include "lune/ops.hpp"

#include "lune/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lune {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatR>;

MapC view(const double* p, std::size_t r, std::size_t c) {
    return MapC(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Products run on Eigen-owned (aligned) copies.
MatR dense(const double* p, std::size_t r, std::size_t c) { return view(p, r, c); }

void store(double* dst, const MatR& m) { std::copy(m.data(), m.data() + m.size(), dst); }

void add_into(double* dst, const MatR& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += m.data()[i];
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             " operand, got " + shape_str(t.shape()));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    store(out.data(), dense(a.data().data(), m, k) * dense(b.data().data(), k, n));
    return record_op({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](const std::vector<double>& g) {
                         const MatR G = dense(g.data(), m, n);
                         if (double* ga = grad_sink(a.impl_ptr())) {
                             add_into(ga, G * dense(b.data().data(), k, n).transpose());
                         }
                         if (double* gb = grad_sink(b.impl_ptr())) {
                             add_into(gb, dense(a.data().data(), m, k).transpose() * G);
                         }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
    if (w.dim(1) != k) {
        throw DimensionError("linear: input " + shape_str(x.shape()) +
                             " does not match weight " + shape_str(w.shape()));
    }
    std::vector<double> out(m * n);
    store(out.data(), dense(x.data().data(), m, k) * dense(w.data().data(), n, k).transpose());
    return record_op({m, n}, std::move(out), {x, w},
                     [x, w, m, k, n](const std::vector<double>& g) {
                         const MatR G = dense(g.data(), m, n);
                         if (double* gx = grad_sink(x.impl_ptr())) {
                             add_into(gx, G * dense(w.data().data(), n, k));
                         }
                         if (double* gw = grad_sink(w.impl_ptr())) {
                             add_into(gw, G.transpose() * dense(x.data().data(), m, k));
                         }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != k) {
        throw DimensionError("bmm: incompatible batches " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(B * m * n);
    for (std::size_t i = 0; i < B; ++i) {
        store(out.data() + i * m * n,
              dense(a.data().data() + i * m * k, m, k) * dense(b.data().data() + i * k * n, k, n));
    }
    return record_op({B, m, n}, std::move(out), {a, b},
                     [a, b, B, m, k, n](const std::vector<double>& g) {
                         double* ga = grad_sink(a.impl_ptr());
                         double* gb = grad_sink(b.impl_ptr());
                         for (std::size_t i = 0; i < B; ++i) {
                             const MatR G = dense(g.data() + i * m * n, m, n);
                             if (ga) add_into(ga + i * m * k, G * dense(b.data().data() + i * k * n, k, n).transpose());
                             if (gb) add_into(gb + i * k * n, dense(a.data().data() + i * m * k, m, k).transpose() * G);
                         }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return record_op(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<double>& g) {
        for (const auto& t : {a, b}) {
            if (double* gt = grad_sink(t.impl_ptr())) {
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return record_op(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<double>& g) {
        if (double* ga = grad_sink(a.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (double* gb = grad_sink(b.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return record_op(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<double>& g) {
        auto x = a.data(), y = b.data();
        if (double* ga = grad_sink(a.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (double* gb = grad_sink(b.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    return record_op(x.shape(), std::move(out), {x}, [x, factor](const std::vector<double>& g) {
        if (double* gx = grad_sink(x.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(bias, 1, "add_bias");
    if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                             " does not match trailing axis of " + shape_str(x.shape()));
    }
    const std::size_t n = bias.dim(0);
    std::vector<double> out(x.data().begin(), x.data().end());
    auto b = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
    return record_op(x.shape(), std::move(out), {x, bias},
                     [x, bias, n](const std::vector<double>& g) {
                         if (double* gx = grad_sink(x.impl_ptr())) {
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         }
                         if (double* gb = grad_sink(bias.impl_ptr())) {
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                         }
                     });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return record_op({1}, {s}, {x}, [x](const std::vector<double>& g) {
        if (double* gx = grad_sink(x.impl_ptr())) {
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * kInvSqrt2));
    }
    return record_op(x.shape(), std::move(out), {x}, [x](const std::vector<double>& g) {
        double* gx = grad_sink(x.impl_ptr());
        if (!gx) return;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        auto in = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = in[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, double eps) {
    require_rank(gain, 1, "layer_norm");
    const std::size_t d = gain.dim(0);
    if (x.rank() == 0 || x.shape().back() != d) {
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) +
                             " does not match " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    auto in = x.data();
    auto gv = gain.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mean) * inv_std[r];
            out[r * d + j] = xhat[r * d + j] * gv[j];
        }
    }
    return record_op(
        x.shape(), std::move(out), {x, gain},
        [x, gain, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const std::vector<double>& g) {
            double* gx = grad_sink(x.impl_ptr());
            double* gg = grad_sink(gain.impl_ptr());
            auto gv = gain.data();
            std::vector<double> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xr = xhat.data() + r * d;
                if (gg) {
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j];
                }
                if (!gx) continue;
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = gr[j] * gv[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xr[j];
                }
                mean_d /= static_cast<double>(d);
                mean_dx /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                }
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    auto tv = table.data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw DimensionError("embedding: id " + std::to_string(ids[t]) +
                                 " outside table of " + std::to_string(vocab) + " rows");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[t]) * d, d, out.data() + t * d);
    }
    std::vector<TokenId> kept(ids.begin(), ids.end());
    return record_op({ids.size(), d}, std::move(out), {table},
                     [table, d, kept = std::move(kept)](const std::vector<double>& g) {
                         double* gt = grad_sink(table.impl_ptr());
                         if (!gt) return;
                         for (std::size_t t = 0; t < kept.size(); ++t) {
                             double* row = gt + static_cast<std::size_t>(kept[t]) * d;
                             for (std::size_t j = 0; j < d; ++j) row[j] += g[t * d + j];
                         }
                     });
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    return swap_axes(x, 0, 1);
}

Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b) {
    const std::size_t rank = x.rank();
    if (a >= rank || b >= rank) {
        throw DimensionError("swap_axes: axes " + std::to_string(a) + "," + std::to_string(b) +
                             " invalid for " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    std::swap(out_shape[a], out_shape[b]);
    // Source stride for each output axis.
    std::vector<std::size_t> in_stride(rank), src_stride(rank);
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
        in_stride[i] = s;
        s *= x.shape()[i];
    }
    src_stride = in_stride;
    std::swap(src_stride[a], src_stride[b]);

    const std::size_t n = x.numel();
    std::vector<std::size_t> perm(n);  // output flat index -> input flat index
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < n; ++o) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += idx[i] * src_stride[i];
        perm[o] = src;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(n);
    auto in = x.data();
    for (std::size_t o = 0; o < n; ++o) out[o] = in[perm[o]];
    return record_op(out_shape, std::move(out), {x},
                     [x, perm = std::move(perm)](const std::vector<double>& g) {
                         double* gx = grad_sink(x.impl_ptr());
                         if (!gx) return;
                         for (std::size_t o = 0; o < g.size(); ++o) gx[perm[o]] += g[o];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return record_op(std::move(shape), std::move(out), {x}, [x](const std::vector<double>& g) {
        if (double* gx = grad_sink(x.impl_ptr())) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

Tensor causal_mask(const Tensor& x) {
    if (x.rank() < 2 || x.shape()[x.rank() - 1] != x.shape()[x.rank() - 2]) {
        throw DimensionError("causal_mask: trailing block must be square, got " +
                             shape_str(x.shape()));
    }
    const std::size_t T = x.shape().back();
    const std::size_t blocks = x.numel() / (T * T);
    std::vector<double> out(x.data().begin(), x.data().end());
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = i + 1; j < T; ++j) out[b * T * T + i * T + j] = kNegInf;
        }
    }
    return record_op(x.shape(), std::move(out), {x}, [x, T, blocks](const std::vector<double>& g) {
        double* gx = grad_sink(x.impl_ptr());
        if (!gx) return;
        for (std::size_t b = 0; b < blocks; ++b) {
            for (std::size_t i = 0; i < T; ++i) {
                for (std::size_t j = 0; j <= i; ++j) gx[b * T * T + i * T + j] += g[b * T * T + i * T + j];
            }
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                             shape_str(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
    const std::size_t n = x.shape()[axis];

    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t base = o * n * inner + k;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(in[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return record_op(x.shape(), std::move(out), {x},
                     [x, y, outer, inner, n](const std::vector<double>& g) {
                         double* gx = grad_sink(x.impl_ptr());
                         if (!gx) return;
                         const auto& yv = *y;
                         for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t k = 0; k < inner; ++k) {
                                 const std::size_t base = o * n * inner + k;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                     dot += g[base + j * inner] * yv[base + j * inner];
                                 }
                                 for (std::size_t j = 0; j < n; ++j) {
                                     const std::size_t p = base + j * inner;
                                     gx[p] += yv[p] * (g[p] - dot);
                                 }
                             }
                         }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> mask) {
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) throw ContractError("cross_entropy: mask selects no positions (empty loss)");
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<double> weights(mask.size());
    for (std::size_t t = 0; t < mask.size(); ++t) weights[t] = mask[t] ? inv : 0.0;
    return weighted_nll(logits, targets, weights);
}

Tensor weighted_nll(const Tensor& logits, std::span<const TokenId> targets,
                    std::span<const double> weights) {
    require_rank(logits, 2, "weighted_nll");
    const std::size_t T = logits.dim(0), V = logits.dim(1);
    if (targets.size() != T || weights.size() != T) {
        throw DimensionError("cross_entropy: " + std::to_string(T) + " logit rows but " +
                             std::to_string(targets.size()) + " targets and " +
                             std::to_string(weights.size()) + " weights");
    }
    auto in = logits.data();
    std::vector<double> probs(T * V, 0.0);
    double loss = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        if (weights[t] == 0.0) continue;
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
            throw DimensionError("cross_entropy: target id " + std::to_string(targets[t]) +
                                 " outside vocabulary of " + std::to_string(V));
        }
        const double* row = in.data() + t * V;
        const double mx = *std::max_element(row, row + V);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            probs[t * V + j] = std::exp(row[j] - mx);
            z += probs[t * V + j];
        }
        for (std::size_t j = 0; j < V; ++j) probs[t * V + j] /= z;
        loss -= weights[t] * ((row[static_cast<std::size_t>(targets[t])] - mx) - std::log(z));
    }
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    std::vector<double> w(weights.begin(), weights.end());
    return record_op({1}, {loss}, {logits},
                     [logits, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), T,
                      V](const std::vector<double>& g) {
                         double* gl = grad_sink(logits.impl_ptr());
                         if (!gl) return;
                         for (std::size_t t = 0; t < T; ++t) {
                             if (w[t] == 0.0) continue;
                             const double s = g[0] * w[t];
                             for (std::size_t j = 0; j < V; ++j) gl[t * V + j] += s * probs[t * V + j];
                             gl[t * V + static_cast<std::size_t>(tgt[t])] -= s;
                         }
                     });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
    if (p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double factor = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? factor : 0.0;
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
    return record_op(x.shape(), std::move(out), {x},
                     [x, mask = std::move(mask)](const std::vector<double>& g) {
                         if (double* gx = grad_sink(x.impl_ptr())) {
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                         }
                     });
}

}  // namespace lune

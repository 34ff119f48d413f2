#include "lune/gradcheck.hpp"

#include "lune/error.hpp"
#include "lune/lora.hpp"
#include "lune/ops.hpp"

#include <algorithm>
#include <cmath>

namespace lune {

double gradient_rel_error(const LossBuilder& loss, std::vector<Tensor> inputs, double h) {
    for (auto& t : inputs) t.clear_grad();
    Tensor out = loss(inputs);
    backward(out);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    NoGradGuard guard;
    for (auto& t : inputs) {
        if (!t.requires_grad()) continue;
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
        auto d = t.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double keep = d[i];
            d[i] = keep + h;
            const double fp = loss(inputs).item();
            d[i] = keep - h;
            const double fm = loss(inputs).item();
            d[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

namespace {

Tensor randn(Rng& rng, Shape shape, bool grad = true, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts an arbitrary-shaped output with fixed random weights so every
// output entry contributes to the scalar being differentiated.
LossBuilder weighted(std::function<Tensor(const std::vector<Tensor>&)> f, Tensor weights) {
    return [f = std::move(f), weights](const std::vector<Tensor>& in) {
        return sum(mul(f(in), weights));
    };
}

using Instance = std::pair<std::vector<Tensor>, LossBuilder>;

GradCheckCase unary(std::string name, std::function<Tensor(const Tensor&)> f,
                    std::function<Shape(Rng&)> shape_fn) {
    return {name, [f, shape_fn](std::uint64_t seed) -> Instance {
                Rng rng(seed);
                Shape s = shape_fn(rng);
                Tensor x = randn(rng, s);
                Tensor probe = f(x.detach());
                Tensor w = randn(rng, probe.shape(), false);
                return {{x}, weighted([f](const std::vector<Tensor>& in) { return f(in[0]); }, w)};
            }};
}

Shape small_matrix(Rng& rng) { return {draw(rng, 1, 5), draw(rng, 1, 6)}; }

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases() {
    std::vector<GradCheckCase> cases;

    cases.push_back({"matmul", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t m = draw(rng, 1, 5), k = draw(rng, 1, 5), n = draw(rng, 1, 5);
                         Tensor a = randn(rng, {m, k}), b = randn(rng, {k, n});
                         Tensor w = randn(rng, {m, n}, false);
                         return {{a, b}, weighted([](const auto& in) { return matmul(in[0], in[1]); }, w)};
                     }});
    cases.push_back({"linear", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t t = draw(rng, 1, 5), i = draw(rng, 1, 5), o = draw(rng, 1, 5);
                         Tensor x = randn(rng, {t, i}), wt = randn(rng, {o, i});
                         Tensor w = randn(rng, {t, o}, false);
                         return {{x, wt}, weighted([](const auto& in) { return linear(in[0], in[1]); }, w)};
                     }});
    cases.push_back({"bmm", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t bt = draw(rng, 1, 3), m = draw(rng, 1, 4), k = draw(rng, 1, 4),
                                           n = draw(rng, 1, 4);
                         Tensor a = randn(rng, {bt, m, k}), b = randn(rng, {bt, k, n});
                         Tensor w = randn(rng, {bt, m, n}, false);
                         return {{a, b}, weighted([](const auto& in) { return bmm(in[0], in[1]); }, w)};
                     }});
    auto binary = [](std::string name, Tensor (*op)(const Tensor&, const Tensor&)) {
        return GradCheckCase{name, [op](std::uint64_t seed) -> Instance {
                                 Rng rng(seed);
                                 Shape s = small_matrix(rng);
                                 Tensor a = randn(rng, s), b = randn(rng, s);
                                 Tensor w = randn(rng, s, false);
                                 return {{a, b}, weighted([op](const auto& in) { return op(in[0], in[1]); }, w)};
                             }};
    };
    cases.push_back(binary("add", &add));
    cases.push_back(binary("sub", &sub));
    cases.push_back(binary("mul", &mul));
    cases.push_back(unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, small_matrix));
    cases.push_back({"add_bias", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         Shape s = small_matrix(rng);
                         Tensor x = randn(rng, s), bias = randn(rng, {s[1]});
                         Tensor w = randn(rng, s, false);
                         return {{x, bias}, weighted([](const auto& in) { return add_bias(in[0], in[1]); }, w)};
                     }});
    cases.push_back(unary("sum", [](const Tensor& x) { return sum(x); }, small_matrix));
    cases.push_back(unary("gelu", [](const Tensor& x) { return gelu(x); }, small_matrix));
    cases.push_back({"layer_norm", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t t = draw(rng, 1, 4), d = draw(rng, 2, 6);
                         Tensor x = randn(rng, {t, d}), g = randn(rng, {d});
                         Tensor w = randn(rng, {t, d}, false);
                         return {{x, g}, weighted([](const auto& in) { return layer_norm(in[0], in[1]); }, w)};
                     }});
    cases.push_back({"embedding", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t v = draw(rng, 2, 6), d = draw(rng, 1, 4), t = draw(rng, 1, 6);
                         Tensor table = randn(rng, {v, d});
                         std::vector<TokenId> ids(t);
                         for (auto& id : ids) id = static_cast<TokenId>(draw(rng, 0, v - 1));
                         Tensor w = randn(rng, {t, d}, false);
                         return {{table}, weighted([ids](const auto& in) { return embedding(in[0], ids); }, w)};
                     }});
    cases.push_back(unary("transpose", [](const Tensor& x) { return transpose(x); }, small_matrix));
    cases.push_back(unary(
        "swap_axes", [](const Tensor& x) { return swap_axes(x, 0, 2); },
        [](Rng& rng) { return Shape{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 4)}; }));
    cases.push_back(unary(
        "reshape", [](const Tensor& x) { return reshape(x, {x.numel()}); },
        [](Rng& rng) { return Shape{draw(rng, 1, 3), draw(rng, 1, 4)}; }));
    cases.push_back(unary(
        "softmax", [](const Tensor& x) { return softmax(x, x.rank() - 1); },
        [](Rng& rng) { return Shape{draw(rng, 1, 3), draw(rng, 2, 5)}; }));
    cases.push_back(unary(
        "softmax_inner_axis", [](const Tensor& x) { return softmax(x, 1); },
        [](Rng& rng) { return Shape{draw(rng, 1, 3), draw(rng, 2, 4), draw(rng, 1, 3)}; }));
    cases.push_back(unary(
        "causal_mask", [](const Tensor& x) { return softmax(causal_mask(x), 2); },
        [](Rng& rng) {
            const std::size_t t = draw(rng, 1, 5);
            return Shape{draw(rng, 1, 3), t, t};
        }));
    cases.push_back({"cross_entropy", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t t = draw(rng, 1, 5), v = draw(rng, 2, 6);
                         Tensor logits = randn(rng, {t, v});
                         std::vector<TokenId> targets(t);
                         std::vector<std::uint8_t> mask(t);
                         for (std::size_t i = 0; i < t; ++i) {
                             targets[i] = static_cast<TokenId>(draw(rng, 0, v - 1));
                             mask[i] = static_cast<std::uint8_t>(draw(rng, 0, 1));
                         }
                         mask[draw(rng, 0, t - 1)] = 1;
                         return {{logits}, [targets, mask](const auto& in) {
                                     return cross_entropy(in[0], targets, mask);
                                 }};
                     }});
    cases.push_back({"dropout", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         Shape s = small_matrix(rng);
                         Tensor x = randn(rng, s);
                         Tensor w = randn(rng, s, false);
                         const std::uint64_t mask_seed = rng();
                         return {{x}, weighted(
                                          [mask_seed](const auto& in) {
                                              Rng r(mask_seed);
                                              return dropout(in[0], 0.3, r);
                                          },
                                          w)};
                     }});
    cases.push_back({"lora_linear", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         const std::size_t t = draw(rng, 1, 4), din = draw(rng, 2, 6), dout = draw(rng, 2, 6);
                         const std::size_t r = draw(rng, 1, std::min(din, dout));
                         Tensor x = randn(rng, {t, din});
                         Tensor w0 = randn(rng, {dout, din}, false);
                         w0.freeze();
                         Tensor a = randn(rng, {dout, r}), b = randn(rng, {din, r});
                         Tensor w = randn(rng, {t, dout}, false);
                         const std::uint64_t mask_seed = rng();
                         return {{x, a, b}, weighted(
                                                [w0, r, mask_seed](const auto& in) {
                                                    LoraAdapter ad{in[1], in[2], 2.0 * static_cast<double>(r), 0.1};
                                                    Rng dr(mask_seed);
                                                    return lora_linear(in[0], w0, ad, &dr);
                                                },
                                                w)};
                     }});
    cases.push_back({"adapted_transformer", [](std::uint64_t seed) -> Instance {
                         Rng rng(seed);
                         ModelConfig c{7, 4, 1, 2, 8, 5, seed};
                         TransformerModel base(c);
                         InjectionPlan plan = InjectionPlan::standard(c, 2);
                         auto adapted = std::make_shared<AdaptedModel>(inject(base, plan, seed + 1));
                         std::vector<Tensor> leaves;
                         for (auto& p : adapted->trainable_parameters()) {
                             auto d = p.tensor.data();
                             for (auto& v : d) v = std::normal_distribution<double>(0.0, 0.5)(rng);
                             leaves.push_back(p.tensor);
                         }
                         const std::size_t t = draw(rng, 2, 5);
                         std::vector<TokenId> ids(t), targets(t);
                         for (std::size_t i = 0; i < t; ++i) {
                             ids[i] = static_cast<TokenId>(draw(rng, 0, 6));
                             targets[i] = static_cast<TokenId>(draw(rng, 0, 6));
                         }
                         std::vector<std::uint8_t> mask(t, 1);
                         return {leaves, [adapted, ids, targets, mask](const auto&) {
                                     return cross_entropy(adapted->forward(ids, nullptr), targets, mask);
                                 }};
                     }});
    return cases;
}

std::vector<GradCheckResult> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                           std::uint64_t seed, std::size_t instances,
                                           double tolerance, double h) {
    std::vector<GradCheckResult> out;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        GradCheckResult r{cases[c].op, instances, 0.0, true};
        for (std::size_t i = 0; i < instances; ++i) {
            auto [inputs, loss] = cases[c].make(seed * 1000003ULL + c * 7919ULL + i);
            const double err = gradient_rel_error(loss, inputs, h);
            r.max_rel_error = std::max(r.max_rel_error, std::isnan(err) ? INFINITY : err);
        }
        r.passed = r.max_rel_error < tolerance;
        out.push_back(r);
    }
    return out;
}

}  // namespace lune

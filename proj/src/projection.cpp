#include "lune/projection.hpp"

#include "lune/error.hpp"
#include "lune/ops.hpp"
#include "lune/trainer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>

namespace lune {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))};
}

Tensor from_matrix(const RowMat& m) {
    return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                        std::vector<double>(m.data(), m.data() + m.size()));
}

RowMat gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    RowMat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

RowMat orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
    RowMat g = gaussian(rows, cols, 1.0, rng);
    Eigen::HouseholderQR<RowMat> qr(g);
    RowMat q = qr.householderQ() * RowMat::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return q;
}

}  // namespace

const char* layer_loss_name(LayerLoss k) {
    switch (k) {
        case LayerLoss::kQuadratic: return "quadratic";
        case LayerLoss::kLinear: return "linear";
        case LayerLoss::kCrossEntropy: return "cross_entropy";
    }
    return "?";
}

std::optional<LayerLoss> parse_layer_loss(std::string_view s) {
    if (s == "quadratic") return LayerLoss::kQuadratic;
    if (s == "linear") return LayerLoss::kLinear;
    if (s == "cross_entropy") return LayerLoss::kCrossEntropy;
    return std::nullopt;
}

void ProjectionProbe::validate() const {
    if (rank == 0 || rank > std::min(d_out, d_in)) {
        throw ConfigError("probe rank " + std::to_string(rank) + " outside [1, " +
                          std::to_string(std::min(d_out, d_in)) + "]");
    }
    if (W0.shape() != Shape{d_out, d_in} || A.shape() != Shape{d_out, rank} || B.shape() != Shape{d_in, rank}) {
        throw DimensionError("probe factors do not match W0 " + shape_str(W0.shape()));
    }
}

ProjectionProbe make_probe(const ProbeSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    ProjectionProbe p;
    p.d_out = spec.d_out;
    p.d_in = spec.d_in;
    p.rank = spec.rank;
    p.loss = spec.loss;
    if (spec.rank == 0 || spec.rank > std::min(spec.d_out, spec.d_in)) {
        throw ConfigError("probe rank " + std::to_string(spec.rank) + " outside [1, " +
                          std::to_string(std::min(spec.d_out, spec.d_in)) + "]");
    }
    p.W0 = from_matrix(gaussian(spec.d_out, spec.d_in, 1.0 / std::sqrt(static_cast<double>(spec.d_in)), rng));
    RowMat A, B;
    if (spec.orthonormal) {
        A = orthonormal_columns(spec.d_out, spec.rank, rng);
        B = orthonormal_columns(spec.d_in, spec.rank, rng);
    } else {
        A = gaussian(spec.d_out, spec.rank, 0.5, rng);
        B = gaussian(spec.d_in, spec.rank, 0.5, rng);
    }
    if (spec.zero_A) A.setZero();
    if (spec.zero_B) B.setZero();
    p.A = from_matrix(A);
    p.B = from_matrix(B);
    p.X = from_matrix(gaussian(spec.batch, spec.d_in, 1.0, rng));
    switch (spec.loss) {
        case LayerLoss::kQuadratic:
            p.T = from_matrix(gaussian(spec.batch, spec.d_out, 1.0, rng));
            break;
        case LayerLoss::kLinear:
            p.T = from_matrix(gaussian(spec.d_out, spec.d_in, 1.0, rng));
            break;
        case LayerLoss::kCrossEntropy: {
            std::uniform_int_distribution<TokenId> cls(0, static_cast<TokenId>(spec.d_out - 1));
            for (std::size_t i = 0; i < spec.batch; ++i) p.labels.push_back(cls(rng));
            break;
        }
    }
    return p;
}

Tensor probe_loss(const ProjectionProbe& probe, const Tensor& W) {
    switch (probe.loss) {
        case LayerLoss::kQuadratic: {
            Tensor r = sub(linear(probe.X, W), probe.T);
            return scale(sum(mul(r, r)), 0.5);
        }
        case LayerLoss::kLinear:
            return sum(mul(probe.T, W));
        case LayerLoss::kCrossEntropy: {
            std::vector<std::uint8_t> mask(probe.labels.size(), 1);
            return cross_entropy(linear(probe.X, W), probe.labels, mask);
        }
    }
    throw ContractError("unknown probe loss");
}

Tensor effective_weight(const ProjectionProbe& probe) {
    return from_matrix(view(probe.W0) + view(probe.A) * view(probe.B).transpose());
}

Tensor full_gradient(const ProjectionProbe& probe) {
    probe.validate();
    Tensor W = effective_weight(probe);
    W.set_requires_grad(true);
    backward(probe_loss(probe, W));
    Tensor g = Tensor::zeros(W.shape());
    if (W.has_grad()) std::copy(W.grad().begin(), W.grad().end(), g.data().begin());
    return g;
}

Tensor projected_direction(const Tensor& A, const Tensor& B, const Tensor& g) {
    if (A.rank() != 2 || B.rank() != 2 || g.rank() != 2 || g.dim(0) != A.dim(0) || g.dim(1) != B.dim(0) ||
        A.dim(1) != B.dim(1)) {
        throw DimensionError("projected_direction: g " + shape_str(g.shape()) + " incompatible with A " +
                             shape_str(A.shape()) + " and B " + shape_str(B.shape()));
    }
    const auto a = view(A), b = view(B), gm = view(g);
    return from_matrix(gm * b * b.transpose() + a * a.transpose() * gm);
}

FirstOrderReport verify_first_order(const ProjectionProbe& probe, const std::vector<double>& etas,
                                    double max_decay) {
    probe.validate();
    const Tensor g = full_gradient(probe);
    const RowMat pi = view(projected_direction(probe.A, probe.B, g));
    const RowMat before = view(probe.A) * view(probe.B).transpose();

    FirstOrderReport report;
    double prev = -1.0;
    bool ok = true;
    for (double eta : etas) {
        std::vector<Tensor> params{probe.A.clone(), probe.B.clone()};
        for (auto& t : params) t.set_requires_grad(true);
        Tensor W = add(probe.W0, matmul(params[0], transpose(params[1])));
        backward(probe_loss(probe, W));
        Sgd().step(params, eta);
        const RowMat after = view(params[0]) * view(params[1]).transpose();
        const double residual = ((after - before) + eta * pi).norm();

        ResidualRow row{eta, residual, 0.0};
        if (prev >= 0.0) {
            if (prev == 0.0) {
                row.ratio = residual == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            } else {
                row.ratio = residual / prev;
            }
            report.max_ratio = std::max(report.max_ratio, row.ratio);
            ok = ok && row.ratio <= max_decay;
        }
        prev = residual;
        report.rows.push_back(row);
    }
    report.passed = ok;
    return report;
}

std::vector<LayerKind> injected_layer_kinds(const ModelConfig& config) {
    return {{"attention", config.d_model, config.d_model},
            {"ffn_up", config.d_ff, config.d_model},
            {"ffn_down", config.d_model, config.d_ff}};
}

std::vector<ProjectionSuiteRow> run_projection_suite(const ModelConfig& config, std::size_t rank,
                                                     const std::vector<LayerLoss>& losses,
                                                     std::size_t n_seeds, std::uint64_t seed,
                                                     const std::vector<double>& etas, double max_decay) {
    std::vector<ProjectionSuiteRow> rows;
    for (const auto& kind : injected_layer_kinds(config)) {
        for (LayerLoss loss : losses) {
            for (std::size_t i = 0; i < n_seeds; ++i) {
                const std::uint64_t s =
                    derive_seed(seed, kind.name + "/" + layer_loss_name(loss) + "/" + std::to_string(i));
                ProbeSpec spec;
                spec.d_out = kind.d_out;
                spec.d_in = kind.d_in;
                spec.rank = rank;
                spec.loss = loss;
                rows.push_back({kind.name, loss, s, verify_first_order(make_probe(spec, s), etas, max_decay)});
            }
        }
    }
    return rows;
}

ReferenceArch mistral_7b() {
    return {"Mistral-7B", 32000, 4096, 32, 32, 8, 14336, true, false};
}

std::size_t reference_param_count(const ReferenceArch& a) {
    const std::size_t head_dim = a.d_model / a.n_heads;
    const std::size_t kv = a.n_kv_heads * head_dim;
    const std::size_t attn = 2 * a.d_model * a.d_model + 2 * a.d_model * kv;
    const std::size_t ffn = (a.gated_ffn ? 3 : 2) * a.d_model * a.d_ff;
    const std::size_t norms = 2 * a.d_model;
    const std::size_t embed = a.vocab * a.d_model;
    return a.n_layers * (attn + ffn + norms) + a.d_model + embed * (a.tied_head ? 1 : 2);
}

std::size_t reference_lora_count(const ReferenceArch& a, std::size_t rank) {
    const std::size_t kv = a.n_kv_heads * (a.d_model / a.n_heads);
    const std::size_t per_layer = (a.d_model + a.d_model)   // q
                                  + (a.d_model + kv)        // k
                                  + (a.d_model + kv)        // v
                                  + (a.d_model + a.d_model) // o
                                  + (a.d_model + a.d_ff)    // up
                                  + (a.d_ff + a.d_model);   // down
    return rank * per_layer * a.n_layers;
}

ComplexityReport complexity_report(const ModelConfig& config, const InjectionPlan& plan, std::size_t n_neg,
                                   std::size_t n_full) {
    ComplexityReport r;
    r.params = count_params(config);
    r.lora_params = count_lora_params(plan);
    r.ratio = static_cast<double>(r.lora_params) / static_cast<double>(r.params);
    r.adam_state_full = 2 * r.params;
    r.adam_state_lune = 2 * r.lora_params;
    r.n_neg = n_neg;
    r.n_full = n_full;
    const ReferenceArch ref = mistral_7b();
    r.reference_name = ref.name;
    r.reference_params = reference_param_count(ref);
    r.reference_lora_params = reference_lora_count(ref, 16);
    r.reference_ratio = static_cast<double>(r.reference_lora_params) / static_cast<double>(r.reference_params);
    return r;
}

}  // namespace lune

#pragma once

#include "lune/lora.hpp"
#include "lune/model.hpp"
#include "lune/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lune {

enum class LayerLoss { kQuadratic, kLinear, kCrossEntropy };

const char* layer_loss_name(LayerLoss k);
std::optional<LayerLoss> parse_layer_loss(std::string_view s);

// A single linear layer W = W0 + A B^T (alpha / r folded into the step size)
// with a loss over a fixed input batch.
struct ProjectionProbe {
    std::size_t d_out = 0;
    std::size_t d_in = 0;
    std::size_t rank = 0;
    LayerLoss loss = LayerLoss::kCrossEntropy;
    Tensor W0;  // [d_out x d_in]
    Tensor A;   // [d_out x r]
    Tensor B;   // [d_in x r]
    Tensor X;   // [n x d_in]
    Tensor T;   // quadratic targets [n x d_out]; linear coefficients [d_out x d_in]
    std::vector<TokenId> labels;  // cross-entropy classes, one per row of X

    void validate() const;
};

struct ProbeSpec {
    std::size_t d_out = 64;
    std::size_t d_in = 64;
    std::size_t rank = 16;
    std::size_t batch = 8;
    LayerLoss loss = LayerLoss::kCrossEntropy;
    bool zero_B = false;       // the usual B = 0 adapter init
    bool zero_A = false;
    bool orthonormal = false;  // A and B with orthonormal columns
};

ProjectionProbe make_probe(const ProbeSpec& spec, std::uint64_t seed);

// Loss of the probe at effective weight W.
Tensor probe_loss(const ProjectionProbe& probe, const Tensor& W);

// W0 + A B^T as a detached tensor.
Tensor effective_weight(const ProjectionProbe& probe);

// g = d loss / d W at W = W0 + A B^T.
Tensor full_gradient(const ProjectionProbe& probe);

// g B B^T + A A^T g.
Tensor projected_direction(const Tensor& A, const Tensor& B, const Tensor& g);

struct ResidualRow {
    double eta = 0.0;
    double residual = 0.0;  // || change(A B^T) + eta * projected ||_F
    double ratio = 0.0;     // residual(eta) / residual(previous eta); 0 for the first row
};

struct FirstOrderReport {
    std::vector<ResidualRow> rows;
    double max_ratio = 0.0;
    bool passed = false;
};

// Takes one real SGD step on (A, B) through autograd for each eta and
// compares the induced change of A B^T against -eta * projected direction.
FirstOrderReport verify_first_order(const ProjectionProbe& probe, const std::vector<double>& etas,
                                    double max_decay = 0.3);

struct LayerKind {
    std::string name;
    std::size_t d_out = 0;
    std::size_t d_in = 0;
};

// Attention (d x d) and FFN (d_ff x d, d x d_ff) shapes of a model config.
std::vector<LayerKind> injected_layer_kinds(const ModelConfig& config);

struct ProjectionSuiteRow {
    std::string layer;
    LayerLoss loss = LayerLoss::kCrossEntropy;
    std::uint64_t seed = 0;
    FirstOrderReport report;
};

std::vector<ProjectionSuiteRow> run_projection_suite(const ModelConfig& config, std::size_t rank,
                                                     const std::vector<LayerLoss>& losses,
                                                     std::size_t n_seeds, std::uint64_t seed,
                                                     const std::vector<double>& etas = {1e-2, 5e-3, 2.5e-3},
                                                     double max_decay = 0.3);

// Architecture description sufficient for exact parameter counts.
struct ReferenceArch {
    std::string name;
    std::size_t vocab = 0;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t d_ff = 0;
    bool gated_ffn = false;  // gate, up and down projections
    bool tied_head = false;
};

ReferenceArch mistral_7b();

std::size_t reference_param_count(const ReferenceArch& arch);
// LoRA on the four attention projections and the FFN up/down projections of every layer.
std::size_t reference_lora_count(const ReferenceArch& arch, std::size_t rank);

struct ComplexityReport {
    std::size_t params = 0;
    std::size_t lora_params = 0;
    double ratio = 0.0;
    std::size_t adam_state_full = 0;
    std::size_t adam_state_lune = 0;
    std::size_t n_neg = 0;
    std::size_t n_full = 0;
    double epoch_seconds_lune = -1.0;  // measured when available
    double epoch_seconds_full = -1.0;
    std::string reference_name;
    std::size_t reference_params = 0;
    std::size_t reference_lora_params = 0;
    double reference_ratio = 0.0;
};

ComplexityReport complexity_report(const ModelConfig& config, const InjectionPlan& plan, std::size_t n_neg,
                                   std::size_t n_full);

}  // namespace lune

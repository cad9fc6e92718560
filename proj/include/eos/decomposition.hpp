#pragma once

#include "eos/criterion.hpp"
#include "eos/dataset.hpp"
#include "eos/linalg.hpp"
#include "eos/model.hpp"
#include "eos/parallel.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace eos::decomposition {

using linalg::Mat;
using linalg::Vec;

// Per-layer blocks K^i = R·(∂f/∂A^i | ∂f/∂b^i), element i-1 for layer i.
std::vector<Mat> build_K(const model::MlpModel& model, const model::ForwardTrace& trace,
                         const criterion::OutputCurvature& curvature);

// Δ^i = √(1 + ‖x^{i-1}‖²)·R·∂f/∂x̂^i, 1 <= i <= L.
Mat build_delta(const model::MlpModel& model, const model::ForwardTrace& trace,
                const criterion::OutputCurvature& curvature, std::size_t i);

// All Δ^i through the recursion Δ^i = χ^i·Δ^{i+1}·∂x̂^{i+1}/∂x̂^i starting
// from Δ^L = √(1 + ‖x^{L-1}‖²)·R. Element i-1 holds Δ^i.
std::vector<Mat> build_delta_recursive(const model::MlpModel& model, const model::ForwardTrace& trace,
                                       const criterion::OutputCurvature& curvature);

// χ^i = √((1 + ‖x^{i-1}‖²) / (1 + ‖x^i‖²)), 1 <= i <= L-1.
double chi_ratio(const model::ForwardTrace& trace, std::size_t i);

// Squared operator norm of a short-wide (or tall) matrix through the
// eigenvalues of the smaller Gram matrix.
double squared_operator_norm(const Mat& m);

// ρ(K) = λ₁(G) / E‖K‖²_max. Throws ConsistencyError outside [-1e-9, 1+1e-9].
double overlap_ratio(double lambda1_g, double e_k_norm_sq);

// r(M₁, M₂) = E‖M₁M₂‖² / (E‖M₁‖²·E‖M₂‖²).
double alignment_ratio(double e_prod_sq, double e_a_sq, double e_b_sq);

// Everything measured for one (x, y).
struct SampleCurvatureSlice {
    std::vector<Mat> k_blocks;    // K^i (only when materialized)
    std::vector<Mat> delta;       // Δ^i, i = 1..L
    double k_norm_sq = 0.0;       // ‖K‖²_max
    Vec k_block_norm_sq;          // ‖K^i‖²_max, i = 1..L
    Vec delta_norm_sq;            // ‖Δ^i‖²_max, i = 1..L
    Vec chi_sq;                   // (χ^i)², i = 1..L-1
    Vec layerwise_jac_norm_sq;    // ‖∂x̂^{i+1}/∂x̂^i‖²_max, i = 1..L-1
    Vec product_norm_sq;          // ‖Δ^{i+1}·∂x̂^{i+1}/∂x̂^i‖²_max, i = 1..L-1
    Vec scaled_delta_norm_sq;     // ‖Δ^i/χ^i‖²_max, i = 1..L-1
};

struct SliceOptions {
    bool keep_matrices = false;  // retain K^i and Δ^i in the slice
    double jac_norm_tol = 1e-8;  // power-iteration tolerance for layerwise Jacobians
};

SampleCurvatureSlice compute_slice(const model::MlpModel& model, std::span<const double> x, std::size_t y,
                                   const criterion::CriterionKind& kind, const SliceOptions& opts = {});

// Dataset means of the slice quantities.
struct LayerExpectations {
    std::size_t samples = 0;
    double k_norm_sq = 0.0;
    Vec k_block_norm_sq;
    Vec delta_norm_sq;
    Vec chi_sq;
    Vec layerwise_jac_norm_sq;
    Vec product_norm_sq;
    Vec scaled_delta_norm_sq;
};

LayerExpectations expectations(const model::MlpModel& model, const LabeledDataset& data,
                               const criterion::CriterionKind& kind, const ExecOptions& exec = {},
                               const SliceOptions& opts = {});

// Per-layer ratios and the start-layer products of the five-factor chain
//   E‖Δ^k‖² = Π_χ^k · P^k_{χ,Δ/χ} · Π_J^k · P^k_{Δ,J} · E‖Δ^L‖².
// All vectors are indexed by layer/start layer 1..L-1 at position i-1.
struct FactorChain {
    Vec chi_sq;          // E(χ^i)²
    Vec jac_norm_sq;     // E‖∂x̂^{i+1}/∂x̂^i‖²
    Vec align_chi;       // r(χ^i I, Δ^i/χ^i)
    Vec align_dJ;        // r(Δ^{i+1}, ∂x̂^{i+1}/∂x̂^i)
    Vec pi_chi;          // Π_χ^k
    Vec p_chi_delta;     // P^k_{χ,Δ/χ}
    Vec pi_J;            // Π_J^k
    Vec p_delta_J;       // P^k_{Δ,J}
    double e_deltaL_norm_sq = 0.0;
};

FactorChain factor_chain(const LayerExpectations& e);

// Rebuilds the start-layer products from the per-layer ratios.
void fill_products(FactorChain& chain);

struct FactorSet {
    double pi_chi = 0.0;
    double p_chi_delta = 0.0;
    double pi_J = 0.0;
    double p_delta_J = 0.0;
    double e_deltaL_norm_sq = 0.0;

    double product() const { return pi_chi * p_chi_delta * pi_J * p_delta_J * e_deltaL_norm_sq; }
};

FactorSet decomposition_factors(const model::MlpModel& model, const LabeledDataset& data,
                                const criterion::CriterionKind& kind, std::size_t k, const ExecOptions& exec = {});
FactorSet factors_at(const FactorChain& chain, std::size_t k);

// All per-snapshot scalars.
struct DecompositionRecord {
    std::size_t step = 0;
    double t = 0.0;
    double loss = 0.0;
    double lambda1_full = 0.0;
    double lambda1_G = 0.0;
    double lambda1_H = 0.0;
    double rho_K = 0.0;
    double e_K_norm_sq = 0.0;
    Vec e_Ki_norm_sq;       // i = 1..L
    FactorChain chain;      // per-layer ratios, start-layer products, E‖Δ^L‖²

    std::size_t depth() const noexcept { return e_Ki_norm_sq.size(); }
};

// Reference step for the counterfactual bound.
inline constexpr std::size_t kBaselineStep = 10;

// ρ(K)(t)·Σ_i (P^i_{Δ,J}(t)/P^i_{Δ,J}(baseline))·E‖Δ^i‖²(t), the sharpness bound
// under frozen layerwise alignment. P^L is the empty product 1. Throws
// AnalysisError when no record sits at `baseline_step` or at `step`.
double counterfactual_bound(std::span<const DecompositionRecord> records, std::size_t step,
                            std::size_t baseline_step = kBaselineStep);

}  // namespace eos::decomposition

#pragma once

#include "eos/criterion.hpp"
#include "eos/dataset.hpp"
#include "eos/linalg.hpp"
#include "eos/model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>

namespace eos::spectral {

using linalg::Mat;
using linalg::Vec;

// Symmetric linear map on R^dim given only by its action on vectors.
struct LinearOperator {
    std::size_t dim = 0;
    std::function<Vec(std::span<const double>)> apply;

    Vec operator()(std::span<const double> v) const { return apply(v); }
};

LinearOperator dense_operator(Mat m);

// Top-k eigenpairs ordered by |λ| descending.
struct SpectrumEstimate {
    Vec eigenvalues;
    Mat eigenvectors;  // dim x k, orthonormal columns
    std::size_t iterations_used = 0;
    bool converged = false;

    std::size_t size() const noexcept { return eigenvalues.size(); }
};

// Stopping threshold for eigenvalue deltas during snapshot analysis and
// inside the training loop, respectively.
inline constexpr double kAnalysisTol = 1e-6;
inline constexpr double kTrainingTol = 1e-3;

// Block power iteration: W = op(Ṽ), QR(W) = Q·Rf, Λ̃ from diag(Rf) (signed
// by the agreement of Q with Ṽ), Ṽ ← Q, until max_j |ΔΛ̃_j| < tol·max(|Λ̃_j|, 1e-12).
// A warm start seeds Ṽ₀ and Λ̃₀ from a previous estimate; otherwise Ṽ₀ is
// random and Λ̃₀ = ∞. On hitting max_iters the best estimate is returned with
// converged = false.
SpectrumEstimate power_iterate(const LinearOperator& op, std::size_t k, const SpectrumEstimate* warm, double tol,
                               std::size_t max_iters, std::uint64_t seed = 0x5eed);

LinearOperator hessian_operator(std::shared_ptr<const model::LossEvaluation> eval);
LinearOperator g_operator(std::shared_ptr<const model::LossEvaluation> eval);
LinearOperator h_operator(std::shared_ptr<const model::LossEvaluation> eval);

// Convenience overloads that evaluate the loss at the model's parameters.
// The dataset must outlive the returned operator.
LinearOperator hessian_operator(const model::MlpModel& model, const LabeledDataset& data,
                                const criterion::CriterionKind& kind);
LinearOperator g_operator(const model::MlpModel& model, const LabeledDataset& data,
                          const criterion::CriterionKind& kind);
LinearOperator h_operator(const model::MlpModel& model, const LabeledDataset& data,
                          const criterion::CriterionKind& kind);

// Replaces negative eigenvalues with NaN so they drop out of aggregation.
SpectrumEstimate sanitize_spectrum(SpectrumEstimate s);

// Fraction of NaN entries among eigenvalues.
double nan_fraction(const SpectrumEstimate& s);

// Materializes op column by column (dim applications).
Mat materialize(const LinearOperator& op);

}  // namespace eos::spectral

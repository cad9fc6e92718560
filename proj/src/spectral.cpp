#include "eos/spectral.hpp"

#include "eos/error.hpp"
#include "eos/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace eos::spectral {

LinearOperator dense_operator(Mat m) {
    if (m.rows() != m.cols()) throw ShapeError("dense_operator: matrix must be square");
    const std::size_t n = m.rows();
    auto shared = std::make_shared<const Mat>(std::move(m));
    return {n, [shared](std::span<const double> v) { return linalg::matvec(*shared, v); }};
}

namespace {

SpectrumEstimate sorted_by_magnitude(const Vec& values, const Mat& vectors, std::size_t iters, bool converged) {
    const std::size_t k = values.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(values[a]) > std::abs(values[b]); });
    SpectrumEstimate out;
    out.eigenvalues.resize(k);
    out.eigenvectors = Mat(vectors.rows(), k);
    for (std::size_t j = 0; j < k; ++j) {
        out.eigenvalues[j] = values[order[j]];
        for (std::size_t r = 0; r < vectors.rows(); ++r) out.eigenvectors(r, j) = vectors(r, order[j]);
    }
    out.iterations_used = iters;
    out.converged = converged;
    return out;
}

}  // namespace

SpectrumEstimate power_iterate(const LinearOperator& op, std::size_t k, const SpectrumEstimate* warm, double tol,
                               std::size_t max_iters, std::uint64_t seed) {
    if (k < 1) throw ArgumentError("power_iterate: k must be >= 1");
    if (!(tol > 0.0)) throw ArgumentError("power_iterate: tol must be positive");
    const std::size_t n = op.dim;
    if (k > n) throw ArgumentError("power_iterate: k exceeds operator dimension");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    Mat start(n, k);
    Vec previous(k, kInf);
    Rng rng(seed);
    std::size_t seeded = 0;
    if (warm && warm->eigenvectors.rows() == n) {
        seeded = std::min(k, warm->eigenvectors.cols());
        for (std::size_t j = 0; j < seeded; ++j) {
            for (std::size_t r = 0; r < n; ++r) start(r, j) = warm->eigenvectors(r, j);
            if (j < warm->eigenvalues.size() && std::isfinite(warm->eigenvalues[j])) previous[j] = warm->eigenvalues[j];
        }
    }
    for (std::size_t j = seeded; j < k; ++j)
        for (std::size_t r = 0; r < n; ++r) start(r, j) = rng.normal();
    Mat basis = linalg::qr(start).q;

    Vec values(k, 0.0);
    Mat image(n, k);
    for (std::size_t it = 1; it <= max_iters; ++it) {
        for (std::size_t j = 0; j < k; ++j) image.set_col(j, op(basis.col(j)));
        linalg::QrResult f = linalg::qr(image);
        bool converged = true;
        for (std::size_t j = 0; j < k; ++j) {
            double agreement = 0.0;
            for (std::size_t r = 0; r < n; ++r) agreement += f.q(r, j) * basis(r, j);
            values[j] = agreement < 0.0 ? -f.r(j, j) : f.r(j, j);
            const double delta = std::abs(values[j] - previous[j]);
            if (!(delta < tol * std::max(std::abs(values[j]), 1e-12))) converged = false;
        }
        basis = std::move(f.q);
        previous = values;
        if (converged) return sorted_by_magnitude(values, basis, it, true);
    }
    return sorted_by_magnitude(values, basis, max_iters, false);
}

LinearOperator hessian_operator(std::shared_ptr<const model::LossEvaluation> eval) {
    const std::size_t n = eval->param_count();
    return {n, [eval](std::span<const double> v) { return eval->hessian_vector_product(v); }};
}

LinearOperator g_operator(std::shared_ptr<const model::LossEvaluation> eval) {
    const std::size_t n = eval->param_count();
    return {n, [eval](std::span<const double> v) { return eval->gauss_newton_vector_product(v); }};
}

LinearOperator h_operator(std::shared_ptr<const model::LossEvaluation> eval) {
    const std::size_t n = eval->param_count();
    return {n, [eval](std::span<const double> v) {
                Vec out = eval->hessian_vector_product(v);
                const Vec g = eval->gauss_newton_vector_product(v);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] -= g[i];
                return out;
            }};
}

LinearOperator hessian_operator(const model::MlpModel& model, const LabeledDataset& data,
                                const criterion::CriterionKind& kind) {
    return hessian_operator(std::make_shared<const model::LossEvaluation>(model, data, kind));
}

LinearOperator g_operator(const model::MlpModel& model, const LabeledDataset& data,
                          const criterion::CriterionKind& kind) {
    return g_operator(std::make_shared<const model::LossEvaluation>(model, data, kind));
}

LinearOperator h_operator(const model::MlpModel& model, const LabeledDataset& data,
                          const criterion::CriterionKind& kind) {
    return h_operator(std::make_shared<const model::LossEvaluation>(model, data, kind));
}

SpectrumEstimate sanitize_spectrum(SpectrumEstimate s) {
    for (double& v : s.eigenvalues)
        if (v < 0.0) v = std::numeric_limits<double>::quiet_NaN();
    return s;
}

double nan_fraction(const SpectrumEstimate& s) {
    if (s.eigenvalues.empty()) return 0.0;
    const auto nans = std::count_if(s.eigenvalues.begin(), s.eigenvalues.end(), [](double v) { return std::isnan(v); });
    return double(nans) / double(s.eigenvalues.size());
}

Mat materialize(const LinearOperator& op) {
    Mat out(op.dim, op.dim);
    Vec e(op.dim, 0.0);
    for (std::size_t j = 0; j < op.dim; ++j) {
        e[j] = 1.0;
        out.set_col(j, op(e));
        e[j] = 0.0;
    }
    return out;
}

}  // namespace eos::spectral

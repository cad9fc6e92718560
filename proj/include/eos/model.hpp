#pragma once

#include "eos/criterion.hpp"
#include "eos/dataset.hpp"
#include "eos/linalg.hpp"
#include "eos/parallel.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace eos::model {

using linalg::Mat;
using linalg::Vec;

// Flat parameter vector. Layout: A^1 row-major, b^1, A^2, b^2, ..., A^L, b^L.
using ParamVector = Vec;

double elu(double x) noexcept;
// Right-limit convention at 0; both one-sided limits equal 1.
double elu_prime(double x) noexcept;
double elu_second(double x) noexcept;

struct Layer {
    Mat weight;  // n_i x n_{i-1}
    Vec bias;    // n_i

    friend bool operator==(const Layer&, const Layer&) = default;
};

// Offsets of each layer's blocks inside a ParamVector. Layers are 1-based.
class ParamLayout {
public:
    explicit ParamLayout(std::span<const std::size_t> widths);

    std::size_t depth() const noexcept { return weight_offsets_.size(); }
    std::size_t count() const noexcept { return count_; }
    std::size_t weight_offset(std::size_t i) const { return weight_offsets_.at(i - 1); }
    std::size_t bias_offset(std::size_t i) const { return bias_offsets_.at(i - 1); }
    // Parameters belonging to layer i (weights then biases).
    std::size_t layer_begin(std::size_t i) const { return weight_offset(i); }
    std::size_t layer_size(std::size_t i) const;

private:
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> weight_offsets_;
    std::vector<std::size_t> bias_offsets_;
    std::size_t count_ = 0;
};

// Depth-L ELU multilayer perceptron with a linear output layer:
//   x̂^i = A^i x^{i-1} + b^i,  x^i = elu(x̂^i),  z = x̂^L.
class MlpModel {
public:
    MlpModel() = default;
    MlpModel(std::vector<std::size_t> widths, double gain);

    std::size_t depth() const noexcept { return layers_.size(); }
    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    double gain() const noexcept { return gain_; }

    // 1-based layer access, 1 <= i <= L.
    const Layer& layer(std::size_t i) const;
    Layer& layer(std::size_t i);

    ParamLayout layout() const { return ParamLayout(widths_); }
    std::size_t param_count() const { return layout().count(); }
    ParamVector params() const;
    void set_params(std::span<const double> theta);

    bool all_finite() const noexcept;

    friend bool operator==(const MlpModel&, const MlpModel&) = default;

private:
    std::vector<std::size_t> widths_;
    double gain_ = 1.0;
    std::vector<Layer> layers_;
};

// Xavier-uniform weights scaled by `gain` (bound gain·√(6/(n_in+n_out))), zero biases.
MlpModel init_xavier_gain(std::vector<std::size_t> widths, double gain, std::uint64_t seed);

// Recommended gain for ELU.
inline constexpr double kEluGain = 1.4142135623730951;

double xavier_bound(std::size_t fan_in, std::size_t fan_out, double gain);

// Per-sample forward record.
struct ForwardTrace {
    std::vector<Vec> preacts;  // x̂^1..x̂^L at index 0..L-1
    std::vector<Vec> acts;     // x^0..x^{L-1} at index 0..L-1

    const Vec& preact(std::size_t i) const { return preacts.at(i - 1); }
    const Vec& act(std::size_t i) const { return acts.at(i); }
    const Vec& output() const { return preacts.back(); }
};

ForwardTrace forward(const MlpModel& model, std::span<const double> x);

// ∂f/∂θ for one sample: n_L x P, columns in ParamVector layout.
Mat param_jacobian(const MlpModel& model, const ForwardTrace& trace);

// ∂f/∂x̂^i, n_L x n_i, for 1 <= i <= L.
Mat preactivation_jacobian(const MlpModel& model, const ForwardTrace& trace, std::size_t i);
// All of them at once; element i-1 holds ∂f/∂x̂^i.
std::vector<Mat> preactivation_jacobians(const MlpModel& model, const ForwardTrace& trace);

// ∂x̂^{i+1}/∂x̂^i, n_{i+1} x n_i, entry (j,k) = elu'(x̂^i_k)·A^{i+1}_{j,k}, for 1 <= i <= L-1.
Mat layerwise_jacobian(const MlpModel& model, const ForwardTrace& trace, std::size_t i);

// Cached full-batch evaluation of the training loss at one parameter point.
// Holds the forward pass, per-sample criterion derivatives and backpropagated
// signals so that repeated Hessian/Gauss-Newton products only pay for the
// directional (R-operator) passes. The dataset must outlive the object.
class LossEvaluation {
public:
    LossEvaluation(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind,
                   ExecOptions exec = {});

    const MlpModel& model() const noexcept { return model_; }
    const LabeledDataset& data() const noexcept { return *data_; }
    const criterion::CriterionKind& kind() const noexcept { return kind_; }
    std::size_t param_count() const noexcept { return layout_.count(); }

    double loss() const noexcept { return loss_; }
    const ParamVector& gradient() const noexcept { return gradient_; }

    // (H_θ L̃) v by forward-over-reverse differentiation.
    ParamVector hessian_vector_product(std::span<const double> v) const;
    // G v = E[(∂f/∂θ)ᵀ (H_z l) (∂f/∂θ) v].
    ParamVector gauss_newton_vector_product(std::span<const double> v) const;

    static constexpr std::size_t kChunkSize = 128;

private:
    struct Chunk {
        std::size_t begin = 0;
        std::size_t count = 0;
        std::vector<Mat> acts;     // x^0..x^{L-1}
        std::vector<Mat> preacts;  // x̂^1..x̂^L
        std::vector<Mat> dprime;   // elu'(x̂^i), i = 1..L-1
        std::vector<Mat> dsecond;  // elu''(x̂^i), i = 1..L-1
        std::vector<Mat> delta;    // ∂l/∂x̂^i, i = 1..L
        std::vector<Mat> upstream; // ∂l/∂x^i, i = 1..L-1
    };

    void build_chunk(Chunk& chunk) const;
    ParamVector directional(std::span<const double> v, bool full_hessian) const;

    MlpModel model_;
    const LabeledDataset* data_;
    criterion::CriterionKind kind_;
    ExecOptions exec_;
    ParamLayout layout_;
    std::vector<Chunk> chunks_;
    double loss_ = 0.0;
    ParamVector gradient_;
};

double loss_value(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind);
ParamVector loss_gradient(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind);
ParamVector hessian_vector_product(const MlpModel& model, const LabeledDataset& data,
                                   const criterion::CriterionKind& kind, std::span<const double> v);

}  // namespace eos::model

#pragma once

#include "eos/criterion.hpp"
#include "eos/dataset.hpp"
#include "eos/model.hpp"
#include "eos/parallel.hpp"
#include "eos/spectral.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace eos::solver {

using linalg::Vec;
using model::ParamVector;

struct SolverConfig {
    std::size_t k = 0;  // retained eigenpairs; 0 selects choose_k()
    double eta = 1.0;   // cap on both the step size and the clamped eigen-coefficients
    double loss_threshold = 0.01;
    std::size_t max_steps = 20000;
    std::size_t snapshot_interval = 100;
    // Snapshots are also taken at this step so the post-transient reference exists.
    std::size_t baseline_step = 10;
    double spectrum_tol = spectral::kTrainingTol;
    std::size_t max_power_iters = 50;
    std::uint64_t seed = 0x5eed;

    void validate() const;
};

struct SolverState {
    ParamVector theta;
    double t = 0.0;
    std::size_t step = 0;
    spectral::SpectrumEstimate spectrum;  // warm start for the next step
    double eta = 1.0;
};

// Loss, gradient and Hessian operator at one parameter point.
struct Evaluation {
    double loss = 0.0;
    Vec gradient;
    spectral::LinearOperator hessian;
};

// Anything whose gradient flow can be integrated.
class FlowObjective {
public:
    virtual ~FlowObjective() = default;
    virtual std::size_t dim() const = 0;
    virtual Evaluation evaluate(std::span<const double> theta) const = 0;
};

// Training loss of an MLP architecture over a fixed dataset.
class MlpObjective final : public FlowObjective {
public:
    MlpObjective(model::MlpModel architecture, const LabeledDataset& data, criterion::CriterionKind kind,
                 ExecOptions exec = {});

    std::size_t dim() const override { return architecture_.param_count(); }
    Evaluation evaluate(std::span<const double> theta) const override;
    model::MlpModel model_at(std::span<const double> theta) const;

private:
    model::MlpModel architecture_;
    const LabeledDataset* data_;
    criterion::CriterionKind kind_;
    ExecOptions exec_;
};

struct StepInfo {
    std::size_t step = 0;  // index of the parameter point the step started from
    double t = 0.0;        // flow time at the start of the step
    double dt = 0.0;
    double loss = 0.0;     // loss at the start of the step
    double lambda_next = 0.0;  // λ_{k+1}, NaN when not available
    double lambda_top = 0.0;
    std::size_t power_iters = 0;
    bool spectrum_converged = false;
};

// k = number of network outputs.
std::size_t choose_k(const criterion::CriterionKind& kind, std::size_t n_outputs);

// Δt = min(1/λ_{k+1}, η); η when λ_{k+1} is unavailable or nonpositive.
double step_size(const spectral::SpectrumEstimate& spectrum, std::size_t k, double eta);

// Eigen-direction coefficient φ with r_m = φ·c_m:
//   φ = max((e^{−λΔt} − 1)/λ, −η),  series form −Δt + λΔt²/2 when |λ|Δt < 1e-8.
double eigen_coefficient(double lambda, double dt, double eta);

// θ + Σ_{m≤k} φ_m c_m v_m − w·Δt with w the gradient residual outside span{v_1..v_k}.
ParamVector exp_euler_update(std::span<const double> theta, std::span<const double> gradient,
                             const spectral::SpectrumEstimate& spectrum, std::size_t k, double dt, double eta);

struct StepResult {
    SolverState state;
    StepInfo info;
};

// One truncated exponential Euler step from `state` using an evaluation at state.theta.
StepResult exp_euler_step(const SolverState& state, const Evaluation& eval, const SolverConfig& config);
StepResult exp_euler_step(const SolverState& state, const FlowObjective& objective, const SolverConfig& config);

// Receives (step, flow time, parameters).
using SnapshotSink = std::function<void(std::size_t, double, std::span<const double>)>;
using StepObserver = std::function<void(const StepInfo&)>;

struct RunSummary {
    std::size_t steps = 0;   // number of completed steps
    double t = 0.0;
    double final_loss = 0.0;
    bool reached_threshold = false;
    std::size_t snapshots = 0;
    std::vector<StepInfo> history;
    ParamVector theta;       // final (or last good) parameters
};

// Integrates until loss <= threshold or max_steps. Snapshots go to `sink` at
// step 0, the baseline step, every snapshot_interval steps and the final step.
// A non-finite update raises DivergenceError after the last good point has
// been handed to the sink.
RunSummary run_training(const FlowObjective& objective, std::span<const double> theta0, const SolverConfig& config,
                        const SnapshotSink& sink = {}, const StepObserver& observer = {});

RunSummary run_training(const model::MlpModel& initial, const LabeledDataset& data,
                        const criterion::CriterionKind& kind, const SolverConfig& config,
                        const SnapshotSink& sink = {}, ExecOptions exec = {}, const StepObserver& observer = {});

}  // namespace eos::solver

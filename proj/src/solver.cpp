#include "eos/solver.hpp"

#include "eos/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace eos::solver {

void SolverConfig::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("solver: eta must be positive and finite");
    if (snapshot_interval < 1) throw ConfigError("solver: snapshot_interval must be >= 1");
    if (!(spectrum_tol > 0.0)) throw ConfigError("solver: spectrum_tol must be positive");
    if (max_power_iters < 1) throw ConfigError("solver: max_power_iters must be >= 1");
    if (std::isnan(loss_threshold)) throw ConfigError("solver: loss_threshold is NaN");
}

MlpObjective::MlpObjective(model::MlpModel architecture, const LabeledDataset& data, criterion::CriterionKind kind,
                           ExecOptions exec)
    : architecture_(std::move(architecture)), data_(&data), kind_(kind), exec_(exec) {}

model::MlpModel MlpObjective::model_at(std::span<const double> theta) const {
    model::MlpModel m = architecture_;
    m.set_params(theta);
    return m;
}

Evaluation MlpObjective::evaluate(std::span<const double> theta) const {
    auto eval = std::make_shared<const model::LossEvaluation>(model_at(theta), *data_, kind_, exec_);
    return {eval->loss(), eval->gradient(), spectral::hessian_operator(eval)};
}

std::size_t choose_k(const criterion::CriterionKind&, std::size_t n_outputs) { return n_outputs; }

double step_size(const spectral::SpectrumEstimate& spectrum, std::size_t k, double eta) {
    if (spectrum.size() <= k) return eta;
    const double next = spectrum.eigenvalues[k];
    if (!(next > 0.0)) return eta;
    return std::min(1.0 / next, eta);
}

double eigen_coefficient(double lambda, double dt, double eta) {
    double phi;
    if (std::abs(lambda) * dt < 1e-8) {
        phi = -dt + 0.5 * lambda * dt * dt;
    } else {
        phi = std::expm1(-lambda * dt) / lambda;
    }
    return std::max(phi, -eta);
}

ParamVector exp_euler_update(std::span<const double> theta, std::span<const double> gradient,
                             const spectral::SpectrumEstimate& spectrum, std::size_t k, double dt, double eta) {
    const std::size_t n = theta.size();
    if (gradient.size() != n) throw ShapeError("exp_euler_update: gradient length mismatch");
    const std::size_t m_count = std::min(k, spectrum.size());
    if (m_count > 0 && spectrum.eigenvectors.rows() != n) throw ShapeError("exp_euler_update: eigenvector length mismatch");

    ParamVector residual(gradient.begin(), gradient.end());
    ParamVector out(theta.begin(), theta.end());
    for (std::size_t m = 0; m < m_count; ++m) {
        const Vec v = spectrum.eigenvectors.col(m);
        const double c = linalg::dot(gradient, v);
        linalg::axpy(-c, v, residual);
        linalg::axpy(eigen_coefficient(spectrum.eigenvalues[m], dt, eta) * c, v, out);
    }
    linalg::axpy(-dt, residual, out);
    return out;
}

namespace {

StepInfo describe(const SolverState& state, const Evaluation& eval, const spectral::SpectrumEstimate& s,
                  std::size_t k, double dt) {
    StepInfo info;
    info.step = state.step;
    info.t = state.t;
    info.dt = dt;
    info.loss = eval.loss;
    info.lambda_next = s.size() > k ? s.eigenvalues[k] : std::numeric_limits<double>::quiet_NaN();
    info.lambda_top = s.size() > 0 ? s.eigenvalues[0] : std::numeric_limits<double>::quiet_NaN();
    info.power_iters = s.iterations_used;
    info.spectrum_converged = s.converged;
    return info;
}

std::size_t resolve_k(const SolverConfig& config, std::size_t fallback) { return config.k > 0 ? config.k : fallback; }

}  // namespace

StepResult exp_euler_step(const SolverState& state, const Evaluation& eval, const SolverConfig& config) {
    const std::size_t n = state.theta.size();
    if (eval.gradient.size() != n || eval.hessian.dim != n) throw ShapeError("exp_euler_step: evaluation size mismatch");
    const std::size_t k = resolve_k(config, 1);
    const std::size_t want = std::min(k + 1, n);

    StepResult result;
    const spectral::SpectrumEstimate* warm = state.spectrum.size() > 0 ? &state.spectrum : nullptr;
    spectral::SpectrumEstimate s =
        spectral::power_iterate(eval.hessian, want, warm, config.spectrum_tol, config.max_power_iters, config.seed);
    const double dt = step_size(s, k, state.eta);

    result.state.theta = exp_euler_update(state.theta, eval.gradient, s, k, dt, state.eta);
    result.info = describe(state, eval, s, k, dt);
    if (!linalg::all_finite(result.state.theta)) {
        throw DivergenceError("exp_euler_step: non-finite parameters after step " + std::to_string(state.step),
                              state.step);
    }
    result.state.t = state.t + dt;
    result.state.step = state.step + 1;
    result.state.eta = state.eta;
    result.state.spectrum = std::move(s);
    return result;
}

StepResult exp_euler_step(const SolverState& state, const FlowObjective& objective, const SolverConfig& config) {
    return exp_euler_step(state, objective.evaluate(state.theta), config);
}

RunSummary run_training(const FlowObjective& objective, std::span<const double> theta0, const SolverConfig& config,
                        const SnapshotSink& sink, const StepObserver& observer) {
    config.validate();
    if (theta0.size() != objective.dim()) throw ShapeError("run_training: theta0 length mismatch");
    if (!linalg::all_finite(theta0)) throw ContractError("run_training: initial parameters are not finite");

    SolverState state;
    state.theta.assign(theta0.begin(), theta0.end());
    state.eta = config.eta;

    RunSummary summary;
    std::size_t last_emitted = std::numeric_limits<std::size_t>::max();
    auto emit = [&](const SolverState& s) {
        if (!sink || last_emitted == s.step) return;
        sink(s.step, s.t, s.theta);
        last_emitted = s.step;
        ++summary.snapshots;
    };
    auto finish = [&](const SolverState& s, double loss, bool reached) {
        emit(s);
        summary.steps = s.step;
        summary.t = s.t;
        summary.final_loss = loss;
        summary.reached_threshold = reached;
        summary.theta = s.theta;
        return summary;
    };

    SolverState last_good;  // most recent point with a finite loss
    for (;;) {
        Evaluation eval = objective.evaluate(state.theta);
        if (!std::isfinite(eval.loss) || !linalg::all_finite(eval.gradient)) {
            if (state.step > 0) emit(last_good);
            throw DivergenceError("run_training: non-finite loss or gradient at step " + std::to_string(state.step),
                                  state.step);
        }
        const bool reached = eval.loss <= config.loss_threshold;
        if (reached || state.step >= config.max_steps) return finish(state, eval.loss, reached);
        if (state.step == 0 || state.step == config.baseline_step || state.step % config.snapshot_interval == 0)
            emit(state);

        StepResult next;
        try {
            next = exp_euler_step(state, eval, config);
        } catch (const DivergenceError&) {
            emit(state);
            throw;
        }
        if (observer) observer(next.info);
        summary.history.push_back(next.info);
        last_good.theta = std::move(state.theta);
        last_good.t = state.t;
        last_good.step = state.step;
        state = std::move(next.state);
    }
}

RunSummary run_training(const model::MlpModel& initial, const LabeledDataset& data,
                        const criterion::CriterionKind& kind, const SolverConfig& config, const SnapshotSink& sink,
                        ExecOptions exec, const StepObserver& observer) {
    SolverConfig resolved = config;
    if (resolved.k == 0) resolved.k = choose_k(kind, initial.output_dim());
    MlpObjective objective(initial, data, kind, exec);
    return run_training(objective, initial.params(), resolved, sink, observer);
}

}  // namespace eos::solver

#include "verify.hpp"

#include "eos/decomposition.hpp"
#include "eos/error.hpp"
#include "eos/model.hpp"
#include "eos/rng.hpp"
#include "eos/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace eos::cli {

using linalg::Mat;
using linalg::Vec;

Fault parse_fault(const std::string& name) {
    if (name == "none") return Fault::none;
    if (name == "g-operator" || name == "g_operator") return Fault::g_operator;
    if (name == "delta-norm" || name == "delta_norm") return Fault::delta_norm;
    throw ArgumentError("unknown fault '" + name + "' (expected none, g-operator or delta-norm)");
}

namespace {

double rel_diff(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

double rel_scalar(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Problem {
    model::MlpModel model;
    LabeledDataset data;
    criterion::CriterionKind kind;
};

Problem make_problem(const VerifyOptions& opts) {
    Problem p;
    p.model = model::init_xavier_gain(opts.widths, model::kEluGain, opts.seed);
    Rng rng(derive_seed(opts.seed, 1));
    model::ParamVector theta = p.model.params();
    for (double& v : theta) v += 0.1 * rng.normal();
    p.model.set_params(theta);

    const std::size_t classes = opts.widths.back();
    p.data.inputs = Mat(opts.samples, opts.widths.front());
    for (double& v : p.data.inputs.data()) v = rng.normal();
    p.data.labels.resize(opts.samples);
    for (auto& l : p.data.labels) l = std::uint32_t(rng.below(classes));
    p.data.num_classes = classes;
    p.data.provenance.source = "verify";
    p.kind = {opts.criterion, classes};
    return p;
}

}  // namespace

std::vector<VerifyCheck> run_verify_suite(const VerifyOptions& opts) {
    const Problem p = make_problem(opts);
    const model::MlpModel& m = p.model;
    const std::size_t n_params = m.param_count();
    const std::size_t depth = m.depth();
    std::vector<VerifyCheck> checks;
    auto record = [&](const std::string& name, double residual, double tol) {
        checks.push_back({name, residual, tol, residual <= tol});
    };

    auto eval = std::make_shared<const model::LossEvaluation>(m, p.data, p.kind);
    const model::ParamVector theta = m.params();
    auto loss_at = [&](std::span<const double> th) {
        model::MlpModel q = m;
        q.set_params(th);
        return model::loss_value(q, p.data, p.kind);
    };
    auto grad_at = [&](std::span<const double> th) {
        model::MlpModel q = m;
        q.set_params(th);
        return model::loss_gradient(q, p.data, p.kind);
    };

    {
        const double h = 1e-5;
        Vec fd(n_params);
        model::ParamVector th = theta;
        for (std::size_t j = 0; j < n_params; ++j) {
            th[j] = theta[j] + h;
            const double up = loss_at(th);
            th[j] = theta[j] - h;
            const double down = loss_at(th);
            th[j] = theta[j];
            fd[j] = (up - down) / (2 * h);
        }
        record("gradient vs central differences (rel)", rel_diff(eval->gradient(), fd), 1e-6);
    }

    Rng rng(derive_seed(opts.seed, 2));
    Vec v(n_params);
    for (double& x : v) x = rng.normal();

    {
        const double h = 1e-4;
        model::ParamVector up = theta, down = theta;
        linalg::axpy(h, v, up);
        linalg::axpy(-h, v, down);
        const Vec gu = grad_at(up), gd = grad_at(down);
        Vec fd(n_params);
        for (std::size_t j = 0; j < n_params; ++j) fd[j] = (gu[j] - gd[j]) / (2 * h);
        record("Hessian-vector product vs differenced gradient (rel)", rel_diff(eval->hessian_vector_product(v), fd),
               1e-5);
    }

    {
        const model::ForwardTrace tr = model::forward(m, p.data.inputs.row(0));
        const Mat jac = model::param_jacobian(m, tr);
        const double h = 1e-6;
        double worst = 0.0;
        model::ParamVector th = theta;
        for (std::size_t j = 0; j < n_params; ++j) {
            model::MlpModel q = m;
            th[j] = theta[j] + h;
            q.set_params(th);
            const Vec up = model::forward(q, p.data.inputs.row(0)).output();
            th[j] = theta[j] - h;
            q.set_params(th);
            const Vec down = model::forward(q, p.data.inputs.row(0)).output();
            th[j] = theta[j];
            Vec fd(up.size()), col(up.size());
            for (std::size_t r = 0; r < up.size(); ++r) {
                fd[r] = (up[r] - down[r]) / (2 * h);
                col[r] = jac(r, j);
            }
            if (linalg::norm(fd) > 1e-8) worst = std::max(worst, rel_diff(col, fd));
        }
        record("parameter Jacobian vs central differences (rel)", worst, 1e-6);
    }

    spectral::LinearOperator g_op = spectral::g_operator(eval);
    if (opts.fault == Fault::g_operator) {
        g_op.apply = [inner = g_op.apply](std::span<const double> x) {
            Vec out = inner(x);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += 1e-3 * x[i];
            return out;
        };
    }
    const spectral::LinearOperator h_op = spectral::h_operator(eval);

    {
        const Vec hv = eval->hessian_vector_product(v);
        const Vec gv = g_op(v), rest = h_op(v);
        double worst = 0.0;
        for (std::size_t i = 0; i < hv.size(); ++i) worst = std::max(worst, std::abs(gv[i] + rest[i] - hv[i]));
        const double scale = std::max({linalg::max_abs_diff(hv, Vec(hv.size(), 0.0)), 1.0});
        record("Gv + Hv = full Hessian product (abs / scale)", worst / scale, 1e-12);
    }

    Mat g_dense(n_params, n_params);
    std::vector<std::vector<Mat>> k_blocks(p.data.size());
    double worst_split = 0.0, worst_delta = 0.0, worst_recursion = 0.0, e_k_norm = 0.0;
    for (std::size_t s = 0; s < p.data.size(); ++s) {
        const model::ForwardTrace tr = model::forward(m, p.data.inputs.row(s));
        const criterion::OutputCurvature curv = criterion::output_hessian(p.kind, tr.output(), p.data.labels[s]);
        k_blocks[s] = decomposition::build_K(m, tr, curv);
        Mat k_full(k_blocks[s].front().rows(), n_params);
        std::size_t col = 0;
        Mat kkt(k_full.rows(), k_full.rows());
        for (const Mat& blk : k_blocks[s]) {
            for (std::size_t r = 0; r < blk.rows(); ++r)
                for (std::size_t c = 0; c < blk.cols(); ++c) k_full(r, col + c) = blk(r, c);
            col += blk.cols();
            kkt += linalg::gram_rows(blk);
        }
        worst_split = std::max(worst_split, linalg::max_abs_diff(linalg::gram_rows(k_full), kkt));
        g_dense += linalg::matmul_tn(k_full, k_full);
        e_k_norm += decomposition::squared_operator_norm(k_full);

        const std::vector<Mat> rec = decomposition::build_delta_recursive(m, tr, curv);
        for (std::size_t i = 1; i <= depth; ++i) {
            const Mat direct = decomposition::build_delta(m, tr, curv, i);
            worst_delta = std::max(worst_delta, linalg::max_abs_diff(linalg::gram_rows(k_blocks[s][i - 1]),
                                                                     linalg::gram_rows(direct)));
            worst_recursion = std::max(worst_recursion, linalg::max_abs_diff(direct, rec[i - 1]));
        }
    }
    g_dense *= 1.0 / double(p.data.size());
    e_k_norm /= double(p.data.size());
    record("K K^T = sum_i K^i K^i^T (max abs)", worst_split, 1e-10);
    record("K^i K^i^T = Delta^i Delta^i^T (max abs)", worst_delta, 1e-9);
    record("Delta recursion vs direct Jacobian (max abs)", worst_recursion, 1e-9);
    {
        const Mat g_stream = spectral::materialize(g_op);
        record("G operator vs dense mean K^T K (max abs)", linalg::max_abs_diff(g_stream, g_dense), 1e-10);
    }

    {
        decomposition::LayerExpectations e = decomposition::expectations(m, p.data, p.kind);
        decomposition::FactorChain chain = decomposition::factor_chain(e);
        if (opts.fault == Fault::delta_norm) chain.e_deltaL_norm_sq *= 1.0 + 1e-6;
        double worst = 0.0;
        for (std::size_t k = 1; k < depth; ++k) {
            const double prod = decomposition::factors_at(chain, k).product();
            worst = std::max(worst, rel_scalar(prod, e.delta_norm_sq[k - 1]));
        }
        record("five-factor telescoping, all start layers (rel)", worst, 1e-9);

        const double lambda_g =
            spectral::power_iterate(g_op, 1, nullptr, spectral::kAnalysisTol * 1e-3, 20000).eigenvalues.front();
        const double rho = lambda_g / e.k_norm_sq;
        const double excess = rho < 0.0 ? -rho : std::max(0.0, rho - 1.0);
        record("overlap ratio within [0, 1] (excess)", excess, 1e-9);
        record("E||K||^2 from slices vs dense (rel)", rel_scalar(e.k_norm_sq, e_k_norm), 1e-10);
    }

    {
        Rng mr(derive_seed(opts.seed, 3));
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            Mat a(4, 7);
            for (double& x : a.data()) x = mr.normal();
            const linalg::SymEig small = linalg::sym_eig(linalg::gram_rows(a));
            const linalg::SymEig big = linalg::sym_eig(linalg::matmul_tn(a, a));
            for (std::size_t j = 0; j < 4; ++j) worst = std::max(worst, rel_scalar(big.eigenvalues[j], small.eigenvalues[j]));
        }
        record("nonzero spectra of M M^T and M^T M agree (rel)", worst, 1e-9);
    }

    {
        const Mat dense_h = spectral::materialize(spectral::hessian_operator(eval));
        Mat sym = dense_h;
        for (std::size_t i = 0; i < n_params; ++i)
            for (std::size_t j = 0; j < i; ++j) sym(i, j) = sym(j, i) = 0.5 * (dense_h(i, j) + dense_h(j, i));
        const linalg::SymEig eig = linalg::sym_eig(sym);
        double top = eig.eigenvalues.front();
        if (std::abs(eig.eigenvalues.back()) > std::abs(top)) top = eig.eigenvalues.back();
        const double est = spectral::power_iterate(spectral::hessian_operator(eval), 3, nullptr, 1e-12, 20000)
                               .eigenvalues.front();
        record("power iteration top eigenvalue vs dense (rel)", rel_scalar(est, top), 1e-6);
    }
    return checks;
}

void print_verify_table(const std::vector<VerifyCheck>& checks, std::ostream& out) {
    std::size_t width = 5;
    for (const auto& c : checks) width = std::max(width, c.name.size());
    char buf[64];
    out << "check" << std::string(width - 5, ' ') << "  residual    tolerance  result\n";
    for (const auto& c : checks) {
        std::snprintf(buf, sizeof buf, "  %-10.3e  %-9.1e  %s", c.residual, c.tolerance, c.passed ? "PASS" : "FAIL");
        out << c.name << std::string(width - c.name.size(), ' ') << buf << '\n';
    }
}

}  // namespace eos::cli

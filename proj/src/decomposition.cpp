#include "eos/decomposition.hpp"

#include "eos/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eos::decomposition {

namespace {

void check_layer(std::size_t i, std::size_t max, const char* what) {
    if (i < 1 || i > max) {
        throw IndexError(std::string(what) + ": layer " + std::to_string(i) + " outside [1, " + std::to_string(max) +
                         "]");
    }
}

void add_into(Vec& acc, const Vec& v) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace

std::vector<Mat> build_K(const model::MlpModel& model, const model::ForwardTrace& trace,
                         const criterion::OutputCurvature& curvature) {
    const Mat jac = model::param_jacobian(model, trace);
    const model::ParamLayout layout = model.layout();
    std::vector<Mat> blocks;
    blocks.reserve(model.depth());
    for (std::size_t i = 1; i <= model.depth(); ++i) {
        const std::size_t begin = layout.layer_begin(i);
        const std::size_t width = layout.layer_size(i);
        Mat block(jac.rows(), width);
        for (std::size_t q = 0; q < jac.rows(); ++q) {
            auto src = jac.row(q).subspan(begin, width);
            std::copy(src.begin(), src.end(), block.row(q).begin());
        }
        blocks.push_back(linalg::matmul(curvature.sqrt, block));
    }
    return blocks;
}

Mat build_delta(const model::MlpModel& model, const model::ForwardTrace& trace,
                const criterion::OutputCurvature& curvature, std::size_t i) {
    check_layer(i, model.depth(), "build_delta");
    const Mat pj = model::preactivation_jacobian(model, trace, i);
    const double scale = std::sqrt(1.0 + linalg::norm_sq(trace.act(i - 1)));
    return scale * linalg::matmul(curvature.sqrt, pj);
}

std::vector<Mat> build_delta_recursive(const model::MlpModel& model, const model::ForwardTrace& trace,
                                       const criterion::OutputCurvature& curvature) {
    const std::size_t depth = model.depth();
    std::vector<Mat> out(depth);
    out[depth - 1] = std::sqrt(1.0 + linalg::norm_sq(trace.act(depth - 1))) * curvature.sqrt;
    for (std::size_t i = depth - 1; i >= 1; --i) {
        const Mat jac = model::layerwise_jacobian(model, trace, i);
        out[i - 1] = chi_ratio(trace, i) * linalg::matmul(out[i], jac);
    }
    return out;
}

double chi_ratio(const model::ForwardTrace& trace, std::size_t i) {
    if (i < 1 || i >= trace.acts.size()) {
        throw IndexError("chi_ratio: layer " + std::to_string(i) + " outside [1, L-1]");
    }
    const double before = 1.0 + linalg::norm_sq(trace.act(i - 1));
    const double after = 1.0 + linalg::norm_sq(trace.act(i));
    return std::sqrt(before / after);
}

double squared_operator_norm(const Mat& m) {
    if (m.empty()) return 0.0;
    const Mat gram = m.rows() <= m.cols() ? linalg::gram_rows(m) : linalg::gram_rows(m.transposed());
    return std::max(0.0, linalg::sym_eig(gram).eigenvalues.front());
}

double overlap_ratio(double lambda1_g, double e_k_norm_sq) {
    if (!(e_k_norm_sq > 0.0)) throw DegenerateInputError("overlap_ratio: E||K||^2 must be positive");
    const double rho = lambda1_g / e_k_norm_sq;
    if (rho < -1e-9 || rho > 1.0 + 1e-9) {
        throw ConsistencyError("overlap_ratio: rho(K) = " + std::to_string(rho) + " outside [0, 1]");
    }
    return rho;
}

double alignment_ratio(double e_prod_sq, double e_a_sq, double e_b_sq) {
    if (!(e_a_sq > 0.0) || !(e_b_sq > 0.0)) {
        throw DegenerateInputError("alignment_ratio: denominators must be positive");
    }
    return e_prod_sq / (e_a_sq * e_b_sq);
}

SampleCurvatureSlice compute_slice(const model::MlpModel& model, std::span<const double> x, std::size_t y,
                                   const criterion::CriterionKind& kind, const SliceOptions& opts) {
    const std::size_t depth = model.depth();
    const model::ForwardTrace trace = model::forward(model, x);
    const criterion::OutputCurvature curv = criterion::output_hessian(kind, trace.output(), y);
    const std::vector<Mat> pre_jac = model::preactivation_jacobians(model, trace);

    SampleCurvatureSlice s;
    s.k_block_norm_sq.resize(depth);
    s.delta_norm_sq.resize(depth);
    s.chi_sq.resize(depth - 1);
    s.layerwise_jac_norm_sq.resize(depth - 1);
    s.product_norm_sq.resize(depth - 1);
    s.scaled_delta_norm_sq.resize(depth - 1);

    std::vector<Mat> k_blocks = build_K(model, trace, curv);
    Mat kkt(model.output_dim(), model.output_dim());
    for (std::size_t i = 1; i <= depth; ++i) {
        const Mat g = linalg::gram_rows(k_blocks[i - 1]);
        s.k_block_norm_sq[i - 1] = std::max(0.0, linalg::sym_eig(g).eigenvalues.front());
        kkt += g;
    }
    s.k_norm_sq = std::max(0.0, linalg::sym_eig(kkt).eigenvalues.front());

    std::vector<Mat> delta(depth);
    for (std::size_t i = 1; i <= depth; ++i) {
        const double scale = std::sqrt(1.0 + linalg::norm_sq(trace.act(i - 1)));
        delta[i - 1] = scale * linalg::matmul(curv.sqrt, pre_jac[i - 1]);
        s.delta_norm_sq[i - 1] = squared_operator_norm(delta[i - 1]);
    }

    for (std::size_t i = 1; i < depth; ++i) {
        const double chi = chi_ratio(trace, i);
        const Mat jac = model::layerwise_jacobian(model, trace, i);
        s.chi_sq[i - 1] = chi * chi;
        s.layerwise_jac_norm_sq[i - 1] = linalg::top_singular_value_sq(jac, opts.jac_norm_tol);
        s.product_norm_sq[i - 1] = squared_operator_norm(linalg::matmul(delta[i], jac));
        s.scaled_delta_norm_sq[i - 1] = s.delta_norm_sq[i - 1] / (chi * chi);
    }

    if (opts.keep_matrices) {
        s.k_blocks = std::move(k_blocks);
        s.delta = std::move(delta);
    }
    return s;
}

LayerExpectations expectations(const model::MlpModel& model, const LabeledDataset& data,
                               const criterion::CriterionKind& kind, const ExecOptions& exec,
                               const SliceOptions& opts) {
    if (data.size() == 0) throw DataError("expectations: empty dataset");
    const std::size_t depth = model.depth();
    constexpr std::size_t kChunk = 32;
    const std::size_t n_chunks = (data.size() + kChunk - 1) / kChunk;
    SliceOptions slice_opts = opts;
    slice_opts.keep_matrices = false;

    auto empty = [&] {
        LayerExpectations e;
        e.k_block_norm_sq.assign(depth, 0.0);
        e.delta_norm_sq.assign(depth, 0.0);
        e.chi_sq.assign(depth - 1, 0.0);
        e.layerwise_jac_norm_sq.assign(depth - 1, 0.0);
        e.product_norm_sq.assign(depth - 1, 0.0);
        e.scaled_delta_norm_sq.assign(depth - 1, 0.0);
        return e;
    };

    LayerExpectations total = map_reduce_chunks<LayerExpectations>(
        n_chunks, exec,
        [&](std::size_t c) {
            LayerExpectations part = empty();
            const std::size_t end = std::min(data.size(), (c + 1) * kChunk);
            for (std::size_t n = c * kChunk; n < end; ++n) {
                const SampleCurvatureSlice s = compute_slice(model, data.inputs.row(n), data.labels[n], kind, slice_opts);
                part.samples += 1;
                part.k_norm_sq += s.k_norm_sq;
                add_into(part.k_block_norm_sq, s.k_block_norm_sq);
                add_into(part.delta_norm_sq, s.delta_norm_sq);
                add_into(part.chi_sq, s.chi_sq);
                add_into(part.layerwise_jac_norm_sq, s.layerwise_jac_norm_sq);
                add_into(part.product_norm_sq, s.product_norm_sq);
                add_into(part.scaled_delta_norm_sq, s.scaled_delta_norm_sq);
            }
            return part;
        },
        [&](LayerExpectations& acc, const LayerExpectations& part) {
            acc.samples += part.samples;
            acc.k_norm_sq += part.k_norm_sq;
            add_into(acc.k_block_norm_sq, part.k_block_norm_sq);
            add_into(acc.delta_norm_sq, part.delta_norm_sq);
            add_into(acc.chi_sq, part.chi_sq);
            add_into(acc.layerwise_jac_norm_sq, part.layerwise_jac_norm_sq);
            add_into(acc.product_norm_sq, part.product_norm_sq);
            add_into(acc.scaled_delta_norm_sq, part.scaled_delta_norm_sq);
        });

    const double inv = 1.0 / double(total.samples);
    total.k_norm_sq *= inv;
    for (Vec* v : {&total.k_block_norm_sq, &total.delta_norm_sq, &total.chi_sq, &total.layerwise_jac_norm_sq,
                   &total.product_norm_sq, &total.scaled_delta_norm_sq})
        linalg::scale(*v, inv);
    return total;
}

void fill_products(FactorChain& chain) {
    const std::size_t layers = chain.chi_sq.size();
    chain.pi_chi.assign(layers, 1.0);
    chain.p_chi_delta.assign(layers, 1.0);
    chain.pi_J.assign(layers, 1.0);
    chain.p_delta_J.assign(layers, 1.0);
    double pc = 1.0, pcd = 1.0, pj = 1.0, pdj = 1.0;
    for (std::size_t idx = layers; idx-- > 0;) {
        pc *= chain.chi_sq[idx];
        pcd *= chain.align_chi[idx];
        pj *= chain.jac_norm_sq[idx];
        pdj *= chain.align_dJ[idx];
        chain.pi_chi[idx] = pc;
        chain.p_chi_delta[idx] = pcd;
        chain.pi_J[idx] = pj;
        chain.p_delta_J[idx] = pdj;
    }
}

FactorChain factor_chain(const LayerExpectations& e) {
    const std::size_t layers = e.chi_sq.size();
    FactorChain chain;
    chain.chi_sq = e.chi_sq;
    chain.jac_norm_sq = e.layerwise_jac_norm_sq;
    chain.align_chi.resize(layers);
    chain.align_dJ.resize(layers);
    for (std::size_t idx = 0; idx < layers; ++idx) {
        // r(χ^i I, Δ^i/χ^i): the product of the two arguments is Δ^i itself.
        chain.align_chi[idx] = alignment_ratio(e.delta_norm_sq[idx], e.chi_sq[idx], e.scaled_delta_norm_sq[idx]);
        chain.align_dJ[idx] =
            alignment_ratio(e.product_norm_sq[idx], e.delta_norm_sq[idx + 1], e.layerwise_jac_norm_sq[idx]);
    }
    chain.e_deltaL_norm_sq = e.delta_norm_sq.back();
    fill_products(chain);
    return chain;
}

FactorSet factors_at(const FactorChain& chain, std::size_t k) {
    if (k < 1 || k > chain.chi_sq.size()) {
        throw IndexError("factors_at: start layer " + std::to_string(k) + " outside [1, L-1]");
    }
    return FactorSet{chain.pi_chi[k - 1], chain.p_chi_delta[k - 1], chain.pi_J[k - 1], chain.p_delta_J[k - 1],
                     chain.e_deltaL_norm_sq};
}

FactorSet decomposition_factors(const model::MlpModel& model, const LabeledDataset& data,
                                const criterion::CriterionKind& kind, std::size_t k, const ExecOptions& exec) {
    check_layer(k, model.depth() - 1, "decomposition_factors");
    return factors_at(factor_chain(expectations(model, data, kind, exec)), k);
}

double counterfactual_bound(std::span<const DecompositionRecord> records, std::size_t step, std::size_t baseline_step) {
    const DecompositionRecord* base = nullptr;
    const DecompositionRecord* now = nullptr;
    for (const DecompositionRecord& r : records) {
        if (r.step == baseline_step) base = &r;
        if (r.step == step) now = &r;
    }
    if (!base) throw AnalysisError("counterfactual_bound: no record at baseline step " + std::to_string(baseline_step));
    if (!now) throw AnalysisError("counterfactual_bound: no record at step " + std::to_string(step));
    const std::size_t depth = now->depth();
    double sum = 0.0;
    for (std::size_t i = 1; i <= depth; ++i) {
        double ratio = 1.0;
        if (i < depth) ratio = now->chain.p_delta_J[i - 1] / base->chain.p_delta_J[i - 1];
        sum += ratio * now->e_Ki_norm_sq[i - 1];
    }
    return now->rho_K * sum;
}

}  // namespace eos::decomposition

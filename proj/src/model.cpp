#include "eos/model.hpp"

#include "eos/error.hpp"
#include "eos/rng.hpp"

#include <cmath>
#include <string>

namespace eos::model {

double elu(double x) noexcept { return x > 0.0 ? x : std::expm1(x); }
double elu_prime(double x) noexcept { return x > 0.0 ? 1.0 : std::exp(x); }
double elu_second(double x) noexcept { return x > 0.0 ? 0.0 : std::exp(x); }

ParamLayout::ParamLayout(std::span<const std::size_t> widths) : widths_(widths.begin(), widths.end()) {
    if (widths_.size() < 2) throw ShapeError("ParamLayout: need at least input and output widths");
    for (std::size_t i = 1; i < widths_.size(); ++i) {
        weight_offsets_.push_back(count_);
        count_ += widths_[i] * widths_[i - 1];
        bias_offsets_.push_back(count_);
        count_ += widths_[i];
    }
}

std::size_t ParamLayout::layer_size(std::size_t i) const { return widths_.at(i) * (widths_.at(i - 1) + 1); }

MlpModel::MlpModel(std::vector<std::size_t> widths, double gain) : widths_(std::move(widths)), gain_(gain) {
    if (widths_.size() < 3) throw ShapeError("MlpModel: depth must be at least 2");
    for (std::size_t w : widths_)
        if (w == 0) throw ShapeError("MlpModel: zero width");
    for (std::size_t i = 1; i < widths_.size(); ++i) {
        layers_.push_back(Layer{Mat(widths_[i], widths_[i - 1]), Vec(widths_[i], 0.0)});
    }
}

const Layer& MlpModel::layer(std::size_t i) const {
    if (i < 1 || i > layers_.size()) throw IndexError("MlpModel::layer: index " + std::to_string(i) + " out of range");
    return layers_[i - 1];
}

Layer& MlpModel::layer(std::size_t i) {
    if (i < 1 || i > layers_.size()) throw IndexError("MlpModel::layer: index " + std::to_string(i) + " out of range");
    return layers_[i - 1];
}

ParamVector MlpModel::params() const {
    ParamVector theta;
    theta.reserve(param_count());
    for (const Layer& l : layers_) {
        theta.insert(theta.end(), l.weight.data().begin(), l.weight.data().end());
        theta.insert(theta.end(), l.bias.begin(), l.bias.end());
    }
    return theta;
}

void MlpModel::set_params(std::span<const double> theta) {
    if (theta.size() != param_count()) {
        throw ShapeError("set_params: got " + std::to_string(theta.size()) + " values, need " +
                         std::to_string(param_count()));
    }
    std::size_t at = 0;
    for (Layer& l : layers_) {
        for (double& w : l.weight.data()) w = theta[at++];
        for (double& b : l.bias) b = theta[at++];
    }
}

bool MlpModel::all_finite() const noexcept {
    for (const Layer& l : layers_) {
        if (!l.weight.all_finite()) return false;
        for (double b : l.bias)
            if (!std::isfinite(b)) return false;
    }
    return true;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out, double gain) {
    return gain * std::sqrt(6.0 / double(fan_in + fan_out));
}

MlpModel init_xavier_gain(std::vector<std::size_t> widths, double gain, std::uint64_t seed) {
    if (!(gain > 0.0)) throw ArgumentError("init_xavier_gain: gain must be positive");
    MlpModel model(std::move(widths), gain);
    Rng rng(seed);
    for (std::size_t i = 1; i <= model.depth(); ++i) {
        Layer& layer = model.layer(i);
        const double a = xavier_bound(layer.weight.cols(), layer.weight.rows(), gain);
        for (double& w : layer.weight.data()) w = rng.uniform(-a, a);
    }
    return model;
}

ForwardTrace forward(const MlpModel& model, std::span<const double> x) {
    if (x.size() != model.input_dim()) {
        throw ShapeError("forward: input length " + std::to_string(x.size()) + " != " +
                         std::to_string(model.input_dim()));
    }
    const std::size_t depth = model.depth();
    ForwardTrace trace;
    trace.acts.emplace_back(x.begin(), x.end());
    for (std::size_t i = 1; i <= depth; ++i) {
        const Layer& layer = model.layer(i);
        Vec pre = linalg::matvec(layer.weight, trace.acts.back());
        for (std::size_t j = 0; j < pre.size(); ++j) pre[j] += layer.bias[j];
        if (i < depth) {
            Vec act(pre.size());
            for (std::size_t j = 0; j < pre.size(); ++j) act[j] = elu(pre[j]);
            trace.acts.push_back(std::move(act));
        }
        trace.preacts.push_back(std::move(pre));
    }
    return trace;
}

Mat layerwise_jacobian(const MlpModel& model, const ForwardTrace& trace, std::size_t i) {
    if (i < 1 || i + 1 > model.depth()) {
        throw IndexError("layerwise_jacobian: layer " + std::to_string(i) + " outside [1, L-1]");
    }
    const Mat& next = model.layer(i + 1).weight;
    const Vec& pre = trace.preact(i);
    Mat out = next;
    for (std::size_t j = 0; j < out.rows(); ++j)
        for (std::size_t k = 0; k < out.cols(); ++k) out(j, k) *= elu_prime(pre[k]);
    return out;
}

std::vector<Mat> preactivation_jacobians(const MlpModel& model, const ForwardTrace& trace) {
    const std::size_t depth = model.depth();
    std::vector<Mat> out(depth);
    out[depth - 1] = Mat::identity(model.output_dim());
    for (std::size_t i = depth - 1; i >= 1; --i) {
        Mat jac = linalg::matmul(out[i], model.layer(i + 1).weight);
        const Vec& pre = trace.preact(i);
        for (std::size_t q = 0; q < jac.rows(); ++q)
            for (std::size_t k = 0; k < jac.cols(); ++k) jac(q, k) *= elu_prime(pre[k]);
        out[i - 1] = std::move(jac);
    }
    return out;
}

Mat preactivation_jacobian(const MlpModel& model, const ForwardTrace& trace, std::size_t i) {
    if (i < 1 || i > model.depth()) {
        throw IndexError("preactivation_jacobian: layer " + std::to_string(i) + " outside [1, L]");
    }
    return preactivation_jacobians(model, trace)[i - 1];
}

Mat param_jacobian(const MlpModel& model, const ForwardTrace& trace) {
    const ParamLayout layout = model.layout();
    const std::vector<Mat> pre_jac = preactivation_jacobians(model, trace);
    const std::size_t outputs = model.output_dim();
    Mat jac(outputs, layout.count());
    for (std::size_t i = 1; i <= model.depth(); ++i) {
        const Mat& pj = pre_jac[i - 1];
        const Vec& input = trace.act(i - 1);
        const std::size_t w_off = layout.weight_offset(i);
        const std::size_t b_off = layout.bias_offset(i);
        for (std::size_t q = 0; q < outputs; ++q) {
            auto row = jac.row(q);
            for (std::size_t j = 0; j < pj.cols(); ++j) {
                const double g = pj(q, j);
                for (std::size_t k = 0; k < input.size(); ++k) row[w_off + j * input.size() + k] = g * input[k];
                row[b_off + j] = g;
            }
        }
    }
    return jac;
}

namespace {

struct Partial {
    double loss_sum = 0.0;
    ParamVector grad;
};

Mat rows_of(const Mat& m, std::size_t begin, std::size_t count) {
    Mat out(count, m.cols());
    for (std::size_t r = 0; r < count; ++r) {
        auto src = m.row(begin + r);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

void add_bias_rows(Mat& m, std::span<const double> bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
}

void hadamard_inplace(Mat& m, const Mat& other) {
    auto a = m.data();
    auto b = other.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

// Writes a weight gradient block and the column sums of `signal` into `out`.
void scatter_layer(std::span<double> out, const ParamLayout& layout, std::size_t i, const Mat& weight_grad,
                   const Mat& signal) {
    auto w = weight_grad.data();
    std::copy(w.begin(), w.end(), out.begin() + std::ptrdiff_t(layout.weight_offset(i)));
    const std::size_t b_off = layout.bias_offset(i);
    for (std::size_t r = 0; r < signal.rows(); ++r) {
        auto row = signal.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[b_off + c] += row[c];
    }
}

void add_into(ParamVector& acc, const ParamVector& part) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += part[i];
}

}  // namespace

LossEvaluation::LossEvaluation(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind,
                               ExecOptions exec)
    : model_(model), data_(&data), kind_(kind), exec_(exec), layout_(model.widths()) {
    kind_.validate();
    if (data.size() == 0) throw DataError("LossEvaluation: empty dataset");
    if (data.dim() != model.input_dim()) {
        throw ShapeError("LossEvaluation: dataset dimension " + std::to_string(data.dim()) + " != model input " +
                         std::to_string(model.input_dim()));
    }
    if (kind_.num_classes != model.output_dim()) {
        throw ShapeError("LossEvaluation: criterion classes != model outputs");
    }
    for (std::size_t begin = 0; begin < data.size(); begin += kChunkSize) {
        Chunk c;
        c.begin = begin;
        c.count = std::min(kChunkSize, data.size() - begin);
        chunks_.push_back(std::move(c));
    }

    const std::size_t n_chunks = chunks_.size();
    Partial total = map_reduce_chunks<Partial>(
        n_chunks, exec_,
        [&](std::size_t ci) {
            Chunk& chunk = chunks_[ci];
            build_chunk(chunk);
            Partial part{0.0, ParamVector(layout_.count(), 0.0)};
            const Mat& out = chunk.preacts.back();
            for (std::size_t r = 0; r < chunk.count; ++r)
                part.loss_sum += criterion::criterion_value(kind_, out.row(r), data_->labels[chunk.begin + r]);
            for (std::size_t i = model_.depth(); i >= 1; --i) {
                const Mat wg = linalg::matmul_tn(chunk.delta[i - 1], chunk.acts[i - 1]);
                scatter_layer(part.grad, layout_, i, wg, chunk.delta[i - 1]);
            }
            return part;
        },
        [](Partial& acc, const Partial& part) {
            acc.loss_sum += part.loss_sum;
            add_into(acc.grad, part.grad);
        });

    const double inv_n = 1.0 / double(data.size());
    loss_ = total.loss_sum * inv_n;
    gradient_ = std::move(total.grad);
    linalg::scale(gradient_, inv_n);
}

void LossEvaluation::build_chunk(Chunk& chunk) const {
    const std::size_t depth = model_.depth();
    chunk.acts.assign(1, rows_of(data_->inputs, chunk.begin, chunk.count));
    chunk.preacts.clear();
    chunk.dprime.clear();
    chunk.dsecond.clear();
    for (std::size_t i = 1; i <= depth; ++i) {
        const Layer& layer = model_.layer(i);
        Mat pre = linalg::matmul_nt(chunk.acts.back(), layer.weight);
        add_bias_rows(pre, layer.bias);
        if (i < depth) {
            Mat act(pre.rows(), pre.cols());
            Mat d1(pre.rows(), pre.cols());
            Mat d2(pre.rows(), pre.cols());
            auto p = pre.data();
            for (std::size_t k = 0; k < p.size(); ++k) {
                act.data()[k] = elu(p[k]);
                d1.data()[k] = elu_prime(p[k]);
                d2.data()[k] = elu_second(p[k]);
            }
            chunk.acts.push_back(std::move(act));
            chunk.dprime.push_back(std::move(d1));
            chunk.dsecond.push_back(std::move(d2));
        }
        chunk.preacts.push_back(std::move(pre));
    }

    chunk.delta.assign(depth, Mat());
    chunk.upstream.assign(depth - 1, Mat());
    const Mat& out = chunk.preacts.back();
    Mat top(out.rows(), out.cols());
    for (std::size_t r = 0; r < chunk.count; ++r) {
        const Vec g = criterion::criterion_gradient(kind_, out.row(r), data_->labels[chunk.begin + r]);
        std::copy(g.begin(), g.end(), top.row(r).begin());
    }
    chunk.delta[depth - 1] = std::move(top);
    for (std::size_t i = depth; i >= 2; --i) {
        Mat up = linalg::matmul(chunk.delta[i - 1], model_.layer(i).weight);
        Mat d = up;
        hadamard_inplace(d, chunk.dprime[i - 2]);
        chunk.upstream[i - 2] = std::move(up);
        chunk.delta[i - 2] = std::move(d);
    }
}

ParamVector LossEvaluation::directional(std::span<const double> v, bool full_hessian) const {
    if (v.size() != layout_.count()) {
        throw ShapeError("directional product: vector length " + std::to_string(v.size()) + " != " +
                         std::to_string(layout_.count()));
    }
    const std::size_t depth = model_.depth();
    std::vector<Mat> dir_weight;
    std::vector<Vec> dir_bias;
    for (std::size_t i = 1; i <= depth; ++i) {
        const Layer& layer = model_.layer(i);
        const auto w_begin = v.begin() + std::ptrdiff_t(layout_.weight_offset(i));
        dir_weight.emplace_back(layer.weight.rows(), layer.weight.cols(),
                                std::vector<double>(w_begin, w_begin + std::ptrdiff_t(layer.weight.size())));
        const auto b_begin = v.begin() + std::ptrdiff_t(layout_.bias_offset(i));
        dir_bias.emplace_back(b_begin, b_begin + std::ptrdiff_t(layer.bias.size()));
    }

    ParamVector total = map_reduce_chunks<ParamVector>(
        chunks_.size(), exec_,
        [&](std::size_t ci) {
            const Chunk& chunk = chunks_[ci];
            // Forward tangents: r_pre[i-1] = R{x̂^i}, r_act[i] = R{x^i}.
            std::vector<Mat> r_pre(depth);
            std::vector<Mat> r_act(depth);
            for (std::size_t i = 1; i <= depth; ++i) {
                Mat rp = linalg::matmul_nt(chunk.acts[i - 1], dir_weight[i - 1]);
                if (i > 1) rp += linalg::matmul_nt(r_act[i - 1], model_.layer(i).weight);
                add_bias_rows(rp, dir_bias[i - 1]);
                if (i < depth) {
                    Mat ra = rp;
                    hadamard_inplace(ra, chunk.dprime[i - 1]);
                    r_act[i] = std::move(ra);
                }
                r_pre[i - 1] = std::move(rp);
            }

            const Mat& out = chunk.preacts.back();
            const Mat& r_out = r_pre.back();
            Mat r_delta(out.rows(), out.cols());
            for (std::size_t r = 0; r < chunk.count; ++r) {
                const Vec h = criterion::output_hessian_apply(kind_, out.row(r), r_out.row(r));
                std::copy(h.begin(), h.end(), r_delta.row(r).begin());
            }

            ParamVector part(layout_.count(), 0.0);
            for (std::size_t i = depth; i >= 1; --i) {
                Mat wg = linalg::matmul_tn(r_delta, chunk.acts[i - 1]);
                if (full_hessian && i > 1) wg += linalg::matmul_tn(chunk.delta[i - 1], r_act[i - 1]);
                scatter_layer(part, layout_, i, wg, r_delta);
                if (i == 1) break;
                Mat r_up = linalg::matmul(r_delta, model_.layer(i).weight);
                if (full_hessian) r_up += linalg::matmul(chunk.delta[i - 1], dir_weight[i - 1]);
                Mat next = r_up;
                hadamard_inplace(next, chunk.dprime[i - 2]);
                if (full_hessian) {
                    auto nd = next.data();
                    auto d2 = chunk.dsecond[i - 2].data();
                    auto rp = r_pre[i - 2].data();
                    auto up = chunk.upstream[i - 2].data();
                    for (std::size_t k = 0; k < nd.size(); ++k) nd[k] += d2[k] * rp[k] * up[k];
                }
                r_delta = std::move(next);
            }
            return part;
        },
        [](ParamVector& acc, const ParamVector& part) { add_into(acc, part); });

    linalg::scale(total, 1.0 / double(data_->size()));
    return total;
}

ParamVector LossEvaluation::hessian_vector_product(std::span<const double> v) const { return directional(v, true); }

ParamVector LossEvaluation::gauss_newton_vector_product(std::span<const double> v) const {
    return directional(v, false);
}

double loss_value(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind) {
    return LossEvaluation(model, data, kind).loss();
}

ParamVector loss_gradient(const MlpModel& model, const LabeledDataset& data, const criterion::CriterionKind& kind) {
    return LossEvaluation(model, data, kind).gradient();
}

ParamVector hessian_vector_product(const MlpModel& model, const LabeledDataset& data,
                                   const criterion::CriterionKind& kind, std::span<const double> v) {
    return LossEvaluation(model, data, kind).hessian_vector_product(v);
}

}  // namespace eos::model

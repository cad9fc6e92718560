#include "eos/criterion.hpp"

#include "eos/error.hpp"

#include <algorithm>
#include <cmath>

namespace eos::criterion {

void CriterionKind::validate() const {
    if (num_classes < 2) throw ContractError("criterion: num_classes must be >= 2");
}

std::string to_string(Tag tag) { return tag == Tag::cross_entropy ? "cross_entropy" : "mse"; }

Tag parse_tag(const std::string& name) {
    if (name == "cross_entropy" || name == "cross-entropy" || name == "ce") return Tag::cross_entropy;
    if (name == "mse") return Tag::mse;
    throw ArgumentError("unknown criterion '" + name + "' (expected cross_entropy or mse)");
}

double default_loss_threshold(Tag tag) { return tag == Tag::cross_entropy ? 0.01 : 0.02; }

namespace {

void check_inputs(const CriterionKind& kind, std::span<const double> z, std::size_t y) {
    if (z.size() != kind.num_classes) {
        throw ShapeError("criterion: output length " + std::to_string(z.size()) + " != num_classes " +
                         std::to_string(kind.num_classes));
    }
    if (y >= kind.num_classes) {
        throw LabelError("criterion: label " + std::to_string(y) + " outside [0, " + std::to_string(kind.num_classes) +
                         ")");
    }
}

double log_sum_exp(std::span<const double> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - zmax);
    return zmax + std::log(s);
}

}  // namespace

Vec softmax(std::span<const double> z) {
    Vec p(z.begin(), z.end());
    const double zmax = *std::max_element(p.begin(), p.end());
    double s = 0.0;
    for (double& v : p) {
        v = std::exp(v - zmax);
        s += v;
    }
    for (double& v : p) v /= s;
    return p;
}

Vec one_hot(std::size_t label, std::size_t num_classes) {
    if (label >= num_classes) throw LabelError("one_hot: label out of range");
    Vec out(num_classes, 0.0);
    out[label] = 1.0;
    return out;
}

double criterion_value(const CriterionKind& kind, std::span<const double> z, std::size_t y) {
    check_inputs(kind, z, y);
    if (kind.tag == Tag::cross_entropy) return log_sum_exp(z) - z[y];
    double s = 0.0;
    for (std::size_t q = 0; q < z.size(); ++q) {
        const double d = z[q] - (q == y ? 1.0 : 0.0);
        s += d * d;
    }
    return s / double(z.size());
}

Vec criterion_gradient(const CriterionKind& kind, std::span<const double> z, std::size_t y) {
    check_inputs(kind, z, y);
    if (kind.tag == Tag::cross_entropy) {
        Vec g = softmax(z);
        g[y] -= 1.0;
        return g;
    }
    Vec g(z.size());
    const double c = 2.0 / double(z.size());
    for (std::size_t q = 0; q < z.size(); ++q) g[q] = c * (z[q] - (q == y ? 1.0 : 0.0));
    return g;
}

OutputCurvature output_hessian(const CriterionKind& kind, std::span<const double> z, std::size_t y) {
    check_inputs(kind, z, y);
    const std::size_t n = z.size();
    OutputCurvature out;
    if (kind.tag == Tag::cross_entropy) {
        const Vec p = softmax(z);
        out.hessian = Mat(n, n);
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t r = 0; r < n; ++r) out.hessian(q, r) = (q == r ? p[q] : 0.0) - p[q] * p[r];
        out.sqrt = linalg::psd_sqrt(out.hessian);
    } else {
        const double h = 2.0 / double(n);
        out.hessian = h * Mat::identity(n);
        out.sqrt = std::sqrt(h) * Mat::identity(n);
    }
    return out;
}

Vec output_hessian_apply(const CriterionKind& kind, std::span<const double> z, std::span<const double> u) {
    if (z.size() != kind.num_classes || u.size() != z.size()) throw ShapeError("output_hessian_apply: length mismatch");
    Vec out(u.size());
    if (kind.tag == Tag::cross_entropy) {
        const Vec p = softmax(z);
        const double pu = linalg::dot(p, u);
        for (std::size_t q = 0; q < u.size(); ++q) out[q] = p[q] * (u[q] - pu);
    } else {
        const double h = 2.0 / double(u.size());
        for (std::size_t q = 0; q < u.size(); ++q) out[q] = h * u[q];
    }
    return out;
}

}  // namespace eos::criterion

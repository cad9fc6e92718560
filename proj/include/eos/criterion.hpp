#pragma once

#include "eos/linalg.hpp"

#include <cstddef>
#include <span>
#include <string>

namespace eos::criterion {

using linalg::Mat;
using linalg::Vec;

enum class Tag { cross_entropy, mse };

// Convex criterion l(z, y) over n = num_classes network outputs.
//   cross_entropy: -log softmax(z)_y
//   mse:           (1/n)·‖z − onehot(y)‖²
struct CriterionKind {
    Tag tag = Tag::cross_entropy;
    std::size_t num_classes = 2;

    void validate() const;
    friend bool operator==(const CriterionKind&, const CriterionKind&) = default;
};

std::string to_string(Tag tag);
Tag parse_tag(const std::string& name);

// Loss value at which training is considered finished (0.01 CE, 0.02 MSE).
double default_loss_threshold(Tag tag);

Vec softmax(std::span<const double> z);
Vec one_hot(std::size_t label, std::size_t num_classes);

double criterion_value(const CriterionKind& kind, std::span<const double> z, std::size_t y);
Vec criterion_gradient(const CriterionKind& kind, std::span<const double> z, std::size_t y);

struct OutputCurvature {
    Mat hessian;  // H_z l, symmetric PSD
    Mat sqrt;     // R with R·R = H_z l
};

OutputCurvature output_hessian(const CriterionKind& kind, std::span<const double> z, std::size_t y);

// (H_z l)·u without forming the matrix.
Vec output_hessian_apply(const CriterionKind& kind, std::span<const double> z, std::span<const double> u);

}  // namespace eos::criterion

#pragma once

#include "eos/linalg.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace eos {

struct Provenance {
    std::string source;  // "dice", "cifar10", "csv", "file", ...
    std::uint64_t generator_seed = 0;
    std::uint64_t subset_seed = 0;
    std::size_t subset_size = 0;  // 0 when not subsetted
};

// N samples of dimension D with integer class labels in [0, num_classes).
struct LabeledDataset {
    linalg::Mat inputs;  // N x D, row per sample
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;
    Provenance provenance;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return inputs.cols(); }

    // Throws DataError when any invariant is broken.
    void validate() const;

    linalg::Mat one_hot() const;
};

}  // namespace eos

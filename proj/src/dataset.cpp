#include "eos/dataset.hpp"

#include "eos/error.hpp"

#include <cmath>
#include <string>

namespace eos {

void LabeledDataset::validate() const {
    if (labels.empty()) throw DataError("dataset is empty");
    if (inputs.rows() != labels.size()) {
        throw DataError("dataset has " + std::to_string(inputs.rows()) + " input rows but " +
                        std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 1) throw DataError("dataset has no classes");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
    }
    if (!inputs.all_finite()) throw DataError("dataset contains non-finite inputs");
}

linalg::Mat LabeledDataset::one_hot() const {
    linalg::Mat out(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) out(i, labels[i]) = 1.0;
    return out;
}

}  // namespace eos

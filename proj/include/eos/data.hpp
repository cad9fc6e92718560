#pragma once

#include "eos/dataset.hpp"
#include "eos/parallel.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace eos::data {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

enum class EndType : int { round = 0, butt = 1, square = 2 };

const char* to_string(EndType e) noexcept;

// Sampling ranges for one symbol class. Unused fields are ignored.
struct ClassRanges {
    Range x_coord{-1.0, 1.0};
    Range y_coord{-1.0, 1.0};
    Range p_size{0.1, 1.0};
    Range l_weight{0.1, 1.0};
    Range x_shift{0.0, 0.0};
    Range y_shift{0.0, 0.0};
    int e_type_lo = 0;
    int e_type_hi = 2;
};

struct DiceParams {
    std::array<ClassRanges, 6> classes;  // index class_id - 1
    double radius_px_per_size = 2.5;
    double stroke_px_per_weight = 1.5;
    std::size_t supersample = 4;

    static DiceParams defaults();
    void validate() const;
    const ClassRanges& of(int class_id) const;
};

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kDiceClasses = 6;

// Ink coverage in [0,1], row-major, row 0 at the top.
struct RasterImage {
    std::array<double, kImagePixels> pixels{};

    double& at(std::size_t row, std::size_t col) { return pixels[row * kImageSide + col]; }
    double at(std::size_t row, std::size_t col) const { return pixels[row * kImageSide + col]; }
    RasterImage rotated180() const;
    friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

// One concrete draw of the symbol parameters.
struct DiceDraw {
    int class_id = 1;
    double x = 0.0;
    double y = 0.0;
    double p_size = 0.0;
    double l_weight = 0.0;
    EndType e_type = EndType::round;
    double x_shift = 0.0;
    double y_shift = 0.0;
};

DiceDraw sample_dice_draw(int class_id, const DiceParams& params, std::uint64_t seed);
RasterImage render_dice(const DiceDraw& draw, const DiceParams& params);
RasterImage generate_dice(int class_id, const DiceParams& params, std::uint64_t seed);

// 6·n_per_class images, sample s has class (s mod 6) + 1 and label s mod 6,
// drawn with seed derive_seed(seed, s).
LabeledDataset generate_dice_dataset(std::size_t n_per_class, const DiceParams& params, std::uint64_t seed,
                                     const ExecOptions& exec = {});

// Fixed split seed shared by every experiment.
inline constexpr std::uint64_t kSplitSeed = 0x7e57'5b11'7000'0001ULL;

// Shuffles with `seed` and cuts off round(test_fraction·N) samples as the test set.
std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data, double test_fraction,
                                                           std::uint64_t seed = kSplitSeed);

// Uniform sample of `size` rows without replacement, in draw order.
LabeledDataset subset(const LabeledDataset& data, std::size_t size, std::uint64_t seed);

// Rows selected by index, in the given order.
LabeledDataset take_rows(const LabeledDataset& data, const std::vector<std::size_t>& rows);

inline constexpr std::size_t kCifarRecordBytes = 1 + 3072;

// CIFAR-10 binary batches: 1 label byte followed by 3072 pixel bytes per record.
LabeledDataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths);

// One row per sample: integer label, then D decimal values. No header.
// num_classes = 0 infers max(label) + 1.
LabeledDataset load_vector_csv(const std::filesystem::path& path, std::size_t num_classes = 0);

// Internal binary format "EOSD".
void write_dataset(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset read_dataset(const std::filesystem::path& path);

}  // namespace eos::data

#include "eos/data.hpp"

#include "binio.hpp"
#include "eos/error.hpp"
#include "eos/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace eos::data {

const char* to_string(EndType e) noexcept {
    switch (e) {
        case EndType::round: return "round";
        case EndType::butt: return "butt";
        case EndType::square: return "square";
    }
    return "?";
}

DiceParams DiceParams::defaults() {
    DiceParams p;
    auto& ones = p.classes[0];
    ones.p_size = {0.1, 1.0};
    p.classes[1] = ones;

    auto& threes = p.classes[2];
    threes.l_weight = {0.1, 2.5};

    auto& fours = p.classes[3];
    fours.l_weight = {0.1, 1.0};

    auto& fives = p.classes[4];
    fives.x_coord = {0.2, 1.0};
    fives.y_coord = {0.2, 1.0};
    fives.p_size = {0.1, 0.7};
    fives.l_weight = {0.1, 1.0};

    auto& sixes = p.classes[5];
    sixes.x_coord = {-0.9, 0.9};
    sixes.y_coord = {-0.9, 0.9};
    sixes.l_weight = {0.1, 2.5};
    sixes.x_shift = {0.1, 0.8};
    sixes.y_shift = {0.1, 0.8};
    return p;
}

void DiceParams::validate() const {
    auto check = [](const Range& r, const char* name, int c) {
        if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
            throw ConfigError("dice class " + std::to_string(c) + ": invalid " + name + " range");
    };
    for (int c = 1; c <= 6; ++c) {
        const ClassRanges& r = classes[c - 1];
        check(r.x_coord, "x_coord", c);
        check(r.y_coord, "y_coord", c);
        check(r.p_size, "p_size", c);
        check(r.l_weight, "l_weight", c);
        check(r.x_shift, "x_shift", c);
        check(r.y_shift, "y_shift", c);
        if (r.e_type_lo < 0 || r.e_type_hi > 2 || r.e_type_lo > r.e_type_hi)
            throw ConfigError("dice class " + std::to_string(c) + ": e_type range must lie in [0, 2]");
    }
    if (!(radius_px_per_size > 0.0) || !(stroke_px_per_weight > 0.0)) throw ConfigError("dice: pixel scales must be positive");
    if (supersample < 1) throw ConfigError("dice: supersample must be >= 1");
}

const ClassRanges& DiceParams::of(int class_id) const {
    if (class_id < 1 || class_id > 6) throw ArgumentError("dice class id must be in 1..6, got " + std::to_string(class_id));
    return classes[class_id - 1];
}

RasterImage RasterImage::rotated180() const {
    RasterImage out;
    for (std::size_t i = 0; i < kImagePixels; ++i) out.pixels[kImagePixels - 1 - i] = pixels[i];
    return out;
}

DiceDraw sample_dice_draw(int class_id, const DiceParams& params, std::uint64_t seed) {
    const ClassRanges& r = params.of(class_id);
    Rng rng(seed);
    DiceDraw d;
    d.class_id = class_id;
    d.x = rng.uniform(r.x_coord.lo, r.x_coord.hi);
    d.y = rng.uniform(r.y_coord.lo, r.y_coord.hi);
    d.p_size = rng.uniform(r.p_size.lo, r.p_size.hi);
    d.l_weight = rng.uniform(r.l_weight.lo, r.l_weight.hi);
    d.e_type = static_cast<EndType>(r.e_type_lo + int(rng.below(std::uint64_t(r.e_type_hi - r.e_type_lo + 1))));
    d.x_shift = rng.uniform(r.x_shift.lo, r.x_shift.hi);
    d.y_shift = rng.uniform(r.y_shift.lo, r.y_shift.hi);
    return d;
}

namespace {

constexpr double kFilterWidth = 0.25;  // px
constexpr double kFar = std::numeric_limits<double>::infinity();

struct Point {
    double c = 0.0;  // column coordinate, px
    double r = 0.0;  // row coordinate, px
};

Point to_pixels(double x, double y) {
    const double half = double(kImageSide) / 2.0;
    return {(x + 1.0) * half, (1.0 - y) * half};
}

struct Primitive {
    enum Kind { disk, segment } kind = disk;
    Point a, b;
    double half_width = 0.0;  // radius for disks
    EndType cap = EndType::round;

    // Signed distance from p to the primitive's boundary (negative inside).
    double distance(Point p) const {
        if (kind == disk) return std::hypot(p.c - a.c, p.r - a.r) - half_width;
        const double dc = b.c - a.c, dr = b.r - a.r;
        const double len = std::hypot(dc, dr);
        if (cap == EndType::round) {
            double t = 0.0;
            if (len > 0.0) t = std::clamp(((p.c - a.c) * dc + (p.r - a.r) * dr) / (len * len), 0.0, 1.0);
            return std::hypot(p.c - (a.c + t * dc), p.r - (a.r + t * dr)) - half_width;
        }
        if (len == 0.0 && cap == EndType::butt) return kFar;
        const double uc = len > 0.0 ? dc / len : 1.0, ur = len > 0.0 ? dr / len : 0.0;
        const double mc = 0.5 * (a.c + b.c), mr = 0.5 * (a.r + b.r);
        const double along = (p.c - mc) * uc + (p.r - mr) * ur;
        const double across = -(p.c - mc) * ur + (p.r - mr) * uc;
        const double extend = cap == EndType::square ? half_width : 0.0;
        return std::max(std::abs(along) - (0.5 * len + extend), std::abs(across) - half_width);
    }
};

std::vector<Primitive> primitives_for(const DiceDraw& d, const DiceParams& params) {
    const double radius = d.p_size * params.radius_px_per_size;
    const double hw = 0.5 * d.l_weight * params.stroke_px_per_weight;
    auto pip = [&](double x, double y) { return Primitive{Primitive::disk, to_pixels(x, y), {}, radius, EndType::round}; };
    auto line = [&](double x0, double y0, double x1, double y1) {
        return Primitive{Primitive::segment, to_pixels(x0, y0), to_pixels(x1, y1), hw, d.e_type};
    };
    auto box = [&](std::vector<Primitive>& out) {
        out.push_back(line(d.x, d.y, -d.x, d.y));
        out.push_back(line(-d.x, d.y, -d.x, -d.y));
        out.push_back(line(-d.x, -d.y, d.x, -d.y));
        out.push_back(line(d.x, -d.y, d.x, d.y));
    };

    std::vector<Primitive> out;
    switch (d.class_id) {
        case 1: out.push_back(pip(d.x, d.y)); break;
        case 2:
            out.push_back(pip(d.x, d.y));
            out.push_back(pip(-d.x, -d.y));
            break;
        case 3: out.push_back(line(d.x, d.y, -d.x, -d.y)); break;
        case 4: box(out); break;
        case 5:
            box(out);
            out.push_back(pip(0.0, 0.0));
            break;
        case 6:
            out.push_back(line(d.x - d.x_shift, d.y - d.y_shift, -d.x - d.x_shift, -d.y - d.y_shift));
            out.push_back(line(d.x + d.x_shift, d.y + d.y_shift, -d.x + d.x_shift, -d.y + d.y_shift));
            break;
        default: throw ArgumentError("dice class id must be in 1..6");
    }
    return out;
}

}  // namespace

RasterImage render_dice(const DiceDraw& draw, const DiceParams& params) {
    const std::vector<Primitive> prims = primitives_for(draw, params);
    const std::size_t s = params.supersample;
    const double inv = 1.0 / double(s * s);
    RasterImage img;
    for (std::size_t row = 0; row < kImageSide; ++row) {
        for (std::size_t col = 0; col < kImageSide; ++col) {
            double ink = 0.0;
            for (std::size_t i = 0; i < s; ++i) {
                for (std::size_t j = 0; j < s; ++j) {
                    const Point p{double(col) + (double(j) + 0.5) / double(s), double(row) + (double(i) + 0.5) / double(s)};
                    double cover = 0.0;
                    for (const Primitive& prim : prims)
                        cover = std::max(cover, std::clamp(0.5 - prim.distance(p) / kFilterWidth, 0.0, 1.0));
                    ink += cover;
                }
            }
            img.at(row, col) = ink * inv;
        }
    }
    return img;
}

RasterImage generate_dice(int class_id, const DiceParams& params, std::uint64_t seed) {
    return render_dice(sample_dice_draw(class_id, params, seed), params);
}

LabeledDataset generate_dice_dataset(std::size_t n_per_class, const DiceParams& params, std::uint64_t seed,
                                     const ExecOptions& exec) {
    if (n_per_class < 1) throw ArgumentError("generate_dice_dataset: n_per_class must be >= 1");
    params.validate();
    const std::size_t n = n_per_class * kDiceClasses;
    LabeledDataset out;
    out.inputs = linalg::Mat(n, kImagePixels);
    out.labels.resize(n);
    out.num_classes = kDiceClasses;
    out.provenance = {"dice", seed, 0, 0};
    parallel_for(n, resolve_thread_count(exec), [&](std::size_t s) {
        const int class_id = int(s % kDiceClasses) + 1;
        const RasterImage img = generate_dice(class_id, params, derive_seed(seed, s));
        std::copy(img.pixels.begin(), img.pixels.end(), out.inputs.row(s).begin());
        out.labels[s] = std::uint32_t(class_id - 1);
    });
    return out;
}

LabeledDataset take_rows(const LabeledDataset& data, const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.inputs = linalg::Mat(rows.size(), data.dim());
    out.labels.resize(rows.size());
    out.num_classes = data.num_classes;
    out.provenance = data.provenance;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= data.size()) throw IndexError("take_rows: row " + std::to_string(rows[i]) + " out of range");
        const auto src = data.inputs.row(rows[i]);
        std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
        out.labels[i] = data.labels[rows[i]];
    }
    return out;
}

namespace {

// First `count` entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(count);
    return idx;
}

}  // namespace

LabeledDataset subset(const LabeledDataset& data, std::size_t size, std::uint64_t seed) {
    if (size > data.size()) {
        throw ArgumentError("subset: size " + std::to_string(size) + " exceeds dataset size " +
                            std::to_string(data.size()));
    }
    LabeledDataset out = take_rows(data, draw_without_replacement(data.size(), size, seed));
    out.provenance.subset_seed = seed;
    out.provenance.subset_size = size;
    return out;
}

std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data, double test_fraction,
                                                           std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ArgumentError("train_test_split: fraction outside [0, 1]");
    const std::size_t n = data.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
    std::vector<std::size_t> order = draw_without_replacement(n, n, seed);
    std::vector<std::size_t> test(order.begin(), order.begin() + std::ptrdiff_t(n_test));
    std::vector<std::size_t> train(order.begin() + std::ptrdiff_t(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {take_rows(data, train), take_rows(data, test)};
}

LabeledDataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths) {
    if (paths.empty()) throw ArgumentError("load_cifar10_binary: no files given");
    std::vector<unsigned char> labels;
    std::vector<unsigned char> pixels;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open " + path.string());
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const std::size_t whole = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
        if (whole != bytes.size() || bytes.empty()) {
            throw FormatError(path.string() + ": truncated record at byte offset " + std::to_string(whole) + " (file has " +
                              std::to_string(bytes.size()) + " bytes, records are " +
                              std::to_string(kCifarRecordBytes) + " bytes)");
        }
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
            if (bytes[off] > 9)
                throw FormatError(path.string() + ": label " + std::to_string(bytes[off]) + " at byte offset " +
                                  std::to_string(off) + " outside 0..9");
            labels.push_back(bytes[off]);
            pixels.insert(pixels.end(), bytes.begin() + std::ptrdiff_t(off + 1),
                          bytes.begin() + std::ptrdiff_t(off + kCifarRecordBytes));
        }
    }
    LabeledDataset out;
    const std::size_t d = kCifarRecordBytes - 1;
    out.inputs = linalg::Mat(labels.size(), d);
    for (std::size_t i = 0; i < pixels.size(); ++i) out.inputs.data()[i] = double(pixels[i]) / 255.0;
    out.labels.assign(labels.begin(), labels.end());
    out.num_classes = 10;
    out.provenance.source = "cifar10";
    return out;
}

LabeledDataset load_vector_csv(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint32_t> labels;
    std::vector<double> values;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fail = [&](const std::string& msg) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
        };
        std::vector<double> row;
        std::size_t start = 0;
        bool first = true;
        long label = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            std::string_view field(line.data() + start, (comma == std::string::npos ? line.size() : comma) - start);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
            if (first) {
                const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
                if (ec != std::errc() || p != field.data() + field.size() || label < 0) fail("bad label '" + std::string(field) + "'");
                first = false;
            } else {
                double v = 0.0;
                const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
                if (ec != std::errc() || p != field.data() + field.size()) fail("bad value '" + std::string(field) + "'");
                row.push_back(v);
            }
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (row.empty()) fail("row has no values");
        if (dim == 0) dim = row.size();
        if (row.size() != dim) fail("expected " + std::to_string(dim) + " values, found " + std::to_string(row.size()));
        labels.push_back(std::uint32_t(label));
        values.insert(values.end(), row.begin(), row.end());
    }
    if (labels.empty()) throw DataError(path.string() + ": no rows");
    LabeledDataset out;
    out.inputs = linalg::Mat(labels.size(), dim, std::move(values));
    out.labels = std::move(labels);
    out.num_classes = num_classes > 0 ? num_classes : *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    out.provenance.source = "csv";
    out.validate();
    return out;
}

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

void write_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
    data.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write("EOSD", 4);
    binio::put<std::uint32_t>(out, kDatasetVersion);
    binio::put<std::uint64_t>(out, data.size());
    binio::put<std::uint64_t>(out, data.dim());
    binio::put<std::uint64_t>(out, data.num_classes);
    for (std::uint32_t l : data.labels) binio::put(out, l);
    for (double v : data.inputs.data()) binio::put(out, v);
    if (!out) throw DataError("write failed for " + path.string());
}

LabeledDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::string what = path.string();
    binio::expect_magic(in, "EOSD", what);
    const auto version = binio::get<std::uint32_t>(in, what);
    if (version != kDatasetVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    const auto n = binio::get<std::uint64_t>(in, what);
    const auto d = binio::get<std::uint64_t>(in, what);
    const auto c = binio::get<std::uint64_t>(in, what);
    const auto expected = std::uintmax_t(32) + n * 4 + n * d * 8;
    if (std::filesystem::file_size(path) != expected)
        throw FormatError(what + ": size " + std::to_string(std::filesystem::file_size(path)) + " does not match header (" +
                          std::to_string(expected) + " bytes)");
    LabeledDataset out;
    out.num_classes = c;
    out.labels.resize(n);
    for (auto& l : out.labels) l = binio::get<std::uint32_t>(in, what);
    out.inputs = linalg::Mat(n, d);
    for (std::size_t i = 0; i < n * d; ++i) out.inputs.data()[i] = binio::get<double>(in, what);
    out.provenance.source = "file";
    out.validate();
    return out;
}

}  // namespace eos::data

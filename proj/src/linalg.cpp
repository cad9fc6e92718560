#include "eos/linalg.hpp"

#include "eos/error.hpp"
#include "eos/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace eos::linalg {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Mat& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
MutMap view(Mat& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }

std::string shape(const Mat& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
    }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("Mat: data length does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Mat: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::diagonal(std::span<const double> diag) {
    Mat m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Mat Mat::column(std::span<const double> values) {
    return Mat(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Mat Mat::row_vector(std::span<const double> values) {
    return Mat(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Vec Mat::col(std::size_t c) const {
    Vec out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

void Mat::set_col(std::size_t c, std::span<const double> values) {
    if (values.size() != rows_) throw ShapeError("Mat::set_col: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Mat Mat::transposed() const {
    Mat t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Mat::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat& Mat::operator+=(const Mat& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Mat& Mat::operator-=(const Mat& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Mat& Mat::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(double s, Mat a) { return a *= s; }

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape(a) + " x " + shape(b));
    Mat c(a.rows(), b.cols());
    if (c.empty() || a.cols() == 0) return c;
    view(c).noalias() = view(a) * view(b);
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + shape(a) + "^T x " + shape(b));
    Mat c(a.cols(), b.cols());
    if (c.empty() || a.rows() == 0) return c;
    view(c).noalias() = view(a).transpose() * view(b);
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + shape(a) + " x " + shape(b) + "^T");
    Mat c(a.rows(), b.rows());
    if (c.empty() || a.cols() == 0) return c;
    view(c).noalias() = view(a) * view(b).transpose();
    return c;
}

Vec matvec(const Mat& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw ShapeError("matvec: " + shape(a) + " x " + std::to_string(x.size()));
    Vec y(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
    return y;
}

Vec matvec_t(const Mat& a, std::span<const double> x) {
    if (a.rows() != x.size()) throw ShapeError("matvec_t: " + shape(a) + "^T x " + std::to_string(x.size()));
    Vec y(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) axpy(x[r], a.row(r), y);
    return y;
}

Mat gram_rows(const Mat& a) {
    Mat g = matmul_nt(a, a);
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double s = 0.5 * (g(i, j) + g(j, i));
            g(i, j) = s;
            g(j, i) = s;
        }
    return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm_sq(std::span<const double> a) { return dot(a, a); }

bool all_finite(std::span<const double> x) noexcept {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}
double norm(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double s) {
    for (double& v : x) v *= s;
}

double max_abs(const Mat& m) {
    double out = 0.0;
    for (double v : m.data()) out = std::max(out, std::abs(v));
    return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
    double out = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
    return out;
}

double max_abs_diff(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "max_abs_diff");
    return max_abs_diff(a.data(), b.data());
}

double frobenius(const Mat& m) { return norm(m.data()); }

bool is_symmetric(const Mat& m, double tol) {
    if (m.rows() != m.cols()) return false;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol) return false;
    return true;
}

SymEig sym_eig(const Mat& m) {
    if (m.rows() != m.cols()) throw ContractError("sym_eig: matrix is not square (" + shape(m) + ")");
    if (!is_symmetric(m, 1e-10)) throw ContractError("sym_eig: matrix is not symmetric");
    const std::size_t n = m.rows();
    Mat a = m;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) a(j, i) = a(i, j);
    Mat v = Mat::identity(n);

    const double scale_ref = frobenius(a);
    auto off_diag = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    constexpr int kMaxSweeps = 100;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        if (off_diag() <= 1e-12 * scale_ref) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymEig out{Vec(n), Mat(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = v(k, order[j]);
    }
    return out;
}

Mat psd_sqrt(const Mat& m) {
    SymEig eig = sym_eig(m);
    const std::size_t n = m.rows();
    Vec root(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double lam = eig.eigenvalues[j];
        if (lam < -1e-12) throw NotPsdError("psd_sqrt: eigenvalue " + std::to_string(lam) + " below -1e-12");
        root[j] = lam > 0.0 ? std::sqrt(lam) : 0.0;
    }
    Mat out(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        if (root[j] == 0.0) continue;
        for (std::size_t r = 0; r < n; ++r) {
            const double vr = eig.eigenvectors(r, j) * root[j];
            for (std::size_t c = 0; c < n; ++c) out(r, c) += vr * eig.eigenvectors(c, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double s = 0.5 * (out(i, j) + out(j, i));
            out(i, j) = s;
            out(j, i) = s;
        }
    return out;
}

QrResult qr(const Mat& m) {
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    if (rows < cols) throw ShapeError("qr: need rows >= cols, got " + shape(m));

    // Column-major scratch so each column is contiguous.
    std::vector<Vec> q(cols, Vec(rows));
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 0; r < rows; ++r) q[c][r] = m(r, c);
    Mat rfac(cols, cols);
    SplitMix64 replacement_rng(0x51ed270b2057c3a1ULL);

    for (std::size_t j = 0; j < cols; ++j) {
        Vec& v = q[j];
        const double original = norm(v);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                const double proj = dot(q[i], v);
                rfac(i, j) += proj;
                axpy(-proj, q[i], v);
            }
        }
        double len = norm(v);
        if (len <= 1e-12 * std::max(original, 1e-300) || len == 0.0) {
            rfac(j, j) = 0.0;
            // Retry until the random direction survives orthogonalization.
            for (int attempt = 0; attempt < 16; ++attempt) {
                for (double& x : v) x = replacement_rng.uniform(-1.0, 1.0);
                for (int pass = 0; pass < 2; ++pass)
                    for (std::size_t i = 0; i < j; ++i) axpy(-dot(q[i], v), q[i], v);
                len = norm(v);
                if (len > 1e-8) break;
            }
            scale(v, 1.0 / len);
            continue;
        }
        rfac(j, j) = len;
        scale(v, 1.0 / len);
    }

    QrResult out{Mat(rows, cols), std::move(rfac)};
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 0; r < rows; ++r) out.q(r, c) = q[c][r];
    return out;
}

double top_singular_value_sq(const Mat& m, double tol) {
    if (m.empty()) throw ShapeError("top_singular_value_sq: empty matrix");
    const Mat gram = m.rows() <= m.cols() ? gram_rows(m) : gram_rows(m.transposed());
    const std::size_t n = gram.rows();
    if (max_abs(gram) == 0.0) return 0.0;

    SplitMix64 rng(0x9e3779b97f4a7c15ULL ^ n);
    Vec v(n);
    for (double& x : v) x = 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
    scale(v, 1.0 / norm(v));

    double mu = 0.0;
    constexpr int kMaxIters = 200000;
    for (int it = 0; it < kMaxIters; ++it) {
        Vec w = matvec(gram, v);
        const double next = dot(v, w);
        const double len = norm(w);
        if (len == 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / len;
        if (it > 1 && std::abs(next - mu) <= 1e-2 * tol * std::abs(next)) return next;
        mu = next;
    }
    return mu;
}

}  // namespace eos::linalg

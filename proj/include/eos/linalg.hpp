#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace eos::linalg {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
    Mat(std::initializer_list<std::initializer_list<double>> rows);

    static Mat identity(std::size_t n);
    static Mat diagonal(std::span<const double> diag);
    static Mat column(std::span<const double> values);
    static Mat row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    Vec col(std::size_t c) const;
    void set_col(std::size_t c, std::span<const double> values);

    Mat transposed() const;
    bool all_finite() const noexcept;

    Mat& operator+=(const Mat& other);
    Mat& operator-=(const Mat& other);
    Mat& operator*=(double s) noexcept;

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double s, Mat a);

// a·b. Summation order per output entry is fixed for a given shape.
Mat matmul(const Mat& a, const Mat& b);
// aᵀ·b without materializing the transpose.
Mat matmul_tn(const Mat& a, const Mat& b);
// a·bᵀ without materializing the transpose.
Mat matmul_nt(const Mat& a, const Mat& b);
Vec matvec(const Mat& a, std::span<const double> x);
Vec matvec_t(const Mat& a, std::span<const double> x);
// a·aᵀ (symmetric by construction).
Mat gram_rows(const Mat& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double norm_sq(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> x, double s);
bool all_finite(std::span<const double> x) noexcept;

double max_abs(const Mat& m);
double max_abs_diff(const Mat& a, const Mat& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
double frobenius(const Mat& m);
bool is_symmetric(const Mat& m, double tol);

struct SymEig {
    Vec eigenvalues;  // descending
    Mat eigenvectors;  // column j pairs with eigenvalues[j]
};

// Cyclic Jacobi. Throws ContractError unless m is symmetric within 1e-10.
SymEig sym_eig(const Mat& m);

// Unique symmetric PSD square root. Eigenvalues in [-1e-12, 0) are clamped to
// zero; anything more negative raises NotPsdError.
Mat psd_sqrt(const Mat& m);

struct QrResult {
    Mat q;  // rows x cols, orthonormal columns
    Mat r;  // cols x cols, upper triangular with nonnegative diagonal
};

// Modified Gram-Schmidt with one re-orthogonalization pass. A column that is
// numerically dependent on its predecessors is replaced by a fixed-seed random
// unit vector orthogonalized against them; its R diagonal entry is zero.
QrResult qr(const Mat& m);

// Squared operator norm by power iteration on the smaller Gram matrix.
double top_singular_value_sq(const Mat& m, double tol = 1e-10);

}  // namespace eos::linalg

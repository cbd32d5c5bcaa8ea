#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rmlab {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

// Singular values in non-increasing order.
struct SingularSpectrum {
    std::vector<double> values;
};

// Population moments of a sample.
struct MomentStats {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double skewness = 0.0;
};

// Numerically stable logistic function.
double sigmoid(double x);

// Numerically stable log(sigmoid(x)); never returns -inf for finite x.
double log_sigmoid(double x);

// Max-shifted softmax. Throws on empty input.
std::vector<double> softmax(std::span<const double> logits);

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> a, std::span<const double> b);

double norm2(std::span<const double> v);

// out = m * v  (m.cols == v.size(), out.size() == m.rows)
void matvec(const Matrix& m, std::span<const double> v, std::span<double> out);

// out = m^T * v  (m.rows == v.size(), out.size() == m.cols)
void matvec_transposed(const Matrix& m, std::span<const double> v, std::span<double> out);

// Gram matrix of the smaller side: m*m^T if rows <= cols, else m^T*m.
// The parallel version distributes entries across OpenMP threads; each entry
// is a fixed-order dot product, so results are bit-identical to the serial
// twin regardless of thread count.
Matrix gram_smaller(const Matrix& m);
Matrix gram_smaller_serial(const Matrix& m);

// Singular values via cyclic Jacobi eigen-decomposition of the smaller Gram
// matrix. Deterministic: fixed sweep order, off-diagonal tolerance 1e-12
// relative to the Frobenius norm, at most 100 sweeps.
SingularSpectrum singular_values(const Matrix& m);

// Kendall rank correlation with tie correction (tau-b), computed by
// merge-sort inversion counting in O(n log n) with exact integer pair counts.
// Throws degenerate_input_error when either input is constant, and
// std::invalid_argument on size mismatch or n < 2.
double kendall_tau(std::span<const double> a, std::span<const double> b);

// Population mean, standard deviation, and skewness. Skewness is defined as 0
// when the standard deviation is 0. Throws on empty input.
MomentStats moments(std::span<const double> samples);

}  // namespace rmlab

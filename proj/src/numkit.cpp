#include "rmlab/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "rmlab/errors.hpp"

namespace rmlab {

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    if (x >= 0.0) {
        return -std::log1p(std::exp(-x));
    }
    return x - std::log1p(std::exp(x));
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

void matvec(const Matrix& m, std::span<const double> v, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        out[r] = dot(m.row(r), v);
    }
}

void matvec_transposed(const Matrix& m, std::span<const double> v, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        axpy(v[r], m.row(r), out);
    }
}

namespace {

double gram_entry(const Matrix& m, bool wide, std::size_t i, std::size_t j) {
    if (wide) {
        // rows <= cols: entry (i, j) of m*m^T is a dot of two rows.
        return dot(m.row(i), m.row(j));
    }
    double s = 0.0;
    for (std::size_t k = 0; k < m.rows; ++k) s += m.at(k, i) * m.at(k, j);
    return s;
}

Matrix gram_impl(const Matrix& m, bool parallel) {
    bool wide = m.rows <= m.cols;
    std::size_t n = wide ? m.rows : m.cols;
    Matrix g(n, n);
    std::int64_t total = static_cast<std::int64_t>(n * (n + 1) / 2);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t t = 0; t < total; ++t) {
        // Unrank the linear index into the upper triangle (i <= j).
        std::int64_t i = 0;
        std::int64_t rem = t;
        while (rem >= static_cast<std::int64_t>(n) - i) {
            rem -= static_cast<std::int64_t>(n) - i;
            ++i;
        }
        std::int64_t j = i + rem;
        double v = gram_entry(m, wide, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
        g.at(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v;
    }
    return g;
}

}  // namespace

Matrix gram_smaller(const Matrix& m) {
    return gram_impl(m, true);
}

Matrix gram_smaller_serial(const Matrix& m) {
    return gram_impl(m, false);
}

SingularSpectrum singular_values(const Matrix& m) {
    if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("singular_values: empty matrix");
    Matrix g = gram_smaller(m);
    std::size_t n = g.rows;

    double frob2 = 0.0;
    for (double v : g.data) frob2 += v * v;
    double tol = 1e-12 * std::sqrt(frob2);
    if (tol == 0.0) {
        // Zero matrix: all singular values are zero.
        SingularSpectrum zero;
        zero.values.assign(n, 0.0);
        return zero;
    }

    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = g.at(p, q);
                if (std::abs(apq) <= tol) continue;
                rotated = true;
                double app = g.at(p, p);
                double aqq = g.at(q, q);
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double gkp = g.at(k, p);
                    double gkq = g.at(k, q);
                    g.at(k, p) = c * gkp - s * gkq;
                    g.at(k, q) = s * gkp + c * gkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double gpk = g.at(p, k);
                    double gqk = g.at(q, k);
                    g.at(p, k) = c * gpk - s * gqk;
                    g.at(q, k) = s * gpk + c * gqk;
                }
            }
        }
        if (!rotated) break;
    }

    // Eigenvalues below the Jacobi noise floor are numerically
    // indistinguishable from zero through the Gram route; flush them so
    // rank-deficient spectra come out exact.
    double floor = static_cast<double>(n) * tol;
    SingularSpectrum spec;
    spec.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lambda = g.at(i, i);
        spec.values[i] = lambda <= floor ? 0.0 : std::sqrt(lambda);
    }
    std::sort(spec.values.begin(), spec.values.end(), std::greater<double>());
    return spec;
}

namespace {

// Number of inversions in v, counted by merge sort. v is sorted in place.
std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& scratch,
                               std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t inv = count_inversions(v, scratch, lo, mid) +
                        count_inversions(v, scratch, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += mid - i;
            scratch[k++] = v[j++];
        } else {
            scratch[k++] = v[i++];
        }
    }
    while (i < mid) scratch[k++] = v[i++];
    while (j < hi) scratch[k++] = v[j++];
    std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo),
              scratch.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

// Sum over tie groups of k*(k-1)/2 for consecutive equal keys in a sorted range.
std::uint64_t tied_pairs_sorted(const std::vector<double>& sorted) {
    std::uint64_t total = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i + 1;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        std::uint64_t run = j - i;
        total += run * (run - 1) / 2;
        i = j;
    }
    return total;
}

}  // namespace

double kendall_tau(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: size mismatch");
    std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("kendall_tau: need at least two observations");

    // Knight's algorithm: sort by a (breaking ties by b), then count exchanges
    // needed to sort b, which equals the number of discordant pairs among
    // pairs untied in a.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (a[x] != a[y]) return a[x] < a[y];
        return b[x] < b[y];
    });

    std::vector<double> a_sorted(n), b_by_a(n);
    for (std::size_t i = 0; i < n; ++i) {
        a_sorted[i] = a[order[i]];
        b_by_a[i] = b[order[i]];
    }

    std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    std::uint64_t ties_a = tied_pairs_sorted(a_sorted);

    // Pairs tied in both a and b.
    std::uint64_t ties_ab = 0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i + 1;
            while (j < n && a_sorted[j] == a_sorted[i] && b_by_a[j] == b_by_a[i]) ++j;
            std::uint64_t run = j - i;
            ties_ab += run * (run - 1) / 2;
            i = j;
        }
    }

    std::vector<double> b_sorted(b.begin(), b.end());
    std::sort(b_sorted.begin(), b_sorted.end());
    std::uint64_t ties_b = tied_pairs_sorted(b_sorted);

    if (ties_a == n0) throw degenerate_input_error("kendall_tau: first input is constant");
    if (ties_b == n0) throw degenerate_input_error("kendall_tau: second input is constant");

    std::vector<double> scratch(n);
    std::uint64_t discordant = count_inversions(b_by_a, scratch, 0, n);

    // Pairs untied in a: n0 - ties_a. Among those, pairs tied in b are
    // neither concordant nor discordant.
    std::uint64_t ties_b_only = ties_b - ties_ab;
    std::uint64_t concordant = n0 - ties_a - ties_b_only - discordant;

    double num = static_cast<double>(concordant) - static_cast<double>(discordant);
    double den = std::sqrt(static_cast<double>(n0 - ties_a)) *
                 std::sqrt(static_cast<double>(n0 - ties_b));
    return num / den;
}

MomentStats moments(std::span<const double> samples) {
    if (samples.empty()) throw std::invalid_argument("moments: empty input");
    MomentStats st;
    st.count = samples.size();
    double n = static_cast<double>(samples.size());
    double sum = 0.0;
    for (double v : samples) sum += v;
    st.mean = sum / n;
    double m2 = 0.0, m3 = 0.0;
    for (double v : samples) {
        double d = v - st.mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    st.stddev = std::sqrt(m2);
    st.skewness = (st.stddev > 0.0) ? m3 / (st.stddev * st.stddev * st.stddev) : 0.0;
    return st;
}

}  // namespace rmlab

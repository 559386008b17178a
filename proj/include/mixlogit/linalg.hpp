#pragma once

// Dense symmetric matrix helpers sized for parameter covariance work
// (tens of rows, not thousands): cyclic Jacobi eigendecomposition and
// inversion through it.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixlogit {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;  // row major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

struct EigenDecomposition {
    std::vector<double> values;  // ascending
    Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi rotations on a symmetric matrix. Plenty for the matrix
// sizes here; accuracy is at machine-precision level off-diagonal.
inline EigenDecomposition symmetric_eigen(const Matrix& m) {
    if (m.rows != m.cols) throw std::invalid_argument("symmetric_eigen: matrix is not square");
    const std::size_t n = m.rows;
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    auto off_norm = [&a, n] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        }
        return std::sqrt(s);
    };
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::fabs(a(i, j)));
    }
    const double tol = scale > 0.0 ? 1e-14 * scale : 1e-300;

    for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::fabs(apq) <= tol * 1e-2) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
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

    EigenDecomposition d;
    d.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.values[i] = a(i, i);
    d.vectors = std::move(v);

    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t lo = i;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (d.values[j] < d.values[lo]) lo = j;
        }
        if (lo != i) {
            std::swap(d.values[i], d.values[lo]);
            for (std::size_t k = 0; k < n; ++k) std::swap(d.vectors(k, i), d.vectors(k, lo));
        }
    }
    return d;
}

// Inverse of a symmetric positive definite matrix through its eigensystem.
// A non-positive eigenvalue means the input is singular or indefinite and
// the error message carries its value.
inline Matrix invert_spd(const Matrix& m, const char* what = "matrix") {
    const EigenDecomposition d = symmetric_eigen(m);
    const std::size_t n = m.rows;
    double vmax = 0.0;
    for (double ev : d.values) vmax = std::max(vmax, std::fabs(ev));
    const double floor = vmax * 1e-12;
    for (double ev : d.values) {
        if (ev <= floor) {
            throw std::runtime_error(std::string(what) +
                                     " is singular or indefinite: eigenvalue " +
                                     std::to_string(ev));
        }
    }
    Matrix inv(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                s += d.vectors(i, k) * d.vectors(j, k) / d.values[k];
            }
            inv(i, j) = s;
            inv(j, i) = s;
        }
    }
    return inv;
}

}  // namespace mixlogit

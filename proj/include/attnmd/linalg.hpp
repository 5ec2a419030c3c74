#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnmd {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

/// Dense column vector of doubles.
struct Vector {
    std::vector<double> data;

    Vector() = default;
    explicit Vector(std::size_t n, double fill = 0.0) : data(n, fill) {}
    Vector(std::initializer_list<double> xs) : data(xs) {}

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::initializer_list<double> xs)
        : rows(r), cols(c), data(xs) {
        require(data.size() == r * c, "Matrix: entry count does not match shape");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double dot(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double inner(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "inner: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

/// y = M x
inline Vector matvec(const Matrix& m, const Vector& x) {
    require(m.cols == x.size(), "matvec: shape mismatch");
    Vector y(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

/// y = M^T x
inline Vector matvec_t(const Matrix& m, const Vector& x) {
    require(m.rows == x.size(), "matvec_t: shape mismatch");
    Vector y(m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += m(i, j) * x[i];
    return y;
}

inline Matrix outer(const Vector& a, const Vector& b) {
    Matrix m(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
    return m;
}

inline Vector operator+(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "vector add: length mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

inline Vector operator-(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "vector sub: length mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

inline Vector operator*(double c, const Vector& a) {
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
    return r;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "matrix add: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "matrix sub: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] - b.data[i];
    return c;
}

inline Matrix operator*(double c, const Matrix& a) {
    Matrix r = a;
    for (double& x : r.data) x *= c;
    return r;
}

inline double euclidean_norm(const Vector& v) { return std::sqrt(dot(v, v)); }

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
}

namespace detail {
inline double lp_norm_impl(const std::vector<double>& xs, double p) {
    require(p > 1.0, "lp norm: requires p > 1");
    double s = 0.0;
    for (double x : xs) s += std::pow(std::fabs(x), p);
    return std::pow(s, 1.0 / p);
}
}  // namespace detail

/// Entrywise p,p-norm of a matrix: (sum |m_ij|^p)^(1/p).
inline double pq_norm(const Matrix& m, double p) { return detail::lp_norm_impl(m.data, p); }

/// p-norm of a vector.
inline double lp_norm(const Vector& v, double p) { return detail::lp_norm_impl(v.data, p); }

}  // namespace attnmd

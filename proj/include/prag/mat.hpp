#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace prag {

// Dense row-major double matrix. The whole training core runs in 64-bit.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(size_t r, size_t c) { return a[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return a[r * cols + c]; }

    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    bool finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Mat row(const std::vector<double>& v) {
        Mat m(1, v.size());
        m.a = v;
        return m;
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    assert(x.cols == y.rows);
    Mat out(x.rows, y.cols);
    for (size_t i = 0; i < x.rows; ++i)
        for (size_t k = 0; k < x.cols; ++k) {
            double v = x(i, k);
            if (v == 0.0) continue;
            const double* yr = &y.a[k * y.cols];
            double* orow = &out.a[i * out.cols];
            for (size_t j = 0; j < y.cols; ++j) orow[j] += v * yr[j];
        }
    return out;
}

// x * y^T
inline Mat matmul_nt(const Mat& x, const Mat& y) {
    assert(x.cols == y.cols);
    Mat out(x.rows, y.rows);
    for (size_t i = 0; i < x.rows; ++i)
        for (size_t j = 0; j < y.rows; ++j) {
            double s = 0.0;
            const double* xr = &x.a[i * x.cols];
            const double* yr = &y.a[j * y.cols];
            for (size_t k = 0; k < x.cols; ++k) s += xr[k] * yr[k];
            out(i, j) = s;
        }
    return out;
}

// x^T * y
inline Mat matmul_tn(const Mat& x, const Mat& y) {
    assert(x.rows == y.rows);
    Mat out(x.cols, y.cols);
    for (size_t k = 0; k < x.rows; ++k) {
        const double* xr = &x.a[k * x.cols];
        const double* yr = &y.a[k * y.cols];
        for (size_t i = 0; i < x.cols; ++i) {
            double v = xr[i];
            if (v == 0.0) continue;
            double* orow = &out.a[i * out.cols];
            for (size_t j = 0; j < y.cols; ++j) orow[j] += v * yr[j];
        }
    }
    return out;
}

inline void add_inplace(Mat& x, const Mat& y, double scale = 1.0) {
    assert(x.same_shape(y));
    for (size_t i = 0; i < x.a.size(); ++i) x.a[i] += scale * y.a[i];
}

}  // namespace prag

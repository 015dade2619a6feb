#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace escape {

// Row-major dense matrix of doubles. Sized for the workloads here
// (activations up to a few thousand rows, feature dims in the hundreds).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

namespace detail {

// y[b,:] += x[b,i] * w[i,:] over an index range of b. The inner loop writes
// independent lanes, so the compiler vectorizes it without reassociation and
// results stay bit-deterministic.
inline void gemm_rows(const double* x, const double* w, double* y,
                      std::size_t b_begin, std::size_t b_end,
                      std::size_t in_dim, std::size_t out_dim) {
    constexpr std::size_t kTile = 64; // keep a w-panel hot in L1/L2
    for (std::size_t i0 = 0; i0 < in_dim; i0 += kTile) {
        const std::size_t i1 = std::min(i0 + kTile, in_dim);
        for (std::size_t b = b_begin; b < b_end; ++b) {
            const double* xb = x + b * in_dim;
            double* yb = y + b * out_dim;
            for (std::size_t i = i0; i < i1; ++i) {
                const double xv = xb[i];
                if (xv == 0.0) continue;
                const double* wi = w + i * out_dim;
                for (std::size_t o = 0; o < out_dim; ++o) yb[o] += xv * wi[o];
            }
        }
    }
}

inline void parallel_rows(std::size_t rows, std::size_t threads,
                          const std::function<void(std::size_t, std::size_t)>& fn) {
    if (threads <= 1 || rows < 2 * threads) {
        fn(0, rows);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (rows + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(lo + chunk, rows);
        if (lo >= hi) break;
        pool.emplace_back(fn, lo, hi);
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

// Global knob for how many threads the batch GEMMs may use. Per-row work is
// partitioned disjointly, so thread count never changes results.
inline std::size_t& gemm_threads() {
    static std::size_t n = 1;
    return n;
}

// y = x * w, with x: B x in, w: in x out (row-major, row = input index).
inline void matmul(const Matrix& x, const Matrix& w, Matrix& y) {
    y.rows = x.rows;
    y.cols = w.cols;
    y.data.assign(x.rows * w.cols, 0.0);
    detail::parallel_rows(x.rows, gemm_threads(), [&](std::size_t lo, std::size_t hi) {
        detail::gemm_rows(x.data.data(), w.data.data(), y.data.data(), lo, hi, x.cols, w.cols);
    });
}

// y = d * w^T, with d: B x out, w: in x out. Large batches transpose w once
// and reuse the broadcast kernel; small batches use plain dot products with
// split accumulators to hide FMA latency. Both orders are fixed, so results
// are deterministic (the two paths differ only in summation grouping, which
// is itself a deterministic function of the batch size).
inline void matmul_transposed(const Matrix& d, const Matrix& w, Matrix& y) {
    const std::size_t in_dim = w.rows;
    const std::size_t out_dim = w.cols;
    y.rows = d.rows;
    y.cols = in_dim;
    y.data.assign(d.rows * in_dim, 0.0);
    if (d.rows >= 32) {
        Matrix wt(out_dim, in_dim);
        for (std::size_t i = 0; i < in_dim; ++i) {
            const double* wi = w.row(i);
            for (std::size_t o = 0; o < out_dim; ++o) wt.at(o, i) = wi[o];
        }
        detail::parallel_rows(d.rows, gemm_threads(), [&](std::size_t lo, std::size_t hi) {
            detail::gemm_rows(d.data.data(), wt.data.data(), y.data.data(), lo, hi, out_dim,
                              in_dim);
        });
        return;
    }
    detail::parallel_rows(d.rows, gemm_threads(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
            const double* db = d.row(b);
            double* yb = y.row(b);
            for (std::size_t i = 0; i < in_dim; ++i) {
                const double* wi = w.row(i);
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                std::size_t o = 0;
                for (; o + 4 <= out_dim; o += 4) {
                    s0 += db[o] * wi[o];
                    s1 += db[o + 1] * wi[o + 1];
                    s2 += db[o + 2] * wi[o + 2];
                    s3 += db[o + 3] * wi[o + 3];
                }
                for (; o < out_dim; ++o) s0 += db[o] * wi[o];
                yb[i] = (s0 + s1) + (s2 + s3);
            }
        }
    });
}

// dw += x^T * d, with x: B x in, d: B x out. Accumulated serially over b so
// the result does not depend on the thread count; parallelism is over the
// in-dim rows of dw instead.
inline void accumulate_outer(const Matrix& x, const Matrix& d, Matrix& dw) {
    const std::size_t in_dim = x.cols;
    const std::size_t out_dim = d.cols;
    detail::parallel_rows(in_dim, gemm_threads(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = 0; b < x.rows; ++b) {
            const double* xb = x.row(b);
            const double* db = d.row(b);
            for (std::size_t i = lo; i < hi; ++i) {
                const double xv = xb[i];
                if (xv == 0.0) continue;
                double* dwi = dw.row(i);
                for (std::size_t o = 0; o < out_dim; ++o) dwi[o] += xv * db[o];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Small fixed-size pieces used by the pose geometry.

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }

    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }

    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

struct Mat3 {
    // m[r][c]
    std::array<std::array<double, 3>, 3> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }

    Vec3 apply(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }

    double det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }
};

// Rotation about a unit axis (Rodrigues).
inline Mat3 axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = axis.normalized();
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    Mat3 r;
    r.m[0] = {t * u.x * u.x + c, t * u.x * u.y - s * u.z, t * u.x * u.z + s * u.y};
    r.m[1] = {t * u.x * u.y + s * u.z, t * u.y * u.y + c, t * u.y * u.z - s * u.x};
    r.m[2] = {t * u.x * u.z - s * u.y, t * u.y * u.z + s * u.x, t * u.z * u.z + c};
    return r;
}

struct Svd3 {
    Mat3 u;
    Vec3 sigma; // descending, non-negative
    Mat3 v;
};

// One-sided Jacobi SVD of a 3x3 matrix: rotates column pairs of A until they
// are mutually orthogonal, accumulating the rotations into V. Singular
// values are the column norms afterwards; zero columns of U are completed by
// cross products so U is always a full orthogonal basis.
inline Svd3 svd3(const Mat3& a) {
    std::array<std::array<double, 3>, 3> w{}; // working copy, column view w[c] = column c
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) w[c][r] = a.m[r][c];
    Mat3 v = Mat3::identity();

    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int r = 0; r < 3; ++r) {
                    alpha += w[p][r] * w[p][r];
                    beta += w[q][r] * w[q][r];
                    gamma += w[p][r] * w[q][r];
                }
                off += gamma * gamma;
                if (std::abs(gamma) < 1e-300) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int r = 0; r < 3; ++r) {
                    const double wp = w[p][r];
                    w[p][r] = c * wp - s * w[q][r];
                    w[q][r] = s * wp + c * w[q][r];
                }
                for (int r = 0; r < 3; ++r) {
                    const double vp = v.m[r][p];
                    v.m[r][p] = c * vp - s * v.m[r][q];
                    v.m[r][q] = s * vp + c * v.m[r][q];
                }
            }
        }
        if (off < 1e-30) break;
    }

    std::array<double, 3> sig{};
    for (int c = 0; c < 3; ++c)
        sig[c] = std::sqrt(w[c][0] * w[c][0] + w[c][1] * w[c][1] + w[c][2] * w[c][2]);

    // Sort descending, permuting U columns (in w) and V columns together.
    std::array<int, 3> order = {0, 1, 2};
    for (int i = 0; i < 2; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (sig[order[j]] > sig[order[i]]) std::swap(order[i], order[j]);

    Svd3 out;
    Mat3 vperm;
    std::array<double, 3> ssv{sig[order[0]], sig[order[1]], sig[order[2]]};
    out.sigma = Vec3{ssv[0], ssv[1], ssv[2]};
    std::array<Vec3, 3> ucols;
    std::array<bool, 3> valid{};
    for (int k = 0; k < 3; ++k) {
        const int c = order[k];
        for (int r = 0; r < 3; ++r) vperm.m[r][k] = v.m[r][c];
        valid[k] = ssv[k] > 0.0 && ssv[k] > 1e-12 * ssv[0];
        if (valid[k]) ucols[k] = Vec3{w[c][0], w[c][1], w[c][2]} * (1.0 / ssv[k]);
    }
    // Complete degenerate columns into an orthonormal basis.
    for (int k = 0; k < 3; ++k) {
        if (valid[k]) continue;
        const int a1 = (k + 1) % 3, a2 = (k + 2) % 3;
        Vec3 cand;
        if (valid[a1] && valid[a2]) cand = ucols[a1].cross(ucols[a2]);
        if (cand.norm() < 0.5) {
            for (const Vec3 e : {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}) {
                Vec3 t = e;
                for (int j = 0; j < 3; ++j)
                    if (valid[j]) t = t - ucols[j] * ucols[j].dot(t);
                if (t.norm() > 1e-6) {
                    cand = t;
                    break;
                }
            }
        }
        ucols[k] = cand.normalized();
        valid[k] = true;
    }
    Mat3 u;
    u.m[0] = {ucols[0].x, ucols[1].x, ucols[2].x};
    u.m[1] = {ucols[0].y, ucols[1].y, ucols[2].y};
    u.m[2] = {ucols[0].z, ucols[1].z, ucols[2].z};
    out.u = u;
    out.v = vperm;
    return out;
}

} // namespace escape

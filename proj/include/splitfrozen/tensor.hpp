#pragma once

// Dense row-major 64-bit tensor with a fixed summation order. All reductions
// accumulate over the contracted index in ascending order, which is what lets
// the training-path tests assert bit-equality between independent
// implementations of the same math.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/rng.hpp"

namespace splitfrozen {

class Tensor2D {
public:
    Tensor2D() = default;
    Tensor2D(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Tensor2D: data length " +
                                        std::to_string(data_.size()) + " != " +
                                        std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Tensor2D& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool bit_equal(const Tensor2D& other) const {
        if (!same_shape(other)) return false;
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (std::bit_cast<std::uint64_t>(data_[i]) !=
                std::bit_cast<std::uint64_t>(other.data_[i]))
                return false;
        return true;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor2D row(std::size_t r) const {
        Tensor2D out(1, cols_);
        for (std::size_t c = 0; c < cols_; ++c) out.at(0, c) = at(r, c);
        return out;
    }

    void set_row(std::size_t r, const Tensor2D& src, std::size_t src_row) {
        for (std::size_t c = 0; c < cols_; ++c) at(r, c) = src.at(src_row, c);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}
}  // namespace detail

// C = A * B, contraction over k ascending.
inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    detail::require(a.cols() == b.rows(), "matmul: inner dims " +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
    Tensor2D c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k)
                acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

// C = A * B^T. Linear layers store weights as (out x in) and apply x * W^T.
inline Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
    detail::require(a.cols() == b.cols(), "matmul_nt: inner dims " +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    Tensor2D c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k)
                acc += a.at(i, k) * b.at(j, k);
            c.at(i, j) = acc;
        }
    return c;
}

// C = A^T * B, contraction over the shared row index ascending. Weight
// gradients: dW = delta^T * x.
inline Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
    detail::require(a.rows() == b.rows(), "matmul_tn: row dims " +
                    std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
    Tensor2D c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k)
                acc += a.at(k, i) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

inline Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
    detail::require(a.same_shape(b), "add: shape mismatch");
    Tensor2D c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    return c;
}

inline void add_inplace(Tensor2D& a, const Tensor2D& b) {
    detail::require(a.same_shape(b), "add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

inline void scale_inplace(Tensor2D& a, double s) {
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= s;
}

inline Tensor2D scaled(const Tensor2D& a, double s) {
    Tensor2D c = a;
    scale_inplace(c, s);
    return c;
}

inline double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
    detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline Tensor2D gaussian_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor2D t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.next_gaussian();
    return t;
}

// FNV-1a over the raw little-endian doubles; used to freeze golden outputs.
inline std::uint64_t fnv1a_hash(const Tensor2D& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(t.data()[i]);
        for (int byte = 0; byte < 8; ++byte) {
            h ^= (bits >> (8 * byte)) & 0xFFu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace splitfrozen

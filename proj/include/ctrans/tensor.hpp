#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "ctrans/common.hpp"

namespace ctrans {

// Dense row-major array. Rank is dynamic but in practice everything is 1-D,
// 2-D, or the 3-D convolution kernels [width x d_in x d_out].
template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), T(0));
    }

    Tensor(std::vector<long> shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (static_cast<long>(data_.size()) != count(shape_)) {
            throw DimensionError("tensor: element count does not match shape");
        }
    }

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<long> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    // 2-D convenience constructor from nested initializer lists.
    static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        long r = static_cast<long>(rows.size());
        long c = r > 0 ? static_cast<long>(rows.begin()->size()) : 0;
        Tensor t({r, c});
        long i = 0;
        for (const auto& row : rows) {
            if (static_cast<long>(row.size()) != c) throw DimensionError("from_rows: ragged rows");
            for (T v : row) t.data_[static_cast<size_t>(i++)] = v;
        }
        return t;
    }

    const std::vector<long>& shape() const { return shape_; }
    long rank() const { return static_cast<long>(shape_.size()); }
    long dim(long i) const { return shape_[static_cast<size_t>(i)]; }
    long size() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    long rows() const { return rank() >= 1 ? dim(0) : 0; }
    long cols() const {
        if (rank() == 1) return dim(0);
        if (rank() == 2) return dim(1);
        throw DimensionError("cols() on tensor of rank " + std::to_string(rank()));
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    T operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    T& at(long r, long c) { return data_[static_cast<size_t>(r * cols_2d() + c)]; }
    T at(long r, long c) const { return data_[static_cast<size_t>(r * cols_2d() + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<long> shape) const {
        if (count(shape) != size()) throw DimensionError("reshape: element count mismatch");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static long count(const std::vector<long>& shape) {
        long n = 1;
        for (long d : shape) {
            if (d < 0) throw DimensionError("negative dimension");
            n *= d;
        }
        return n;
    }

  private:
    long cols_2d() const {
        if (rank() != 2) throw DimensionError("2-D access on tensor of rank " + std::to_string(rank()));
        return dim(1);
    }

    std::vector<long> shape_;
    std::vector<T> data_;
};

namespace detail {

template <class T>
using EigenRowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const EigenRowMajor<T>> emap(const Tensor<T>& t, long r, long c) {
    return Eigen::Map<const EigenRowMajor<T>>(t.data(), r, c);
}

template <class T>
Eigen::Map<EigenRowMajor<T>> emap(Tensor<T>& t, long r, long c) {
    return Eigen::Map<EigenRowMajor<T>>(t.data(), r, c);
}

}  // namespace detail

// C = A(m x k) * B(k x n). The dense products are the hot path of the whole
// model, so they go through Eigen maps over the row-major buffers.
template <class T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate = false) {
    long m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (accumulate) {
        detail::emap(out, m, n).noalias() += detail::emap(a, m, k) * detail::emap(b, k, n);
    } else {
        detail::emap(out, m, n).noalias() = detail::emap(a, m, k) * detail::emap(b, k, n);
    }
}

// C = A(m x k) * B(n x k)^T
template <class T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate = false) {
    long m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (accumulate) {
        detail::emap(out, m, n).noalias() += detail::emap(a, m, k) * detail::emap(b, n, k).transpose();
    } else {
        detail::emap(out, m, n).noalias() = detail::emap(a, m, k) * detail::emap(b, n, k).transpose();
    }
}

// C = A(k x m)^T * B(k x n)
template <class T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate = false) {
    long k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (accumulate) {
        detail::emap(out, m, n).noalias() += detail::emap(a, k, m).transpose() * detail::emap(b, k, n);
    } else {
        detail::emap(out, m, n).noalias() = detail::emap(a, k, m).transpose() * detail::emap(b, k, n);
    }
}

template <class T>
void axpy(Tensor<T>& y, const Tensor<T>& x, T alpha = T(1)) {
    if (!y.same_shape(x)) throw DimensionError("axpy: shape mismatch " + y.shape_str() + " vs " + x.shape_str());
    const T* xs = x.data();
    T* ys = y.data();
    for (long i = 0; i < y.size(); ++i) ys[i] += alpha * xs[i];
}

// Plain-value softmax along an axis of a 1-D or 2-D tensor; the differentiable
// graph op wraps this. Shift-invariant: the row max is subtracted before exp.
template <class T>
Tensor<T> softmax_values(const Tensor<T>& x, int axis) {
    if (x.rank() == 1) {
        Tensor<T> row = x.reshaped({1, x.dim(0)});
        return softmax_values(row, 1).reshaped({x.dim(0)});
    }
    if (x.rank() != 2) throw DimensionError("softmax: rank must be 1 or 2");
    if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
    long n = x.dim(0), m = x.dim(1);
    Tensor<T> y({n, m});
    if (axis == 1) {
        for (long r = 0; r < n; ++r) {
            T mx = x.at(r, 0);
            for (long c = 1; c < m; ++c) mx = std::max(mx, x.at(r, c));
            T sum = T(0);
            for (long c = 0; c < m; ++c) {
                T e = std::exp(x.at(r, c) - mx);
                y.at(r, c) = e;
                sum += e;
            }
            for (long c = 0; c < m; ++c) y.at(r, c) /= sum;
        }
    } else {
        for (long c = 0; c < m; ++c) {
            T mx = x.at(0, c);
            for (long r = 1; r < n; ++r) mx = std::max(mx, x.at(r, c));
            T sum = T(0);
            for (long r = 0; r < n; ++r) {
                T e = std::exp(x.at(r, c) - mx);
                y.at(r, c) = e;
                sum += e;
            }
            for (long r = 0; r < n; ++r) y.at(r, c) /= sum;
        }
    }
    return y;
}

}  // namespace ctrans

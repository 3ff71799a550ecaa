#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace ccdf {

/// Dense row-major tensor of doubles, rank 0..6.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::initializer_list<std::size_t> dims) {
        reshape(std::vector<std::size_t>(dims));
    }

    explicit Tensor(const std::vector<std::size_t>& dims) { reshape(dims); }

    void reshape(const std::vector<std::size_t>& dims) {
        assert(dims.size() <= 6);
        rank_ = static_cast<int>(dims.size());
        std::size_t n = 1;
        for (int i = rank_ - 1; i >= 0; --i) {
            dims_[i] = dims[i];
            strides_[i] = n;
            n *= dims[i];
        }
        data_.assign(n, 0.0);
    }

    int rank() const noexcept { return rank_; }
    std::size_t dim(int i) const noexcept { return dims_[i]; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t stride(int i) const noexcept { return strides_[i]; }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    template <typename... Ix>
    double& operator()(Ix... ix) noexcept {
        return data_[offset(ix...)];
    }
    template <typename... Ix>
    double operator()(Ix... ix) const noexcept {
        return data_[offset(ix...)];
    }

    double at_index(const std::size_t* idx) const noexcept {
        std::size_t off = 0;
        for (int i = 0; i < rank_; ++i) off += idx[i] * strides_[i];
        return data_[off];
    }
    double& at_index(const std::size_t* idx) noexcept {
        std::size_t off = 0;
        for (int i = 0; i < rank_; ++i) off += idx[i] * strides_[i];
        return data_[off];
    }

    void set_zero() { data_.assign(data_.size(), 0.0); }

    Tensor& operator+=(const Tensor& o) {
        assert(o.size() == size());
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        assert(o.size() == size());
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (auto& x : data_) x *= s;
        return *this;
    }

    void axpy(double a, const Tensor& o) {
        assert(o.size() == size());
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, x < 0 ? -x : x);
        return m;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double x : data_) s += x * x;
        return std::sqrt(s);
    }

  private:
    template <typename... Ix>
    std::size_t offset(Ix... ix) const noexcept {
        static_assert(sizeof...(Ix) <= 6);
        assert(static_cast<int>(sizeof...(Ix)) == rank_);
        std::size_t off = 0;
        int k = 0;
        ((off += static_cast<std::size_t>(ix) * strides_[k++]), ...);
        return off;
    }

    std::vector<double> data_;
    std::array<std::size_t, 6> dims_{};
    std::array<std::size_t, 6> strides_{};
    int rank_ = 0;
};

}  // namespace ccdf

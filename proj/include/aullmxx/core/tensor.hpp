#ifndef AULLMXX_CORE_TENSOR_HPP
#define AULLMXX_CORE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "aullmxx/core/error.hpp"
#include "aullmxx/core/rng.hpp"

namespace aullmxx {

// Dense row-major n-d array. All pipeline math runs on these via the autograd
// ops; the class itself stays dumb on purpose.
template <typename Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), Real(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw ShapeError("tensor data size does not match shape");
        }
    }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<std::size_t> shape, Real v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, Real stddev = Real(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<Real>(rng.gaussian()) * stddev;
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = Real(1);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::vector<Real>& data() { return data_; }
    const std::vector<Real>& data() const { return data_; }
    Real* ptr() { return data_.data(); }
    const Real* ptr() const { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real item() const {
        if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor");
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (Real v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << 'x';
            os << shape_[i];
        }
        os << ']';
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<Real> data_;
};

}  // namespace aullmxx

#endif  // AULLMXX_CORE_TENSOR_HPP

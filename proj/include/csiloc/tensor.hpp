#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csiloc/errors.hpp"

namespace csiloc {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major n-dimensional array. The single numeric carrier for
// features, positions, activations, parameters and gradients. T is float
// for training and double for gradient checks.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = value;
        return t;
    }

    bool empty() const { return data_.empty(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx) { return data_[offset_of(idx...)]; }
    template <typename... Idx>
    const T& at(Idx... idx) const { return data_[offset_of(idx...)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Metadata-only reshape; row-major layout makes this a relabeling.
    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (checked_size(new_shape) != data_.size()) {
            throw DimensionError("cannot reshape tensor of " + std::to_string(data_.size()) +
                                 " elements to " + shape_string(new_shape));
        }
        return Tensor(std::move(new_shape), data_);
    }

    void fill(T value) {
        for (auto& x : data_) x = value;
    }

    bool all_finite() const {
        for (const T& x : data_) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be >= 1, got shape " + shape_string(shape));
            n *= e;
        }
        return shape.empty() ? 0 : n;
    }

    // Leading indices may be omitted; the result is then the offset of the
    // first element of that subtensor (a row pointer).
    template <typename... Idx>
    std::size_t offset_of(Idx... idx) const {
        const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t d = 0; d < sizeof...(Idx); ++d) off = off * shape_[d] + ix[d];
        for (std::size_t d = sizeof...(Idx); d < shape_.size(); ++d) off *= shape_[d];
        return off;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

} // namespace csiloc

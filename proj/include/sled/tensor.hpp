#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sled/rng.hpp"

namespace sled {

/// Dense n-dimensional array of 64-bit floats, row-major.
/// Shapes are immutable after construction; data is mutable.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);

    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }

    /// Row/column count for rank-2 tensors (rank-1 counts as a single row).
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Throws NumericError naming `what` if any element is NaN/Inf.
    void require_finite(const std::string& what) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

} // namespace sled

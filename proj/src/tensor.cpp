#include "sled/tensor.hpp"

#include <cmath>
#include <utility>

#include "sled/error.hpp"

namespace sled {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (shape_product(t.shape_) != data.size())
        throw ShapeError("data length does not match shape");
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = stddev * rng.normal();
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    if (shape_.size() == 1) return 1;
    throw ShapeError("rows() requires rank 1 or 2, got " + shape_str());
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    throw ShapeError("cols() requires rank 1 or 2, got " + shape_str());
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError("non-finite values in " + what);
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

} // namespace sled

#include "spcnn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "spcnn/errors.hpp"

namespace spcnn {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_dims(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimension of size 0 in shape " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (data_.size() != shape_size(shape_)) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }
}

Tensor Tensor::from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values) {
    return Tensor(Shape(shape), std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
    return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw DimensionError(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                             shape_string(t.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_string(t.shape()));
    }
}

}  // namespace spcnn

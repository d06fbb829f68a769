#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "padapt/error.hpp"

namespace padapt {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. All numeric state in the project
// (images, prompts, weights, gradients) lives in these.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Indexing helper for [n, c, h, w] image tensors.
    std::int64_t index4(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }
    double& at4(int n, int c, int h, int w) { return data_[static_cast<std::size_t>(index4(n, c, h, w))]; }
    double at4(int n, int c, int h, int w) const { return data_[static_cast<std::size_t>(index4(n, c, h, w))]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double checksum_value() const;  // order-sensitive digest used by integrity tests

    void fill(double value);

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

  private:
    Shape shape_;
    std::vector<double> data_;
};

// Elementwise helpers shared by optimizer / EMA / homeostasis code paths.
// All of them check shape congruence and throw ShapeError on mismatch.
void add_scaled_inplace(Tensor& dst, const Tensor& src, double scale);  // dst += scale * src
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

}  // namespace padapt

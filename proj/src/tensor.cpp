#include "padapt/tensor.hpp"

#include <cmath>
#include <utility>

namespace padapt {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (const int extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (const int extent : shape_) {
        check<ShapeError>(extent > 0, "tensor extents must be positive, got ", shape_str(shape_));
    }
    data_.assign(static_cast<std::size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check<ShapeError>(static_cast<std::int64_t>(data_.size()) == numel(shape_),
                      "tensor data length ", data_.size(), " does not match shape ", shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

bool Tensor::all_finite() const {
    for (const double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double Tensor::checksum_value() const {
    // Order-sensitive mix; only used to detect accidental mutation.
    double acc = 0.0;
    double weight = 1.0;
    for (const double v : data_) {
        acc += v * weight;
        weight = (weight >= 1e12) ? 1.0 : weight * 1.0000001;
    }
    return acc;
}

void Tensor::fill(double value) {
    for (double& v : data_) {
        v = value;
    }
}

void add_scaled_inplace(Tensor& dst, const Tensor& src, double scale) {
    check<ShapeError>(dst.same_shape(src), "add_scaled: shape ", shape_str(dst.shape()),
                      " vs ", shape_str(src.shape()));
    double* d = dst.data();
    const double* s = src.data();
    const std::int64_t n = dst.size();
    for (std::int64_t i = 0; i < n; ++i) {
        d[i] += scale * s[i];
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check<ShapeError>(a.same_shape(b), "add: shape ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    Tensor out = a;
    add_scaled_inplace(out, b, 1.0);
    return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    check<ShapeError>(a.same_shape(b), "subtract: shape ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    Tensor out = a;
    add_scaled_inplace(out, b, -1.0);
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out = a;
    for (double& v : out.values()) {
        v *= factor;
    }
    return out;
}

}  // namespace padapt

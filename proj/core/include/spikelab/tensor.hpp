#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace spikelab {

/// Dense row-major tensor of 64-bit reals. Shapes are lists of extents;
/// an empty shape denotes a scalar (one element).
class Tensor {
public:
    Tensor() : shape_{0}, data_() {}
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor full(std::vector<std::size_t> shape, double v) { return Tensor(std::move(shape), v); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Flat offset of a multi-index (row-major).
    std::size_t offset(const std::vector<std::size_t>& idx) const;

    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

// ---- shape-checked numeric kernels ------------------------------------

/// Cross-correlation of input [B,C,H,W] with kernel [O,C,k,k].
/// Output [B,O,H',W'] with H' = (H + 2*padding - k) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

/// Depth-wise cross-correlation: input [B,C,H,W], kernel [C,k,k], odd k,
/// same padding, stride 1. Output [B,C,H,W].
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel);

/// Batched matrix product [..,M,K] x [..,K,N] -> [..,M,N]; leading extents
/// broadcast against each other (size-1 expansion, numpy style).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Windowed max over [N,C,H,W]; padding cells never win a window.
Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride,
                  std::size_t padding = 0);

/// Windowed mean over [N,C,H,W]; padded cells count toward the divisor k*k.
Tensor avg_pool2d(const Tensor& x, std::size_t k, std::size_t stride,
                  std::size_t padding = 0);

/// Central-difference gradient of a scalar-valued function:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), element by element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps);

std::vector<std::size_t> conv2d_output_shape(const std::vector<std::size_t>& input,
                                             const std::vector<std::size_t>& kernel,
                                             std::size_t stride, std::size_t padding);

std::vector<std::size_t> pool2d_output_shape(const std::vector<std::size_t>& input,
                                             std::size_t k, std::size_t stride,
                                             std::size_t padding);

}  // namespace spikelab

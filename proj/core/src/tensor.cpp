#include "spikelab/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace spikelab {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                    " does not match element count " +
                                    std::to_string(data_.size()));
    }
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::invalid_argument("Tensor::extent: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_string());
    }
    return shape_[axis];
}

std::size_t Tensor::offset(const std::vector<std::size_t>& idx) const {
    if (idx.size() != shape_.size()) {
        throw std::invalid_argument("Tensor::offset: index rank " +
                                    std::to_string(idx.size()) +
                                    " does not match shape " + shape_string());
    }
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
        if (idx[d] >= shape_[d]) {
            throw std::invalid_argument("Tensor::offset: index " + std::to_string(idx[d]) +
                                        " out of range in axis " + std::to_string(d));
        }
        off = off * shape_[d] + idx[d];
    }
    return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::vector<std::size_t>(idx))];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(std::vector<std::size_t>(idx))];
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_string() +
                                    " as " + shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
}

std::string Tensor::shape_string() const { return shape_to_string(shape_); }

// ---- conv2d ------------------------------------------------------------

std::vector<std::size_t> conv2d_output_shape(const std::vector<std::size_t>& input,
                                             const std::vector<std::size_t>& kernel,
                                             std::size_t stride, std::size_t padding) {
    if (input.size() != 4) {
        throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " +
                                    shape_to_string(input));
    }
    if (kernel.size() != 4) {
        throw std::invalid_argument("conv2d: kernel must be [O,C,k,k], got " +
                                    shape_to_string(kernel));
    }
    if (kernel[2] != kernel[3]) {
        throw std::invalid_argument("conv2d: kernel window must be square, got " +
                                    shape_to_string(kernel));
    }
    if (input[1] != kernel[1]) {
        throw std::invalid_argument("conv2d: input channel extent " +
                                    std::to_string(input[1]) +
                                    " does not match kernel channel extent " +
                                    std::to_string(kernel[1]));
    }
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t k = kernel[2];
    if (k > input[2] + 2 * padding || k > input[3] + 2 * padding) {
        throw std::invalid_argument("conv2d: kernel extent " + std::to_string(k) +
                                    " exceeds padded spatial extent");
    }
    const std::size_t ho = (input[2] + 2 * padding - k) / stride + 1;
    const std::size_t wo = (input[3] + 2 * padding - k) / stride + 1;
    return {input[0], kernel[0], ho, wo};
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
    const auto out_shape = conv2d_output_shape(input.shape(), kernel.shape(), stride, padding);
    const std::size_t B = input.extent(0), C = input.extent(1);
    const std::size_t H = input.extent(2), W = input.extent(3);
    const std::size_t O = kernel.extent(0), k = kernel.extent(2);
    const std::size_t Ho = out_shape[2], Wo = out_shape[3];

    Tensor out(out_shape);
    const double* in = input.data();
    const double* ker = kernel.data();
    double* o = out.data();

    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oc = 0; oc < O; ++oc) {
            for (std::size_t y = 0; y < Ho; ++y) {
                for (std::size_t x = 0; x < Wo; ++x) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* in_c = in + ((b * C + c) * H) * W;
                        const double* ker_c = ker + ((oc * C + c) * k) * k;
                        for (std::size_t i = 0; i < k; ++i) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(y * stride + i) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t j = 0; j < k; ++j) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(x * stride + j) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += in_c[iy * W + ix] * ker_c[i * k + j];
                            }
                        }
                    }
                    o[((b * O + oc) * Ho + y) * Wo + x] = acc;
                }
            }
        }
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel) {
    if (input.rank() != 4) {
        throw std::invalid_argument("depthwise_conv2d: input must be [B,C,H,W], got " +
                                    input.shape_string());
    }
    if (kernel.rank() != 3 || kernel.extent(1) != kernel.extent(2)) {
        throw std::invalid_argument("depthwise_conv2d: kernel must be [C,k,k], got " +
                                    kernel.shape_string());
    }
    if (kernel.extent(0) != input.extent(1)) {
        throw std::invalid_argument("depthwise_conv2d: channel extents differ: input " +
                                    std::to_string(input.extent(1)) + ", kernel " +
                                    std::to_string(kernel.extent(0)));
    }
    const std::size_t k = kernel.extent(1);
    if (k % 2 == 0) {
        throw std::invalid_argument("depthwise_conv2d: kernel extent must be odd, got " +
                                    std::to_string(k));
    }
    const std::size_t B = input.extent(0), C = input.extent(1);
    const std::size_t H = input.extent(2), W = input.extent(3);
    const std::size_t pad = k / 2;

    Tensor out(input.shape());
    const double* in = input.data();
    const double* ker = kernel.data();
    double* o = out.data();

    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* in_c = in + ((b * C + c) * H) * W;
            const double* ker_c = ker + c * k * k;
            double* out_c = o + ((b * C + c) * H) * W;
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < k; ++i) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + i) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + j) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            acc += in_c[iy * W + ix] * ker_c[i * k + j];
                        }
                    }
                    out_c[y * W + x] = acc;
                }
            }
        }
    }
    return out;
}

// ---- matmul ------------------------------------------------------------

namespace {

// Broadcast two leading-extent lists (numpy alignment from the right).
std::vector<std::size_t> broadcast_batch(const std::vector<std::size_t>& a,
                                         const std::vector<std::size_t>& b) {
    std::vector<std::size_t> out(std::max(a.size(), b.size()), 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw std::invalid_argument("matmul: batch extents " + shape_to_string(a) +
                                        " and " + shape_to_string(b) +
                                        " are not broadcast-compatible");
        }
        out[out.size() - 1 - i] = std::max(ea, eb);
    }
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                    a.shape_string() + " and " + b.shape_string());
    }
    const std::size_t M = a.extent(a.rank() - 2);
    const std::size_t Ka = a.extent(a.rank() - 1);
    const std::size_t Kb = b.extent(b.rank() - 2);
    const std::size_t N = b.extent(b.rank() - 1);
    if (Ka != Kb) {
        throw std::invalid_argument("matmul: inner extents differ: " + a.shape_string() +
                                    " x " + b.shape_string());
    }
    std::vector<std::size_t> batch_a(a.shape().begin(), a.shape().end() - 2);
    std::vector<std::size_t> batch_b(b.shape().begin(), b.shape().end() - 2);
    const std::vector<std::size_t> batch = broadcast_batch(batch_a, batch_b);

    std::vector<std::size_t> out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(N);
    Tensor out(out_shape);

    const std::size_t nbatch = shape_numel(batch);
    const std::size_t stride_a = M * Ka;
    const std::size_t stride_b = Kb * N;
    const std::size_t stride_o = M * N;

    // Per-axis strides of each operand inside the broadcast batch space.
    const std::size_t nb = batch.size();
    std::vector<std::size_t> sa(nb, 0), sb(nb, 0);
    {
        std::size_t run = 1;
        for (std::size_t i = batch_a.size(); i-- > 0;) {
            const std::size_t axis = i + nb - batch_a.size();
            sa[axis] = (batch_a[i] == 1) ? 0 : run;
            run *= batch_a[i];
        }
        run = 1;
        for (std::size_t i = batch_b.size(); i-- > 0;) {
            const std::size_t axis = i + nb - batch_b.size();
            sb[axis] = (batch_b[i] == 1) ? 0 : run;
            run *= batch_b[i];
        }
    }

    for (std::size_t bi = 0; bi < nbatch; ++bi) {
        std::size_t off_a = 0, off_b = 0, rem = bi;
        for (std::size_t i = nb; i-- > 0;) {
            const std::size_t idx = rem % batch[i];
            rem /= batch[i];
            off_a += idx * sa[i];
            off_b += idx * sb[i];
        }
        const double* pa = a.data() + off_a * stride_a;
        const double* pb = b.data() + off_b * stride_b;
        double* po = out.data() + bi * stride_o;
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) po[m * N + n] = 0.0;
            for (std::size_t k = 0; k < Ka; ++k) {
                const double av = pa[m * Ka + k];
                if (av == 0.0) continue;
                const double* pbk = pb + k * N;
                double* pom = po + m * N;
                for (std::size_t n = 0; n < N; ++n) pom[n] += av * pbk[n];
            }
        }
    }
    return out;
}

// ---- pooling -----------------------------------------------------------

std::vector<std::size_t> pool2d_output_shape(const std::vector<std::size_t>& input,
                                             std::size_t k, std::size_t stride,
                                             std::size_t padding) {
    if (input.size() != 4) {
        throw std::invalid_argument("pool2d: input must be [N,C,H,W], got " +
                                    shape_to_string(input));
    }
    if (stride == 0) throw std::invalid_argument("pool2d: stride must be positive");
    if (k > input[2] + 2 * padding || k > input[3] + 2 * padding) {
        throw std::invalid_argument("pool2d: window " + std::to_string(k) +
                                    " exceeds padded spatial extent");
    }
    if (padding >= k) {
        throw std::invalid_argument("pool2d: padding must be smaller than the window");
    }
    return {input[0], input[1], (input[2] + 2 * padding - k) / stride + 1,
            (input[3] + 2 * padding - k) / stride + 1};
}

Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride, std::size_t padding) {
    const auto os = pool2d_output_shape(x.shape(), k, stride, padding);
    const std::size_t N = os[0], C = os[1], Ho = os[2], Wo = os[3];
    const std::size_t H = x.extent(2), W = x.extent(3);
    Tensor out(os);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* in = x.data() + ((n * C + c) * H) * W;
            double* o = out.data() + ((n * C + c) * Ho) * Wo;
            for (std::size_t y = 0; y < Ho; ++y) {
                for (std::size_t xo = 0; xo < Wo; ++xo) {
                    double best = -std::numeric_limits<double>::infinity();
                    for (std::size_t i = 0; i < k; ++i) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(xo * stride + j) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            best = std::max(best, in[iy * W + ix]);
                        }
                    }
                    o[y * Wo + xo] = best;
                }
            }
        }
    }
    return out;
}

Tensor avg_pool2d(const Tensor& x, std::size_t k, std::size_t stride, std::size_t padding) {
    const auto os = pool2d_output_shape(x.shape(), k, stride, padding);
    const std::size_t N = os[0], C = os[1], Ho = os[2], Wo = os[3];
    const std::size_t H = x.extent(2), W = x.extent(3);
    const double inv = 1.0 / static_cast<double>(k * k);
    Tensor out(os);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* in = x.data() + ((n * C + c) * H) * W;
            double* o = out.data() + ((n * C + c) * Ho) * Wo;
            for (std::size_t y = 0; y < Ho; ++y) {
                for (std::size_t xo = 0; xo < Wo; ++xo) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < k; ++i) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(xo * stride + j) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            acc += in[iy * W + ix];
                        }
                    }
                    o[y * Wo + xo] = acc * inv;
                }
            }
        }
    }
    return out;
}

// ---- finite differences -------------------------------------------------

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double fp = f(probe);
        probe[i] = saved - eps;
        const double fm = f(probe);
        probe[i] = saved;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace spikelab

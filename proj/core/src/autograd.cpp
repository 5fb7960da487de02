#include "spikelab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace spikelab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double surrogate_sigmoid(double u, double v_th, double alpha) {
    return std::atan(kPi * alpha * (u - v_th) / 2.0) / kPi + 0.5;
}

double surrogate_derivative(double u, double v_th, double alpha) {
    const double t = kPi * alpha * (u - v_th) / 2.0;
    return alpha / (2.0 * (1.0 + t * t));
}

Graph::Value Graph::make(Tensor value, std::vector<Node*> inputs, const char* op) {
    tape_.emplace_back();
    Node& n = tape_.back();
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.op = op;
    n.tape_index = tape_.size() - 1;
    for (Node* in : n.inputs) {
        if (in->requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    return &n;
}

Graph::Value Graph::leaf(Tensor value, bool requires_grad) {
    Value v = make(std::move(value), {}, "leaf");
    v->requires_grad = requires_grad;
    return v;
}

Graph::Value Graph::param(Tensor& t) {
    auto it = params_.find(&t);
    if (it != params_.end()) return it->second;
    Value v = leaf(t, true);
    params_.emplace(&t, v);
    return v;
}

Tensor Graph::grad_for(const Tensor& t) const {
    auto it = params_.find(&t);
    if (it == params_.end()) {
        throw std::invalid_argument("Graph::grad_for: tensor was not registered as a param");
    }
    Node* n = it->second;
    if (!n->grad_alloc) return Tensor::zeros(n->value.shape());
    return n->grad;
}

// ---- elementwise ---------------------------------------------------------

Graph::Value Graph::add(Value a, Value b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("add: shape mismatch " + a->value.shape_string() +
                                    " vs " + b->value.shape_string());
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    Value v = make(std::move(out), {a, b}, "add");
    Node* self = v;
    v->backprop = [self, a, b]() {
        const Tensor& g = self->grad;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    };
    return v;
}

Graph::Value Graph::sub(Value a, Value b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("sub: shape mismatch " + a->value.shape_string() +
                                    " vs " + b->value.shape_string());
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    Value v = make(std::move(out), {a, b}, "sub");
    Node* self = v;
    v->backprop = [self, a, b]() {
        const Tensor& g = self->grad;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    };
    return v;
}

Graph::Value Graph::mul(Value a, Value b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("mul: shape mismatch " + a->value.shape_string() +
                                    " vs " + b->value.shape_string());
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    Value v = make(std::move(out), {a, b}, "mul");
    Node* self = v;
    v->backprop = [self, a, b]() {
        const Tensor& g = self->grad;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a->value[i];
        }
    };
    return v;
}

Graph::Value Graph::scale(Value a, double s) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    Value v = make(std::move(out), {a}, "scale");
    Node* self = v;
    v->backprop = [self, a, s]() {
        if (!a->requires_grad) return;
        const Tensor& g = self->grad;
        Tensor& ga = a->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
    };
    return v;
}

Graph::Value Graph::add_bias(Value x, Value bias) {
    if (bias->value.rank() != 1) {
        throw std::invalid_argument("add_bias: bias must be rank 1, got " +
                                    bias->value.shape_string());
    }
    const std::size_t d = bias->value.numel();
    if (x->value.rank() < 1 || x->value.shape().back() != d) {
        throw std::invalid_argument("add_bias: trailing extent of " + x->value.shape_string() +
                                    " does not match bias extent " + std::to_string(d));
    }
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bias->value[i % d];
    Value v = make(std::move(out), {x, bias}, "add_bias");
    Node* self = v;
    v->backprop = [self, x, bias, d]() {
        const Tensor& g = self->grad;
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (bias->requires_grad) {
            Tensor& gb = bias->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i % d] += g[i];
        }
    };
    return v;
}

// ---- matmul ----------------------------------------------------------------

namespace {

struct BatchPlan {
    std::vector<std::size_t> batch;       // broadcast leading extents
    std::vector<std::size_t> stride_a;    // per-axis slice strides (0 on broadcast axes)
    std::vector<std::size_t> stride_b;
    std::size_t nbatch = 1;
};

BatchPlan plan_batches(const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                       const std::vector<std::size_t>& out_batch) {
    BatchPlan p;
    p.batch = out_batch;
    const std::size_t nb = out_batch.size();
    p.stride_a.assign(nb, 0);
    p.stride_b.assign(nb, 0);
    std::size_t run = 1;
    for (std::size_t i = sa.size(); i-- > 0;) {
        const std::size_t axis = i + nb - sa.size();
        p.stride_a[axis] = (sa[i] == 1) ? 0 : run;
        run *= sa[i];
    }
    run = 1;
    for (std::size_t i = sb.size(); i-- > 0;) {
        const std::size_t axis = i + nb - sb.size();
        p.stride_b[axis] = (sb[i] == 1) ? 0 : run;
        run *= sb[i];
    }
    p.nbatch = shape_numel(out_batch);
    return p;
}

void batch_offsets(const BatchPlan& p, std::size_t flat, std::size_t& off_a,
                   std::size_t& off_b) {
    off_a = off_b = 0;
    std::size_t rem = flat;
    for (std::size_t i = p.batch.size(); i-- > 0;) {
        const std::size_t idx = rem % p.batch[i];
        rem /= p.batch[i];
        off_a += idx * p.stride_a[i];
        off_b += idx * p.stride_b[i];
    }
}

}  // namespace

Graph::Value Graph::matmul(Value a, Value b) {
    Tensor out = spikelab::matmul(a->value, b->value);
    Value v = make(std::move(out), {a, b}, "matmul");
    Node* self = v;
    v->backprop = [self, a, b]() {
        const Tensor& A = a->value;
        const Tensor& B = b->value;
        const Tensor& G = self->grad;
        const std::size_t M = A.extent(A.rank() - 2);
        const std::size_t K = A.extent(A.rank() - 1);
        const std::size_t N = B.extent(B.rank() - 1);
        std::vector<std::size_t> batch_a(A.shape().begin(), A.shape().end() - 2);
        std::vector<std::size_t> batch_b(B.shape().begin(), B.shape().end() - 2);
        std::vector<std::size_t> out_batch(G.shape().begin(), G.shape().end() - 2);
        const BatchPlan plan = plan_batches(batch_a, batch_b, out_batch);

        Tensor* ga = a->requires_grad ? &a->ensure_grad() : nullptr;
        Tensor* gb = b->requires_grad ? &b->ensure_grad() : nullptr;
        for (std::size_t bi = 0; bi < plan.nbatch; ++bi) {
            std::size_t off_a = 0, off_b = 0;
            batch_offsets(plan, bi, off_a, off_b);
            const double* pa = A.data() + off_a * M * K;
            const double* pb = B.data() + off_b * K * N;
            const double* pg = G.data() + bi * M * N;
            if (ga) {
                double* pga = ga->data() + off_a * M * K;
                // dA += G * B^T
                for (std::size_t m = 0; m < M; ++m) {
                    for (std::size_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        const double* pgm = pg + m * N;
                        const double* pbk = pb + k * N;
                        for (std::size_t n = 0; n < N; ++n) acc += pgm[n] * pbk[n];
                        pga[m * K + k] += acc;
                    }
                }
            }
            if (gb) {
                double* pgb = gb->data() + off_b * K * N;
                // dB += A^T * G
                for (std::size_t k = 0; k < K; ++k) {
                    for (std::size_t m = 0; m < M; ++m) {
                        const double av = pa[m * K + k];
                        if (av == 0.0) continue;
                        const double* pgm = pg + m * N;
                        double* pgbk = pgb + k * N;
                        for (std::size_t n = 0; n < N; ++n) pgbk[n] += av * pgm[n];
                    }
                }
            }
        }
    };
    return v;
}

// ---- convolution -------------------------------------------------------------

Graph::Value Graph::conv2d(Value x, Value w, std::size_t stride, std::size_t padding) {
    Tensor out = spikelab::conv2d(x->value, w->value, stride, padding);
    Value v = make(std::move(out), {x, w}, "conv2d");
    Node* self = v;
    v->backprop = [self, x, w, stride, padding]() {
        const Tensor& X = x->value;
        const Tensor& W_ = w->value;
        const Tensor& G = self->grad;
        const std::size_t B = X.extent(0), C = X.extent(1), H = X.extent(2), Wd = X.extent(3);
        const std::size_t O = W_.extent(0), k = W_.extent(2);
        const std::size_t Ho = G.extent(2), Wo = G.extent(3);
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oc = 0; oc < O; ++oc) {
                const double* pg = G.data() + ((b * O + oc) * Ho) * Wo;
                for (std::size_t y = 0; y < Ho; ++y) {
                    for (std::size_t xo = 0; xo < Wo; ++xo) {
                        const double g = pg[y * Wo + xo];
                        if (g == 0.0) continue;
                        for (std::size_t c = 0; c < C; ++c) {
                            const double* xin = X.data() + ((b * C + c) * H) * Wd;
                            const double* wk = W_.data() + ((oc * C + c) * k) * k;
                            double* gxin = gx ? gx->data() + ((b * C + c) * H) * Wd : nullptr;
                            double* gwk = gw ? gw->data() + ((oc * C + c) * k) * k : nullptr;
                            for (std::size_t i = 0; i < k; ++i) {
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(y * stride + i) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t j = 0; j < k; ++j) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(xo * stride + j) -
                                        static_cast<std::ptrdiff_t>(padding);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd))
                                        continue;
                                    if (gwk) gwk[i * k + j] += g * xin[iy * Wd + ix];
                                    if (gxin) gxin[iy * Wd + ix] += g * wk[i * k + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return v;
}

Graph::Value Graph::depthwise_conv2d(Value x, Value w) {
    Tensor out = spikelab::depthwise_conv2d(x->value, w->value);
    Value v = make(std::move(out), {x, w}, "depthwise_conv2d");
    Node* self = v;
    v->backprop = [self, x, w]() {
        const Tensor& X = x->value;
        const Tensor& W_ = w->value;
        const Tensor& G = self->grad;
        const std::size_t B = X.extent(0), C = X.extent(1), H = X.extent(2), Wd = X.extent(3);
        const std::size_t k = W_.extent(1);
        const std::size_t pad = k / 2;
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const double* xin = X.data() + ((b * C + c) * H) * Wd;
                const double* wk = W_.data() + c * k * k;
                const double* pg = G.data() + ((b * C + c) * H) * Wd;
                double* gxin = gx ? gx->data() + ((b * C + c) * H) * Wd : nullptr;
                double* gwk = gw ? gw->data() + c * k * k : nullptr;
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t xo = 0; xo < Wd; ++xo) {
                        const double g = pg[y * Wd + xo];
                        if (g == 0.0) continue;
                        for (std::size_t i = 0; i < k; ++i) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + i) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t j = 0; j < k; ++j) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + j) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                                if (gwk) gwk[i * k + j] += g * xin[iy * Wd + ix];
                                if (gxin) gxin[iy * Wd + ix] += g * wk[i * k + j];
                            }
                        }
                    }
                }
            }
        }
    };
    return v;
}

// ---- batch norm -----------------------------------------------------------

namespace {

struct ChannelView {
    std::size_t channels;
    std::size_t stride;  // stride of the channel axis
    std::size_t group;   // elements per channel (numel / channels)
    std::size_t outer;   // extents left of the channel axis, flattened
    std::size_t channel_of(std::size_t flat) const { return (flat / stride) % channels; }

    // Structured per-channel iteration avoids a division per element.
    template <typename F>
    void for_each(std::size_t numel, F&& f) const {
        (void)numel;
        std::size_t flat = 0;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t s = 0; s < stride; ++s, ++flat) f(flat, c);
            }
        }
    }
};

ChannelView channel_view(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("batch_norm: channel axis " + std::to_string(axis) +
                                    " out of range for " + x.shape_string());
    }
    ChannelView cv;
    cv.channels = x.extent(axis);
    cv.stride = 1;
    for (std::size_t d = axis + 1; d < x.rank(); ++d) cv.stride *= x.extent(d);
    cv.group = x.numel() / cv.channels;
    cv.outer = 1;
    for (std::size_t d = 0; d < axis; ++d) cv.outer *= x.extent(d);
    return cv;
}

}  // namespace

Graph::Value Graph::batch_norm(Value x, Value gamma, Value beta, std::size_t channel_axis,
                               bool training, BatchNormState* state, double momentum,
                               double eps) {
    const ChannelView cv = channel_view(x->value, channel_axis);
    if (gamma->value.numel() != cv.channels || beta->value.numel() != cv.channels) {
        throw std::invalid_argument("batch_norm: affine extents do not match channel extent " +
                                    std::to_string(cv.channels));
    }
    const std::size_t C = cv.channels;
    const std::size_t m = cv.group;

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    if (training) {
        cv.for_each(x->value.numel(),
                    [&](std::size_t i, std::size_t c) { mean[c] += x->value[i]; });
        for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
        cv.for_each(x->value.numel(), [&](std::size_t i, std::size_t c) {
            const double d = x->value[i] - mean[c];
            var[c] += d * d;
        });
        for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(m);
        if (state) {
            if (state->empty()) state->init(C);
            for (std::size_t c = 0; c < C; ++c) {
                state->running_mean[c] = momentum * state->running_mean[c] +
                                         (1.0 - momentum) * mean[c];
                state->running_var[c] = momentum * state->running_var[c] +
                                        (1.0 - momentum) * var[c];
            }
        }
    } else {
        if (!state || state->empty()) {
            throw std::invalid_argument("batch_norm: inference mode needs running statistics");
        }
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state->running_mean[c];
            var[c] = state->running_var[c];
        }
    }

    for (std::size_t c = 0; c < C; ++c) {
        if (!(var[c] + eps > 0.0)) {
            throw std::invalid_argument("batch_norm: non-positive variance in channel " +
                                        std::to_string(c));
        }
    }

    auto inv_sigma = std::make_shared<std::vector<double>>(C);
    auto mu = std::make_shared<std::vector<double>>(mean);
    for (std::size_t c = 0; c < C; ++c)
        (*inv_sigma)[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor out(x->value.shape());
    cv.for_each(out.numel(), [&](std::size_t i, std::size_t c) {
        const double xh = (x->value[i] - (*mu)[c]) * (*inv_sigma)[c];
        out[i] = gamma->value[c] * xh + beta->value[c];
    });

    Value v = make(std::move(out), {x, gamma, beta}, "batch_norm");
    Node* self = v;
    v->backprop = [self, x, gamma, beta, cv, mu, inv_sigma, training]() {
        const Tensor& G = self->grad;
        const std::size_t C = cv.channels;
        const double m = static_cast<double>(cv.group);
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        cv.for_each(G.numel(), [&](std::size_t i, std::size_t c) {
            const double xh = (x->value[i] - (*mu)[c]) * (*inv_sigma)[c];
            sum_g[c] += G[i];
            sum_gx[c] += G[i] * xh;
        });
        if (gamma->requires_grad) {
            Tensor& gg = gamma->ensure_grad();
            for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (beta->requires_grad) {
            Tensor& gb = beta->ensure_grad();
            for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            if (training) {
                cv.for_each(G.numel(), [&](std::size_t i, std::size_t c) {
                    const double xh = (x->value[i] - (*mu)[c]) * (*inv_sigma)[c];
                    gx[i] += gamma->value[c] * (*inv_sigma)[c] *
                             (G[i] - sum_g[c] / m - xh * sum_gx[c] / m);
                });
            } else {
                cv.for_each(G.numel(), [&](std::size_t i, std::size_t c) {
                    gx[i] += gamma->value[c] * (*inv_sigma)[c] * G[i];
                });
            }
        }
    };
    return v;
}

// ---- pooling ---------------------------------------------------------------

Graph::Value Graph::max_pool(Value x, std::size_t k, std::size_t stride, std::size_t padding) {
    Tensor out = max_pool2d(x->value, k, stride, padding);
    Value v = make(std::move(out), {x}, "max_pool");
    Node* self = v;
    v->backprop = [self, x, k, stride, padding]() {
        if (!x->requires_grad) return;
        const Tensor& X = x->value;
        const Tensor& G = self->grad;
        const std::size_t N = X.extent(0), C = X.extent(1), H = X.extent(2), W = X.extent(3);
        const std::size_t Ho = G.extent(2), Wo = G.extent(3);
        Tensor& gx = x->ensure_grad();
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
                const double* in = X.data() + ((n * C + c) * H) * W;
                const double* pg = G.data() + ((n * C + c) * Ho) * Wo;
                double* gin = gx.data() + ((n * C + c) * H) * W;
                for (std::size_t y = 0; y < Ho; ++y) {
                    for (std::size_t xo = 0; xo < Wo; ++xo) {
                        // Ties route to the first maximal element in scan order.
                        double best = -std::numeric_limits<double>::infinity();
                        std::ptrdiff_t by = -1, bx = -1;
                        for (std::size_t i = 0; i < k; ++i) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(y * stride + i) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t j = 0; j < k; ++j) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(xo * stride + j) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                if (in[iy * W + ix] > best) {
                                    best = in[iy * W + ix];
                                    by = iy;
                                    bx = ix;
                                }
                            }
                        }
                        if (by >= 0) gin[by * W + bx] += pg[y * Wo + xo];
                    }
                }
            }
        }
    };
    return v;
}

Graph::Value Graph::avg_pool(Value x, std::size_t k, std::size_t stride, std::size_t padding) {
    Tensor out = avg_pool2d(x->value, k, stride, padding);
    Value v = make(std::move(out), {x}, "avg_pool");
    Node* self = v;
    v->backprop = [self, x, k, stride, padding]() {
        if (!x->requires_grad) return;
        const Tensor& X = x->value;
        const Tensor& G = self->grad;
        const std::size_t N = X.extent(0), C = X.extent(1), H = X.extent(2), W = X.extent(3);
        const std::size_t Ho = G.extent(2), Wo = G.extent(3);
        const double inv = 1.0 / static_cast<double>(k * k);
        Tensor& gx = x->ensure_grad();
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
                const double* pg = G.data() + ((n * C + c) * Ho) * Wo;
                double* gin = gx.data() + ((n * C + c) * H) * W;
                for (std::size_t y = 0; y < Ho; ++y) {
                    for (std::size_t xo = 0; xo < Wo; ++xo) {
                        const double g = pg[y * Wo + xo] * inv;
                        if (g == 0.0) continue;
                        for (std::size_t i = 0; i < k; ++i) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(y * stride + i) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t j = 0; j < k; ++j) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(xo * stride + j) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                gin[iy * W + ix] += g;
                            }
                        }
                    }
                }
            }
        }
    };
    return v;
}

// ---- spike -----------------------------------------------------------------

Graph::Value Graph::spike(Value u, double v_th, double alpha, SpikeMode mode) {
    Tensor out(u->value.shape());
    if (mode == SpikeMode::Hard) {
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = u->value[i] >= v_th ? 1.0 : 0.0;
    } else {
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = surrogate_sigmoid(u->value[i], v_th, alpha);
    }
    Value v = make(std::move(out), {u}, mode == SpikeMode::Hard ? "spike" : "spike_smooth");
    Node* self = v;
    v->backprop = [self, u, v_th, alpha]() {
        if (!u->requires_grad) return;
        const Tensor& g = self->grad;
        Tensor& gu = u->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i)
            gu[i] += g[i] * surrogate_derivative(u->value[i], v_th, alpha);
    };
    return v;
}

// ---- shape ops ---------------------------------------------------------------

Graph::Value Graph::reshape(Value x, std::vector<std::size_t> shape) {
    Tensor out = x->value.reshaped(shape);
    Value v = make(std::move(out), {x}, "reshape");
    Node* self = v;
    v->backprop = [self, x]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += self->grad[i];
    };
    return v;
}

Graph::Value Graph::select0(Value x, std::size_t index) {
    if (x->value.rank() < 1 || index >= x->value.extent(0)) {
        throw std::invalid_argument("select0: index " + std::to_string(index) +
                                    " out of range for " + x->value.shape_string());
    }
    std::vector<std::size_t> shape(x->value.shape().begin() + 1, x->value.shape().end());
    if (shape.empty()) shape = {1};
    const std::size_t chunk = shape_numel(shape);
    Tensor out(shape);
    for (std::size_t i = 0; i < chunk; ++i) out[i] = x->value[index * chunk + i];
    Value v = make(std::move(out), {x}, "select0");
    Node* self = v;
    v->backprop = [self, x, index, chunk]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < chunk; ++i) gx[index * chunk + i] += self->grad[i];
    };
    return v;
}

Graph::Value Graph::stack0(const std::vector<Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack0: empty input list");
    const std::size_t chunk = xs[0]->value.numel();
    for (const Value& x : xs) {
        if (!x->value.same_shape(xs[0]->value)) {
            throw std::invalid_argument("stack0: mismatched shapes " +
                                        xs[0]->value.shape_string() + " vs " +
                                        x->value.shape_string());
        }
    }
    std::vector<std::size_t> shape{xs.size()};
    shape.insert(shape.end(), xs[0]->value.shape().begin(), xs[0]->value.shape().end());
    Tensor out(shape);
    for (std::size_t t = 0; t < xs.size(); ++t)
        for (std::size_t i = 0; i < chunk; ++i) out[t * chunk + i] = xs[t]->value[i];
    std::vector<Node*> inputs(xs.begin(), xs.end());
    Value v = make(std::move(out), std::move(inputs), "stack0");
    Node* self = v;
    v->backprop = [self, chunk]() {
        for (std::size_t t = 0; t < self->inputs.size(); ++t) {
            Node* in = self->inputs[t];
            if (!in->requires_grad) continue;
            Tensor& g = in->ensure_grad();
            for (std::size_t i = 0; i < chunk; ++i) g[i] += self->grad[t * chunk + i];
        }
    };
    return v;
}

Graph::Value Graph::transpose_last2(Value x) {
    if (x->value.rank() < 2) {
        throw std::invalid_argument("transpose_last2: rank must be >= 2, got " +
                                    x->value.shape_string());
    }
    const std::size_t M = x->value.extent(x->value.rank() - 2);
    const std::size_t N = x->value.extent(x->value.rank() - 1);
    std::vector<std::size_t> shape = x->value.shape();
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    const std::size_t nbatch = x->value.numel() / (M * N);
    Tensor out(shape);
    for (std::size_t b = 0; b < nbatch; ++b) {
        const double* in = x->value.data() + b * M * N;
        double* o = out.data() + b * M * N;
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) o[n * M + m] = in[m * N + n];
    }
    Value v = make(std::move(out), {x}, "transpose_last2");
    Node* self = v;
    v->backprop = [self, x, M, N, nbatch]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t b = 0; b < nbatch; ++b) {
            const double* g = self->grad.data() + b * M * N;
            double* go = gx.data() + b * M * N;
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t n = 0; n < N; ++n) go[m * N + n] += g[n * M + m];
        }
    };
    return v;
}

Graph::Value Graph::to_tokens(Value x) {
    if (x->value.rank() != 4) {
        throw std::invalid_argument("to_tokens: input must be [B,C,H,W], got " +
                                    x->value.shape_string());
    }
    const std::size_t B = x->value.extent(0), C = x->value.extent(1);
    const std::size_t H = x->value.extent(2), W = x->value.extent(3);
    Tensor out({B, H * W, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < H * W; ++p)
                out[(b * H * W + p) * C + c] = x->value[((b * C + c) * H * W) + p];
    Value v = make(std::move(out), {x}, "to_tokens");
    Node* self = v;
    v->backprop = [self, x, B, C, H, W]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < H * W; ++p)
                    gx[((b * C + c) * H * W) + p] += self->grad[(b * H * W + p) * C + c];
    };
    return v;
}

Graph::Value Graph::from_tokens(Value x, std::size_t h, std::size_t w) {
    if (x->value.rank() != 3 || x->value.extent(1) != h * w) {
        throw std::invalid_argument("from_tokens: input must be [B," + std::to_string(h * w) +
                                    ",C], got " + x->value.shape_string());
    }
    const std::size_t B = x->value.extent(0), C = x->value.extent(2);
    Tensor out({B, C, h, w});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < h * w; ++p)
                out[((b * C + c) * h * w) + p] = x->value[(b * h * w + p) * C + c];
    Value v = make(std::move(out), {x}, "from_tokens");
    Node* self = v;
    const std::size_t hw = h * w;
    v->backprop = [self, x, B, C, hw]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < hw; ++p)
                    gx[(b * hw + p) * C + c] += self->grad[((b * C + c) * hw) + p];
    };
    return v;
}

Graph::Value Graph::global_avg_hw(Value x) {
    if (x->value.rank() != 4) {
        throw std::invalid_argument("global_avg_hw: input must be [B,C,H,W], got " +
                                    x->value.shape_string());
    }
    const std::size_t B = x->value.extent(0), C = x->value.extent(1);
    const std::size_t HW = x->value.extent(2) * x->value.extent(3);
    Tensor out({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* in = x->value.data() + (b * C + c) * HW;
            for (std::size_t p = 0; p < HW; ++p) acc += in[p];
            out[b * C + c] = acc / static_cast<double>(HW);
        }
    }
    Value v = make(std::move(out), {x}, "global_avg_hw");
    Node* self = v;
    v->backprop = [self, x, B, C, HW]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double g = self->grad[b * C + c] * inv;
                double* go = gx.data() + (b * C + c) * HW;
                for (std::size_t p = 0; p < HW; ++p) go[p] += g;
            }
    };
    return v;
}

Graph::Value Graph::mean0(Value x) {
    if (x->value.rank() < 1 || x->value.extent(0) == 0) {
        throw std::invalid_argument("mean0: leading extent must be positive");
    }
    const std::size_t T = x->value.extent(0);
    std::vector<std::size_t> shape(x->value.shape().begin() + 1, x->value.shape().end());
    if (shape.empty()) shape = {1};
    const std::size_t chunk = shape_numel(shape);
    Tensor out(shape);
    for (std::size_t i = 0; i < chunk; ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) acc += x->value[t * chunk + i];
        out[i] = acc / static_cast<double>(T);
    }
    Value v = make(std::move(out), {x}, "mean0");
    Node* self = v;
    v->backprop = [self, x, T, chunk]() {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        const double inv = 1.0 / static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < chunk; ++i) gx[t * chunk + i] += self->grad[i] * inv;
    };
    return v;
}

// ---- reductions ----------------------------------------------------------------

Graph::Value Graph::sum(Value x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
    Value v = make(Tensor::scalar(acc), {x}, "sum");
    Node* self = v;
    v->backprop = [self, x]() {
        if (!x->requires_grad) return;
        const double g = self->grad[0];
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
    return v;
}

Graph::Value Graph::cross_entropy_smoothed(Value logits, const std::vector<int>& labels,
                                           double smoothing) {
    if (logits->value.rank() != 2) {
        throw std::invalid_argument("cross_entropy_smoothed: logits must be [B,K], got " +
                                    logits->value.shape_string());
    }
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw std::invalid_argument("cross_entropy_smoothed: smoothing must lie in [0,1)");
    }
    const std::size_t B = logits->value.extent(0);
    const std::size_t K = logits->value.extent(1);
    if (labels.size() != B) {
        throw std::invalid_argument("cross_entropy_smoothed: batch extent " +
                                    std::to_string(B) + " does not match label count " +
                                    std::to_string(labels.size()));
    }
    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) {
            throw std::invalid_argument("cross_entropy_smoothed: label " +
                                        std::to_string(labels[b]) + " out of range at row " +
                                        std::to_string(b));
        }
    }

    // Stable log-softmax; softmax cached for the backward pass.
    auto softmax = std::make_shared<Tensor>(logits->value.shape());
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = logits->value.data() + b * K;
        double mx = row[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        const double logz = std::log(z) + mx;
        for (std::size_t k = 0; k < K; ++k) {
            const double target = (static_cast<std::size_t>(labels[b]) == k)
                                      ? 1.0 - smoothing + smoothing / static_cast<double>(K)
                                      : smoothing / static_cast<double>(K);
            (*softmax)[b * K + k] = std::exp(row[k] - logz);
            loss -= target * (row[k] - logz);
        }
    }
    loss /= static_cast<double>(B);

    Value v = make(Tensor::scalar(loss), {logits}, "cross_entropy_smoothed");
    Node* self = v;
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    v->backprop = [self, logits, softmax, labels_copy, smoothing, B, K]() {
        if (!logits->requires_grad) return;
        const double g = self->grad[0] / static_cast<double>(B);
        Tensor& gl = logits->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
                const double target =
                    (static_cast<std::size_t>((*labels_copy)[b]) == k)
                        ? 1.0 - smoothing + smoothing / static_cast<double>(K)
                        : smoothing / static_cast<double>(K);
                gl[b * K + k] += g * ((*softmax)[b * K + k] - target);
            }
        }
    };
    return v;
}

// ---- backward sweep ----------------------------------------------------------

void Graph::backward(Value loss) {
    if (loss->value.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    loss->value.shape_string());
    }
    // Mark the transitive inputs of the loss.
    std::vector<char> needed(tape_.size(), 0);
    std::vector<Node*> stack{loss};
    needed[loss->tape_index] = 1;
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        for (Node* in : n->inputs) {
            if (!needed[in->tape_index]) {
                needed[in->tape_index] = 1;
                stack.push_back(in);
            }
        }
    }
    // Intermediate accumulators restart each sweep; leaves keep accumulating
    // across calls (that is the exposed gradient map).
    for (std::size_t i = 0; i <= loss->tape_index; ++i) {
        Node& n = tape_[i];
        if (needed[i] && n.backprop && n.grad_alloc) n.grad.fill(0.0);
    }
    loss->ensure_grad()[0] += 1.0;
    for (std::size_t i = loss->tape_index + 1; i-- > 0;) {
        Node& n = tape_[i];
        if (!needed[i] || !n.requires_grad || !n.backprop) continue;
        n.ensure_grad();
        n.backprop();
    }
}

void Graph::zero_grad() {
    for (Node& n : tape_) {
        if (n.grad_alloc) n.grad.fill(0.0);
    }
}

}  // namespace spikelab

#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "spikelab/tensor.hpp"

namespace spikelab {

/// How a spike nonlinearity participates in differentiation.
///  Hard:   Heaviside forward (spike at u >= v_th), arctan surrogate backward.
///  Smooth: the arctan sigmoid itself forward, its true derivative backward.
///          Used for finite-difference validation of the surrogate path.
enum class SpikeMode { Hard, Smooth };

struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    void init(std::size_t channels) {
        running_mean = Tensor::zeros({channels});
        running_var = Tensor::ones({channels});
    }
    bool empty() const { return running_mean.numel() == 0; }
};

/// One operation record. Owned by the Graph; handles are raw pointers.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::size_t tape_index = 0;
    std::vector<Node*> inputs;
    std::function<void()> backprop;  // reads this->grad, accumulates into inputs
    const char* op = "leaf";

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor::zeros(value.shape());
            grad_alloc = true;
        }
        return grad;
    }
};

/// Reverse-mode tape. Nodes are appended in construction order, which is a
/// topological order by construction; backward sweeps it in reverse from the
/// loss node. Accumulation order is fixed, so repeated runs are bit-identical.
/// A Graph must stay confined to one thread between construction and backward.
class Graph {
public:
    using Value = Node*;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::size_t size() const { return tape_.size(); }

    // -- leaves ----------------------------------------------------------
    Value leaf(Tensor value, bool requires_grad = false);
    Value constant(Tensor value) { return leaf(std::move(value), false); }
    /// Registers `t` as a trainable parameter leaf. Repeated calls with the
    /// same tensor address return the same node, so gradients accumulate.
    Value param(Tensor& t);
    /// Gradient accumulated for a registered parameter (zeros if untouched).
    Tensor grad_for(const Tensor& t) const;
    bool has_param(const Tensor& t) const { return params_.count(&t) > 0; }

    // -- arithmetic --------------------------------------------------------
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double s);
    Value add_bias(Value x, Value bias);  // bias [D] broadcast over leading axes

    Value matmul(Value a, Value b);
    Value conv2d(Value x, Value w, std::size_t stride, std::size_t padding);
    Value depthwise_conv2d(Value x, Value w);

    Value batch_norm(Value x, Value gamma, Value beta, std::size_t channel_axis,
                     bool training, BatchNormState* state, double momentum = 0.9,
                     double eps = 1e-5);

    Value max_pool(Value x, std::size_t k, std::size_t stride, std::size_t padding = 0);
    Value avg_pool(Value x, std::size_t k, std::size_t stride, std::size_t padding = 0);

    /// Threshold nonlinearity at v_th with surrogate width alpha.
    Value spike(Value u, double v_th, double alpha, SpikeMode mode = SpikeMode::Hard);

    // -- shape ops ---------------------------------------------------------
    Value reshape(Value x, std::vector<std::size_t> shape);
    Value select0(Value x, std::size_t index);      // [T,...] -> [...]
    Value stack0(const std::vector<Value>& xs);     // k x [...] -> [k,...]
    Value transpose_last2(Value x);                 // [...,M,N] -> [...,N,M]
    Value to_tokens(Value x);                       // [B,C,H,W] -> [B,HW,C]
    Value from_tokens(Value x, std::size_t h, std::size_t w);  // inverse
    Value global_avg_hw(Value x);                   // [B,C,H,W] -> [B,C]
    Value mean0(Value x);                           // [T,...] -> [...]

    // -- reductions / losses -------------------------------------------------
    Value sum(Value x);  // scalar
    /// Label-smoothed cross entropy, mean over the batch. logits [B,K].
    Value cross_entropy_smoothed(Value logits, const std::vector<int>& labels,
                                 double smoothing);

    /// Reverse sweep from a scalar loss. Gradients accumulate across calls.
    void backward(Value loss);
    void zero_grad();

private:
    Value make(Tensor value, std::vector<Node*> inputs, const char* op);

    std::deque<Node> tape_;
    std::unordered_map<const Tensor*, Node*> params_;
};

/// Surrogate transfer sigma(u) = atan(pi*alpha*(u - v_th)/2)/pi + 1/2.
double surrogate_sigmoid(double u, double v_th, double alpha);
/// d sigma / du = alpha / (2*(1 + (pi*alpha*(u - v_th)/2)^2)); peaks at alpha/2.
double surrogate_derivative(double u, double v_th, double alpha);

}  // namespace spikelab

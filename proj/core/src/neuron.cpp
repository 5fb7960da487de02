#include "spikelab/neuron.hpp"

#include <stdexcept>
#include <string>

#include "spikelab/autograd.hpp"

namespace spikelab {

void NeuronParams::validate() const {
    if (kind == NeuronKind::LIF && !(beta >= 0.0 && beta < 1.0)) {
        throw std::invalid_argument("NeuronParams: beta must lie in [0,1), got " +
                                    std::to_string(beta));
    }
    if (!(v_th > 0.0)) {
        throw std::invalid_argument("NeuronParams: v_th must be positive, got " +
                                    std::to_string(v_th));
    }
    if (!(surrogate_alpha > 0.0)) {
        throw std::invalid_argument("NeuronParams: surrogate_alpha must be positive, got " +
                                    std::to_string(surrogate_alpha));
    }
}

Tensor charge(const NeuronParams& params, const Tensor& v_prev, const Tensor& i_n) {
    params.validate();
    if (!v_prev.same_shape(i_n)) {
        throw std::invalid_argument("charge: membrane shape " + v_prev.shape_string() +
                                    " does not match current shape " + i_n.shape_string());
    }
    Tensor u(v_prev.shape());
    if (params.kind == NeuronKind::LIF) {
        const double beta = params.beta;
        for (std::size_t i = 0; i < u.numel(); ++i)
            u[i] = beta * v_prev[i] + (1.0 - beta) * i_n[i];
    } else {
        for (std::size_t i = 0; i < u.numel(); ++i) u[i] = v_prev[i] + i_n[i];
    }
    return u;
}

std::pair<Tensor, Tensor> fire_reset(const NeuronParams& params, const Tensor& u_n) {
    params.validate();
    Tensor spikes(u_n.shape());
    Tensor v(u_n.shape());
    const double v_th = params.v_th;
    for (std::size_t i = 0; i < u_n.numel(); ++i) {
        if (u_n[i] >= v_th) {
            spikes[i] = 1.0;
            v[i] = u_n[i] - v_th;
        } else {
            spikes[i] = 0.0;
            v[i] = u_n[i];
        }
    }
    return {std::move(spikes), std::move(v)};
}

SequenceResult run_sequence(const NeuronParams& params, const Tensor& currents) {
    params.validate();
    if (currents.rank() < 1 || currents.extent(0) == 0) {
        throw std::invalid_argument("run_sequence: need at least one timestep, got shape " +
                                    currents.shape_string());
    }
    const std::size_t T = currents.extent(0);
    std::vector<std::size_t> step_shape(currents.shape().begin() + 1, currents.shape().end());
    if (step_shape.empty()) step_shape = {1};
    const std::size_t chunk = shape_numel(step_shape);

    SequenceResult out;
    out.spikes = Tensor(currents.shape());
    out.v_trace = Tensor(currents.shape());

    Tensor v(step_shape, 0.0);
    Tensor i_n(step_shape);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < chunk; ++i) i_n[i] = currents[t * chunk + i];
        Tensor u = charge(params, v, i_n);
        auto [s, v_next] = fire_reset(params, u);
        for (std::size_t i = 0; i < chunk; ++i) {
            out.spikes[t * chunk + i] = s[i];
            out.v_trace[t * chunk + i] = v_next[i];
        }
        v = std::move(v_next);
    }
    return out;
}

Tensor surrogate_grad(const Tensor& u, const NeuronParams& params) {
    params.validate();
    Tensor g(u.shape());
    for (std::size_t i = 0; i < u.numel(); ++i)
        g[i] = surrogate_derivative(u[i], params.v_th, params.surrogate_alpha);
    return g;
}

double firing_rate(const Tensor& spikes) {
    if (spikes.numel() == 0) {
        throw std::invalid_argument("firing_rate: empty spike tensor");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < spikes.numel(); ++i) {
        const double s = spikes[i];
        if (s != 0.0 && s != 1.0) {
            throw std::invalid_argument("firing_rate: non-binary value " + std::to_string(s) +
                                        " at element " + std::to_string(i));
        }
        acc += s;
    }
    return acc / static_cast<double>(spikes.numel());
}

}  // namespace spikelab

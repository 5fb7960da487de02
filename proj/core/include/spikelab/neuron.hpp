#pragma once

#include <utility>

#include "spikelab/tensor.hpp"

namespace spikelab {

enum class NeuronKind { LIF, IF };

/// Discrete-time spiking neuron parameters. The decay factor beta applies to
/// LIF neurons only (0 <= beta < 1); IF neurons integrate without decay.
struct NeuronParams {
    double beta = 0.25;
    double v_th = 1.0;
    NeuronKind kind = NeuronKind::LIF;
    double surrogate_alpha = 2.0;

    void validate() const;
};

/// One charging step: LIF computes beta*v_prev + (1-beta)*i_n, IF computes
/// v_prev + i_n.
Tensor charge(const NeuronParams& params, const Tensor& v_prev, const Tensor& i_n);

/// Threshold and subtract-reset. Spikes where u >= v_th (inclusive); the
/// membrane keeps u - v_th at fired positions and u elsewhere.
std::pair<Tensor, Tensor> fire_reset(const NeuronParams& params, const Tensor& u_n);

struct SequenceResult {
    Tensor spikes;   // [T,...] binary
    Tensor v_trace;  // [T,...] post-reset membrane potentials
};

/// Iterates charge -> fire_reset over currents [T,...] from V = 0.
SequenceResult run_sequence(const NeuronParams& params, const Tensor& currents);

/// Derivative of the arctan surrogate evaluated elementwise at u.
Tensor surrogate_grad(const Tensor& u, const NeuronParams& params);

/// Mean spike value over all elements and timesteps. Throws if any element
/// is not exactly 0 or 1 (a spike-domain violation upstream).
double firing_rate(const Tensor& spikes);

}  // namespace spikelab

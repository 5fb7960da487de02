#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spikelab/neuron.hpp"
#include "spikelab/tensor.hpp"

namespace spikelab {

/// First-order rational discrete-time filter (1-pole), optionally composed to
/// depth L with a scalar gain per layer. The magnitude at angular frequency
/// omega is |prod gains| * (gain / |1 - pole e^{-j omega}|)^depth.
struct TransferFunction {
    double gain = 1.0;
    double pole = 0.0;
    std::size_t depth = 1;
    std::vector<double> layer_gains{1.0};
};

/// Membrane filter of a leaky neuron with decay beta: gain 1-beta, pole beta.
TransferFunction lif_transfer(double beta);

/// Integrator filter: unit gain with the pole on the unit circle.
TransferFunction if_transfer();

/// Magnitude response at omega in [0, pi]. Throws for a pole-1 filter at
/// omega = 0, where the response is unbounded.
double magnitude_response(const TransferFunction& tf, double omega);

/// Composes `base` to depth L with one scalar gain per layer.
TransferFunction layered_transfer(const TransferFunction& base, std::size_t L,
                                  const std::vector<double>& gains);

/// Empirical firing-rate sensitivity d(fr)/d(offset): runs the neuron on
/// shared Gaussian current noise with the constant baseline at
/// input_mean +/- delta and central-differences the firing rates.
double local_gain(const NeuronParams& params, double input_mean, double input_std,
                  std::size_t n_samples, std::size_t T, double delta,
                  std::uint64_t seed = 0);

/// One-sided amplitude spectrum. A bin-aligned unit sine reads 1.0 at its bin;
/// the DC bin reads the signal mean.
struct Spectrum {
    std::vector<double> freqs;
    std::vector<double> amps;
    double sample_rate = 1.0;
};

Spectrum dft(const std::vector<double>& signal, double sample_rate);

/// Channel-averaged 2-D amplitude spectrum, DC shifted to (h/2, w/2),
/// amplitudes normalized by the pixel count.
struct Spectrum2D {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> amps;  // row-major, DC-centered

    double at(std::size_t row, std::size_t col) const { return amps[row * width + col]; }
    std::size_t dc_row() const { return height / 2; }
    std::size_t dc_col() const { return width / 2; }
};

Spectrum2D spectrum2d(const Tensor& feature);  // [C,H,W]

/// Bins with amplitude > threshold_frac * max amplitude, DC bin excluded.
std::vector<std::uint8_t> high_freq_mask(const Spectrum2D& s, double threshold_frac = 0.55);

/// Radially binned mean log amplitude minus the DC log amplitude; the radius
/// axis is normalized so the Nyquist diagonal sits at 1. Amplitudes are
/// floored at 1e-12 before the log.
std::vector<std::pair<double, double>> relative_log_amplitude(const Spectrum2D& s);

/// Energy above the cutoff over energy at or below it (DC included below).
double hf_energy_ratio(const Spectrum& s, double cutoff);

enum class ActivationKind { ReLU, LIF };

struct ThreeSineResult {
    std::vector<double> input;      // x(t), the three-sine mixture
    std::vector<double> activated;  // r(t) or s(t)
    std::vector<double> weighted;   // FIR-mixed activation trace
    Spectrum input_spectrum;
    Spectrum activated_spectrum;
    Spectrum weighted_spectrum;
};

/// Drives x(t) = (sin(2pi 100t) + sin(2pi 200t) + sin(2pi 300t))/3 through a
/// pointwise activation (LIF: one neuron timestep per sample) and a random
/// 16-tap FIR weighting stage drawn from the seed.
ThreeSineResult three_sine_experiment(ActivationKind kind, const NeuronParams& lif_params,
                                      std::uint64_t weights_seed, double sample_rate,
                                      double duration);

/// Default neuron for the three-sine experiment: beta 0.25 with a small
/// threshold (0.025) that keeps the neuron rate-coding the membrane.
NeuronParams three_sine_default_neuron();

// ---- CSV serialization ----------------------------------------------------

std::string spectrum_to_csv(const Spectrum& s);
std::string curve_to_csv(const std::vector<std::pair<double, double>>& curve,
                         const std::string& x_name, const std::string& y_name);
std::string spectrum2d_to_text(const Spectrum2D& s);

}  // namespace spikelab

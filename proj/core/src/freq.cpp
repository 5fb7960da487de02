#include "spikelab/freq.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>

#include "spikelab/rng.hpp"

namespace spikelab {

namespace {
constexpr double kPi = 3.14159265358979323846;

void write_full(std::ostringstream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}
}  // namespace

TransferFunction lif_transfer(double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) {
        throw std::invalid_argument("lif_transfer: beta must lie in [0,1), got " +
                                    std::to_string(beta));
    }
    TransferFunction tf;
    tf.gain = 1.0 - beta;
    tf.pole = beta;
    tf.depth = 1;
    tf.layer_gains = {1.0};
    return tf;
}

TransferFunction if_transfer() {
    TransferFunction tf;
    tf.gain = 1.0;
    tf.pole = 1.0;
    tf.depth = 1;
    tf.layer_gains = {1.0};
    return tf;
}

double magnitude_response(const TransferFunction& tf, double omega) {
    if (!(omega >= 0.0 && omega <= kPi)) {
        throw std::invalid_argument("magnitude_response: omega must lie in [0,pi], got " +
                                    std::to_string(omega));
    }
    if (tf.pole == 1.0 && omega == 0.0) {
        throw std::invalid_argument(
            "magnitude_response: unbounded DC gain (pole on the unit circle)");
    }
    const std::complex<double> den =
        1.0 - tf.pole * std::exp(std::complex<double>(0.0, -omega));
    const double lowpass = tf.gain / std::abs(den);
    double gains = 1.0;
    for (double g : tf.layer_gains) gains *= g;
    return std::abs(gains) * std::pow(lowpass, static_cast<double>(tf.depth));
}

TransferFunction layered_transfer(const TransferFunction& base, std::size_t L,
                                  const std::vector<double>& gains) {
    if (L < 1) throw std::invalid_argument("layered_transfer: depth must be >= 1");
    if (gains.size() != L) {
        throw std::invalid_argument("layered_transfer: expected " + std::to_string(L) +
                                    " gains, got " + std::to_string(gains.size()));
    }
    TransferFunction tf = base;
    tf.depth = L;
    tf.layer_gains = gains;
    return tf;
}

double local_gain(const NeuronParams& params, double input_mean, double input_std,
                  std::size_t n_samples, std::size_t T, double delta, std::uint64_t seed) {
    params.validate();
    if (n_samples < 100) {
        throw std::invalid_argument("local_gain: need at least 100 samples, got " +
                                    std::to_string(n_samples));
    }
    if (!(delta > 0.0)) throw std::invalid_argument("local_gain: delta must be positive");
    if (T < 1) throw std::invalid_argument("local_gain: need at least one timestep");

    // Shared noise across the two perturbations keeps the estimator variance
    // from swamping the small offset.
    Rng rng(seed);
    Tensor noise({T, n_samples});
    for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.normal(0.0, input_std);

    auto run_at = [&](double baseline) {
        Tensor currents = noise;
        for (std::size_t i = 0; i < currents.numel(); ++i) currents[i] += baseline;
        return firing_rate(run_sequence(params, currents).spikes);
    };
    const double fr_plus = run_at(input_mean + delta);
    const double fr_minus = run_at(input_mean - delta);
    // Dead (0,0) and fully saturated (1,1) regimes have a genuinely flat rate
    // curve; a perturbation that jumps the entire transition region is a
    // degenerate estimate.
    if (fr_minus == 0.0 && fr_plus == 1.0) {
        throw std::invalid_argument(
            "local_gain: delta too large, firing rate saturates on both sides");
    }
    return (fr_plus - fr_minus) / (2.0 * delta);
}

Spectrum dft(const std::vector<double>& signal, double sample_rate) {
    if (signal.size() < 2) {
        throw std::invalid_argument("dft: need at least 2 samples, got " +
                                    std::to_string(signal.size()));
    }
    const std::size_t n = signal.size();
    const std::size_t nbins = n / 2 + 1;
    Spectrum s;
    s.sample_rate = sample_rate;
    s.freqs.resize(nbins);
    s.amps.resize(nbins);
    for (std::size_t k = 0; k < nbins; ++k) {
        double re = 0.0, im = 0.0;
        const double w = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            const double ph = w * static_cast<double>(t);
            re += signal[t] * std::cos(ph);
            im += signal[t] * std::sin(ph);
        }
        const double mag = std::sqrt(re * re + im * im);
        const bool edge = (k == 0) || (n % 2 == 0 && k == n / 2);
        s.amps[k] = edge ? mag / static_cast<double>(n) : 2.0 * mag / static_cast<double>(n);
        s.freqs[k] = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    }
    return s;
}

Spectrum2D spectrum2d(const Tensor& feature) {
    if (feature.rank() != 3) {
        throw std::invalid_argument("spectrum2d: feature must be [C,H,W], got " +
                                    feature.shape_string());
    }
    const std::size_t C = feature.extent(0), H = feature.extent(1), W = feature.extent(2);
    if (H < 2 || W < 2) {
        throw std::invalid_argument("spectrum2d: spatial extents must be >= 2, got " +
                                    feature.shape_string());
    }
    Spectrum2D out;
    out.height = H;
    out.width = W;
    out.amps.assign(H * W, 0.0);

    const double norm = 1.0 / static_cast<double>(H * W);
    for (std::size_t c = 0; c < C; ++c) {
        const double* img = feature.data() + c * H * W;
        for (std::size_t u = 0; u < H; ++u) {
            for (std::size_t v = 0; v < W; ++v) {
                double re = 0.0, im = 0.0;
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        const double ph = -2.0 * kPi *
                                          (static_cast<double>(u * y) / static_cast<double>(H) +
                                           static_cast<double>(v * x) / static_cast<double>(W));
                        re += img[y * W + x] * std::cos(ph);
                        im += img[y * W + x] * std::sin(ph);
                    }
                }
                // fftshift: DC lands at (H/2, W/2)
                const std::size_t su = (u + H / 2) % H;
                const std::size_t sv = (v + W / 2) % W;
                out.amps[su * W + sv] += std::sqrt(re * re + im * im) * norm;
            }
        }
    }
    const double cinv = 1.0 / static_cast<double>(C);
    for (double& a : out.amps) a *= cinv;
    return out;
}

std::vector<std::uint8_t> high_freq_mask(const Spectrum2D& s, double threshold_frac) {
    if (!(threshold_frac > 0.0 && threshold_frac < 1.0)) {
        throw std::invalid_argument("high_freq_mask: threshold_frac must lie in (0,1), got " +
                                    std::to_string(threshold_frac));
    }
    double mx = 0.0;
    for (double a : s.amps) mx = std::max(mx, a);
    std::vector<std::uint8_t> mask(s.amps.size(), 0);
    const std::size_t dc = s.dc_row() * s.width + s.dc_col();
    for (std::size_t i = 0; i < s.amps.size(); ++i) {
        if (i == dc) continue;
        mask[i] = s.amps[i] > threshold_frac * mx ? 1 : 0;
    }
    return mask;
}

std::vector<std::pair<double, double>> relative_log_amplitude(const Spectrum2D& s) {
    const std::size_t dc_r = s.dc_row(), dc_c = s.dc_col();
    const double dc_amp = s.at(dc_r, dc_c);
    if (!(dc_amp > 0.0)) {
        throw std::invalid_argument("relative_log_amplitude: DC amplitude must be positive");
    }
    constexpr double kFloor = 1e-12;
    const double log_dc = std::log(std::max(dc_amp, kFloor));

    // Radius of the Nyquist diagonal corner normalizes the frequency axis.
    double max_r = 0.0;
    for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t c = 0; c < s.width; ++c) {
            const double dy = static_cast<double>(r) - static_cast<double>(dc_r);
            const double dx = static_cast<double>(c) - static_cast<double>(dc_c);
            max_r = std::max(max_r, std::sqrt(dy * dy + dx * dx));
        }
    }

    const std::size_t nbins = std::max<std::size_t>(std::min(s.height, s.width) / 2, 4) + 1;
    std::vector<double> acc(nbins, 0.0);
    std::vector<std::size_t> count(nbins, 0);
    for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t c = 0; c < s.width; ++c) {
            const double dy = static_cast<double>(r) - static_cast<double>(dc_r);
            const double dx = static_cast<double>(c) - static_cast<double>(dc_c);
            const double radius = std::sqrt(dy * dy + dx * dx) / max_r;
            std::size_t bin =
                static_cast<std::size_t>(std::round(radius * static_cast<double>(nbins - 1)));
            bin = std::min(bin, nbins - 1);
            if (r == dc_r && c == dc_c) continue;  // DC handled explicitly
            acc[bin] += std::log(std::max(s.at(r, c), kFloor));
            count[bin] += 1;
        }
    }
    std::vector<std::pair<double, double>> curve;
    curve.emplace_back(0.0, 0.0);
    for (std::size_t b = 1; b < nbins; ++b) {
        if (count[b] == 0) continue;
        const double radius = static_cast<double>(b) / static_cast<double>(nbins - 1);
        curve.emplace_back(radius, acc[b] / static_cast<double>(count[b]) - log_dc);
    }
    return curve;
}

double hf_energy_ratio(const Spectrum& s, double cutoff) {
    if (s.freqs.empty() || cutoff < s.freqs.front() || cutoff > s.freqs.back()) {
        throw std::invalid_argument("hf_energy_ratio: cutoff outside spectrum range");
    }
    double hi = 0.0, lo = 0.0;
    for (std::size_t i = 0; i < s.amps.size(); ++i) {
        const double e = s.amps[i] * s.amps[i];
        if (s.freqs[i] > cutoff) {
            hi += e;
        } else {
            lo += e;
        }
    }
    if (lo == 0.0) {
        throw std::invalid_argument("hf_energy_ratio: zero energy at or below the cutoff");
    }
    return hi / lo;
}

NeuronParams three_sine_default_neuron() {
    // Threshold well below the unit signal scale keeps the neuron in its
    // rate-coding regime, where firing tracks the membrane smoothly; large
    // thresholds quantize the output toward an impulse train whose
    // discreteness harmonics swamp the membrane filtering.
    NeuronParams p;
    p.beta = 0.25;
    p.v_th = 0.025;
    p.kind = NeuronKind::LIF;
    return p;
}

ThreeSineResult three_sine_experiment(ActivationKind kind, const NeuronParams& lif_params,
                                      std::uint64_t weights_seed, double sample_rate,
                                      double duration) {
    const std::size_t n = static_cast<std::size_t>(sample_rate * duration);
    if (n < 1000) {
        throw std::invalid_argument("three_sine_experiment: need >= 1000 samples, got " +
                                    std::to_string(n));
    }
    ThreeSineResult out;
    out.input.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        out.input[i] = (std::sin(2.0 * kPi * 100.0 * t) + std::sin(2.0 * kPi * 200.0 * t) +
                        std::sin(2.0 * kPi * 300.0 * t)) /
                       3.0;
    }

    out.activated.resize(n);
    if (kind == ActivationKind::ReLU) {
        for (std::size_t i = 0; i < n; ++i) out.activated[i] = std::max(out.input[i], 0.0);
    } else {
        // One neuron timestep per signal sample: I[n] = x(n / fs).
        Tensor currents({n}, out.input);
        const SequenceResult seq = run_sequence(lif_params, currents);
        for (std::size_t i = 0; i < n; ++i) out.activated[i] = seq.spikes[i];
    }

    // Random causal FIR standing in for the synaptic weighting stage.
    constexpr std::size_t kTaps = 16;
    Rng rng(weights_seed);
    std::vector<double> taps(kTaps);
    for (double& w : taps) w = rng.normal();

    out.weighted.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < kTaps && k <= i; ++k)
            acc += taps[k] * out.activated[i - k];
        out.weighted[i] = acc;
    }

    out.input_spectrum = dft(out.input, sample_rate);
    out.activated_spectrum = dft(out.activated, sample_rate);
    out.weighted_spectrum = dft(out.weighted, sample_rate);
    return out;
}

// ---- serialization -----------------------------------------------------------

std::string spectrum_to_csv(const Spectrum& s) {
    std::ostringstream os;
    os << "freq,amplitude\n";
    for (std::size_t i = 0; i < s.freqs.size(); ++i) {
        write_full(os, s.freqs[i]);
        os << ",";
        write_full(os, s.amps[i]);
        os << "\n";
    }
    return os.str();
}

std::string curve_to_csv(const std::vector<std::pair<double, double>>& curve,
                         const std::string& x_name, const std::string& y_name) {
    std::ostringstream os;
    os << x_name << "," << y_name << "\n";
    for (const auto& [x, y] : curve) {
        write_full(os, x);
        os << ",";
        write_full(os, y);
        os << "\n";
    }
    return os.str();
}

std::string spectrum2d_to_text(const Spectrum2D& s) {
    std::ostringstream os;
    os << s.height << " " << s.width << "\n";
    for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t c = 0; c < s.width; ++c) {
            if (c) os << " ";
            write_full(os, s.at(r, c));
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace spikelab

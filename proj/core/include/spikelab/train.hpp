#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spikelab/model.hpp"
#include "spikelab/tensor.hpp"

namespace spikelab {

enum class OptimizerKind { Sgd, AdamW };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 5e-3;
    double weight_decay = 0.0;
    double label_smoothing = 0.1;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    LrSchedule schedule = LrSchedule::Constant;

    void validate() const;
};

struct Dataset {
    Tensor images;            // [N,C,H,W]
    std::vector<int> labels;  // [N]

    std::size_t size() const { return labels.size(); }
};

/// Two-class 16x16 texture discrimination set: label 1 images carry fine
/// stripe/checkerboard patterns (period 2-3 px), label 0 images smooth
/// gradients and blobs (period >= 8 px). Balanced classes, pixels in [0,1].
Dataset make_synthetic_freq_dataset(std::size_t n, std::uint64_t seed);

/// Low-frequency-only control variant (both classes smooth, differing in
/// orientation); used as the no-claimed-ordering control.
Dataset make_lowfreq_control_dataset(std::size_t n, std::uint64_t seed);

/// Label-smoothed cross entropy of plain logits [B,K] (mean over the batch).
double loss_ce_smoothed(const Tensor& logits, const std::vector<int>& labels,
                        double smoothing);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    double final_test_acc = 0.0;
};

/// Surrogate-gradient training with BPTT across all T timesteps.
/// Deterministic for a fixed config seed. Throws on divergence (NaN loss).
TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg);

/// Top-1 accuracy and mean unsmoothed cross entropy, evaluation mode.
std::pair<double, double> evaluate(Network& net, const Dataset& ds);

std::string metrics_to_csv(const std::vector<EpochMetrics>& history);

// ---- ablations -------------------------------------------------------------

struct AblationSeedResult {
    std::uint64_t seed = 0;
    double acc_a = 0.0;
    double acc_b = 0.0;
};

struct AblationReport {
    std::string name_a;
    std::string name_b;
    std::vector<AblationSeedResult> seeds;

    /// Fraction of seeds where variant A reaches at least variant B.
    double win_fraction_a() const;
    std::string to_csv() const;
};

AblationReport parse_ablation_csv(const std::string& csv);

struct AblationOptions {
    std::size_t timesteps = 2;
    // Data-scarce training keeps the pooling comparison away from the
    // saturation regime, where both variants solve the task and the ordering
    // washes out.
    std::size_t train_size = 800;
    std::size_t test_size = 400;
    TrainConfig train;
    bool control_task = false;  // use the low-frequency-only control dataset
};

/// Matched-parameter comparison of all-Max-Pool vs all-Avg-Pool token mixing
/// on the synthetic frequency task. Requires >= 5 seeds.
AblationReport pooling_ablation(const std::vector<std::uint64_t>& seeds,
                                const AblationOptions& options);

/// Same protocol comparing Embed-Max vs Embed-Orig patch embedding.
AblationReport patch_embed_ablation(const std::vector<std::uint64_t>& seeds,
                                    const AblationOptions& options);

/// The toy architecture the ablations train (pooling variant selectable).
ArchSpec ablation_arch(TokenMixKind mixer, PatchEmbedVariant embed, std::size_t timesteps);

}  // namespace spikelab

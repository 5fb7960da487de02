#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikelab/layers.hpp"
#include "spikelab/neuron.hpp"
#include "spikelab/tensor.hpp"

namespace spikelab {

enum class PatchEmbedVariant { Orig, Max, MaxPlus };

const char* to_string(PatchEmbedVariant v);

struct StageSpec {
    PatchEmbedVariant patch_embed = PatchEmbedVariant::Orig;
    TokenMixKind token_mixer = TokenMixKind::Identity;
    std::size_t mixer_window = 3;  // DWC-k kernel extent or pooling window
    std::size_t blocks = 1;
    std::size_t channels = 16;
};

/// Declarative network description. Stage i consumes tokens at 1/4 input
/// resolution and halves them per later stage (downsample factors 4,2,2).
struct ArchSpec {
    std::vector<StageSpec> stages;
    std::size_t timesteps = 4;
    std::size_t num_classes = 2;
    std::size_t input_channels = 1;
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    NeuronParams neuron;
    ShortcutKind shortcut = ShortcutKind::Membrane;
    double mlp_expansion = 4.0;
    double ssa_scale = 0.125;

    void validate() const;

    bool operator==(const ArchSpec&) const;

    /// Named presets: "tiny" (16/32/64) and the Table-style "cifar"
    /// (100/200/400) plan.
    static ArchSpec preset(const std::string& name);
};

struct NetworkStage {
    PatchEmbedLayer embed;
    std::vector<TokenMixerBlock> mixers;  // paired 1:1 with mlps
    std::vector<SmlpBlock> mlps;
    std::size_t channels = 0;
    std::size_t out_h = 0, out_w = 0;
};

struct ForwardTrace {
    Tensor logits;  // [B, num_classes]
    std::vector<LayerActivity> activities;
    std::vector<TransmissionRecord> transmissions;
    std::vector<std::pair<std::string, SignalDomain>> stage_domains;
};

class Network {
public:
    ArchSpec spec;
    std::vector<NetworkStage> stages;
    NeuronParams neuron;
    LinearLayer classifier;

    /// Logits for a static image batch [B,C,H,W] (repeated over T inside) or
    /// a time-resolved batch [T,B,C,H,W].
    Tensor forward(const Tensor& input);
    ForwardTrace forward_traced(const Tensor& input, bool collect_energy,
                                bool collect_audit);

    /// Graph-building forward used by training; returns the logits node.
    Graph::Value forward_graph(Graph& g, const Tensor& input, bool training,
                               SpikeMode mode, ForwardHooks& hooks);

    std::vector<Tensor*> parameters();
    /// Parameters plus batch-norm running statistics; everything a trained
    /// model needs to restore.
    std::vector<Tensor*> state_tensors();
    std::size_t param_count();
};

/// Builds the network described by `spec`; `seed` pins the weight draws.
Network build(const ArchSpec& spec, std::uint64_t seed = 0);

/// Repeats a static frame T times and spike-encodes it with the leading LIF
/// (the repeated pixel intensities drive the membrane at every timestep).
SpikeTensor encode_static(const Tensor& image, std::size_t T, const NeuronParams& params);

struct Event {
    std::int64_t x = 0;  // column
    std::int64_t y = 0;  // row
    std::int64_t t = 0;  // raw temporal bin index
    int p = 0;           // polarity, 0 or 1
};

struct EventStream {
    std::vector<Event> events;
    void sort_by_time();
};

/// Histograms events into frames [T,2,h,w]; alpha consecutive raw bins merge
/// into one frame and values are event counts. With hot-pixel removal on,
/// pixels whose total count exceeds mean + 5 sigma are zeroed.
Tensor bin_events(const EventStream& stream, std::size_t alpha, std::size_t target_T,
                  std::size_t h, std::size_t w, bool remove_hot_pixels = false);

// ---- model state I/O -------------------------------------------------------

void save_state(Network& net, const std::string& path);
void load_state(Network& net, const std::string& path);

}  // namespace spikelab

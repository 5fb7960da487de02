#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spikelab/autograd.hpp"
#include "spikelab/neuron.hpp"
#include "spikelab/rng.hpp"
#include "spikelab/tensor.hpp"

namespace spikelab {

// ---- spike-domain tagging ---------------------------------------------------

enum class SpikeDomain { Binary, Ternary };

/// Time-major activation tensor [T,B,C,H,W] with a value-domain tag.
/// Binary tensors carry {0,1}; ternary tensors ({0,1,2}) appear only behind
/// pre-spike shortcuts.
struct SpikeTensor {
    Tensor data;
    SpikeDomain domain = SpikeDomain::Binary;

    void validate() const;
};

enum class SignalDomain { Membrane, Binary, Ternary };

/// Value flowing between layers: real-valued membrane currents or tagged
/// spike maps.
struct LayerSignal {
    Tensor data;
    SignalDomain domain = SignalDomain::Membrane;
};

enum class ShortcutKind { Vanilla, PreSpike, Membrane };

/// Combines a main-branch output with a skip-path value.
///  Membrane: membrane + membrane, stays membrane-valued.
///  PreSpike: binary + binary spikes, result tagged ternary.
///  Vanilla:  binary spikes added into a membrane value.
/// Domain violations (e.g. spike operands where membranes are required)
/// throw.
LayerSignal shortcut(ShortcutKind kind, const LayerSignal& main, const LayerSignal& skip);

const char* to_string(ShortcutKind kind);
const char* to_string(SignalDomain domain);

// ---- parameterized primitive layers ----------------------------------------

struct Conv2dLayer {
    Tensor weight;  // [O,C,k,k]
    std::size_t stride = 1;
    std::size_t padding = 0;

    void init(Rng& rng, std::size_t in_ch, std::size_t out_ch, std::size_t k,
              std::size_t stride_, std::size_t padding_);
    void collect(std::vector<Tensor*>& out) { out.push_back(&weight); }
};

struct DepthwiseConvLayer {
    Tensor weight;  // [C,k,k]

    void init(Rng& rng, std::size_t channels, std::size_t k);
    void collect(std::vector<Tensor*>& out) { out.push_back(&weight); }
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
    double momentum = 0.9;
    double eps = 1e-5;

    void init(std::size_t channels);
    void collect(std::vector<Tensor*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

struct LinearLayer {
    Tensor weight;  // [D_in, D_out]
    Tensor bias;    // [D_out]

    void init(Rng& rng, std::size_t d_in, std::size_t d_out);
    void collect(std::vector<Tensor*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// ---- forward-pass hooks ------------------------------------------------------

/// One weight-bearing layer observed during a forward pass. FLOPs are per
/// frame and per sample; fr is the firing rate of the layer's input spike
/// train (mean spike value, counting a 2 twice for ternary inputs).
struct LayerActivity {
    std::string layer;
    std::string stage;
    std::string kind;  // patch_embed | token_mix | mlp | classifier
    std::size_t flops = 0;
    double fr = 0.0;
    bool mac = false;      // first conv, charged at E_MAC once
    bool multibit = false; // input came from a pre-spike (ternary) path
};

/// One spike-domain tensor crossing between layers.
struct TransmissionRecord {
    std::string name;
    SpikeDomain domain = SpikeDomain::Binary;
    double max_value = 0.0;
    bool strictly_binary = true;  // every element exactly 0.0 or 1.0
};

struct ForwardHooks {
    std::vector<LayerActivity>* energy = nullptr;
    std::vector<TransmissionRecord>* audit = nullptr;
    bool mac_charged = false;

    void record_transmission(const std::string& name, const Tensor& value,
                             SpikeDomain domain);
};

/// Mean spike value of a graph node (counts a ternary 2 twice).
double mean_value(const Tensor& t);

// ---- temporal graph helpers ---------------------------------------------------

/// Spiking nonlinearity over the leading time axis: charge/fire/subtract-reset
/// per step with V[0] = 0. Input [T,...] holds the per-step drive currents.
Graph::Value lif_over_time(Graph& g, Graph::Value currents, const NeuronParams& p,
                           SpikeMode mode);

Graph::Value conv_over_time(Graph& g, Graph::Value x, Conv2dLayer& conv);
Graph::Value depthwise_over_time(Graph& g, Graph::Value x, DepthwiseConvLayer& dwc);
Graph::Value bn_over_time(Graph& g, Graph::Value x, BatchNormLayer& bn, bool training);
Graph::Value max_pool_over_time(Graph& g, Graph::Value x, std::size_t k, std::size_t stride,
                                std::size_t padding);
Graph::Value avg_pool_over_time(Graph& g, Graph::Value x, std::size_t k, std::size_t stride,
                                std::size_t padding);

// ---- network blocks -----------------------------------------------------------

/// Signal between blocks in graph form.
struct FlowSignal {
    Graph::Value value = nullptr;  // [T,B,C,H,W]
    SignalDomain domain = SignalDomain::Membrane;
};

struct BlockContext {
    std::string name;
    std::string stage;
    std::string kind;
    bool training = false;
    SpikeMode spike_mode = SpikeMode::Hard;
};

enum class EmbedVariant { Orig, Max };

/// Embed = {LIF - CONV - BN}; Max-Embed appends a 3x3 stride-2 max pool.
/// Orig blocks downsample through the conv stride instead.
struct EmbedBlockLayer {
    EmbedVariant variant = EmbedVariant::Orig;
    NeuronParams neuron;
    Conv2dLayer conv;
    BatchNormLayer bn;

    void init(Rng& rng, std::size_t in_ch, std::size_t out_ch, EmbedVariant v,
              bool downsample, const NeuronParams& p);
    FlowSignal forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                       const BlockContext& ctx);
    void collect(std::vector<Tensor*>& out);
};

/// Two summed embed-block chains; the sum lives in the membrane domain and is
/// re-binarized by the consumer's leading LIF.
struct PatchEmbedLayer {
    std::vector<EmbedBlockLayer> branch1;
    std::vector<EmbedBlockLayer> branch2;

    FlowSignal forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                       const BlockContext& ctx);
    void collect(std::vector<Tensor*>& out);
};

enum class TokenMixKind { Identity, DWC, SSA, MaxPool, AvgPool };

const char* to_string(TokenMixKind kind);

struct TokenMixerBlock {
    TokenMixKind kind = TokenMixKind::Identity;
    std::size_t window = 3;  // DWC kernel extent or pooling window
    ShortcutKind shortcut_kind = ShortcutKind::Membrane;
    NeuronParams neuron;
    double ssa_scale = 0.125;

    DepthwiseConvLayer dwc;
    LinearLayer wq, wk, wv;  // bias-free; bias stays zero after init
    BatchNormLayer bn_q, bn_k, bn_v;

    void init(Rng& rng, std::size_t channels, TokenMixKind kind_, std::size_t window_,
              const NeuronParams& p, ShortcutKind sc);
    FlowSignal forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                       const BlockContext& ctx);
    void collect(std::vector<Tensor*>& out);
};

/// S-MLP: LIF -> 1x1 conv (D -> r*D) -> BN -> LIF -> 1x1 conv -> BN, plus the
/// model's shortcut.
struct SmlpBlock {
    ShortcutKind shortcut_kind = ShortcutKind::Membrane;
    NeuronParams neuron;
    Conv2dLayer conv1, conv2;
    BatchNormLayer bn1, bn2;

    void init(Rng& rng, std::size_t channels, double expansion, const NeuronParams& p,
              ShortcutKind sc);
    FlowSignal forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                       const BlockContext& ctx);
    void collect(std::vector<Tensor*>& out);
};

// ---- stand-alone spec operations (plain tensors, inference semantics) -------

/// Applies BN as the per-channel affine with the layer's running statistics.
Tensor batchnorm_apply(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& mean, const Tensor& var, double eps,
                       std::size_t channel_axis = 1);

/// {LIF - CONV - BN (- MaxPool)} on a binary spike train; returns the
/// membrane-domain block output. Ternay input is rejected.
Tensor embed_block(EmbedBlockLayer& block, const SpikeTensor& x);

SpikeTensor max_pool(const SpikeTensor& x, std::size_t k, std::size_t stride,
                     std::size_t padding = 0);
Tensor avg_pool(const Tensor& x_tb, std::size_t k, std::size_t stride,
                std::size_t padding = 0);

/// Per-channel spiking convolution: depthwise conv then LIF over timesteps.
SpikeTensor dwc_token_mix(const SpikeTensor& x, const Tensor& kernels,
                          const NeuronParams& params);

/// Spiking self-attention on token form [T,B,N,D]: Q/K/V = LIF(linear(x)),
/// output = LIF(Q K^T V * scale), all spike tensors binary, no softmax.
SpikeTensor ssa(const SpikeTensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                double scale, const NeuronParams& params);

/// S-MLP on a binary spike train with identity-initialized shortcut handling
/// left to the caller; returns the membrane-domain output of the second BN.
Tensor smlp_block(SmlpBlock& block, const SpikeTensor& x);

struct FoldedConv {
    Tensor weight;
    Tensor bias;  // [O]
};

/// Folds BN statistics into conv weights: w' = w * gamma / sqrt(var + eps),
/// b' = beta - gamma * mean / sqrt(var + eps).
FoldedConv bn_fold(const Tensor& conv_weight, const Tensor& gamma, const Tensor& beta,
                   const Tensor& mean, const Tensor& var, double eps = 0.0);

}  // namespace spikelab

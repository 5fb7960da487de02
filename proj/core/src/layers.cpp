#include "spikelab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spikelab/energy.hpp"

namespace spikelab {

namespace {

void check_rank5(const Tensor& t, const char* who) {
    if (t.rank() != 5) {
        throw std::invalid_argument(std::string(who) + ": expected [T,B,C,H,W], got " +
                                    t.shape_string());
    }
}

// [T,B,C,H,W] <-> [T*B,C,H,W]
Graph::Value flatten_tb(Graph& g, Graph::Value x) {
    const auto& s = x->value.shape();
    return g.reshape(x, {s[0] * s[1], s[2], s[3], s[4]});
}

Graph::Value unflatten_tb(Graph& g, Graph::Value x, std::size_t t, std::size_t b) {
    const auto& s = x->value.shape();
    return g.reshape(x, {t, b, s[1], s[2], s[3]});
}

}  // namespace

// ---- spike-domain tagging -----------------------------------------------------

void SpikeTensor::validate() const {
    for (std::size_t i = 0; i < data.numel(); ++i) {
        const double v = data[i];
        if (domain == SpikeDomain::Binary) {
            if (v != 0.0 && v != 1.0) {
                throw std::invalid_argument("SpikeTensor: non-binary value " +
                                            std::to_string(v) + " at element " +
                                            std::to_string(i));
            }
        } else {
            if (v != 0.0 && v != 1.0 && v != 2.0) {
                throw std::invalid_argument("SpikeTensor: value " + std::to_string(v) +
                                            " outside {0,1,2} at element " +
                                            std::to_string(i));
            }
        }
    }
}

const char* to_string(ShortcutKind kind) {
    switch (kind) {
        case ShortcutKind::Vanilla: return "vanilla";
        case ShortcutKind::PreSpike: return "prespike";
        case ShortcutKind::Membrane: return "membrane";
    }
    return "?";
}

const char* to_string(SignalDomain domain) {
    switch (domain) {
        case SignalDomain::Membrane: return "membrane";
        case SignalDomain::Binary: return "binary";
        case SignalDomain::Ternary: return "ternary";
    }
    return "?";
}

const char* to_string(TokenMixKind kind) {
    switch (kind) {
        case TokenMixKind::Identity: return "identity";
        case TokenMixKind::DWC: return "dwc";
        case TokenMixKind::SSA: return "ssa";
        case TokenMixKind::MaxPool: return "maxpool";
        case TokenMixKind::AvgPool: return "avgpool";
    }
    return "?";
}

LayerSignal shortcut(ShortcutKind kind, const LayerSignal& main, const LayerSignal& skip) {
    if (!main.data.same_shape(skip.data)) {
        throw std::invalid_argument("shortcut: shape mismatch " + main.data.shape_string() +
                                    " vs " + skip.data.shape_string());
    }
    auto sum = [&]() {
        Tensor out = main.data;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += skip.data[i];
        return out;
    };
    switch (kind) {
        case ShortcutKind::Membrane:
            if (main.domain != SignalDomain::Membrane ||
                skip.domain != SignalDomain::Membrane) {
                throw std::invalid_argument(
                    "shortcut: membrane shortcut requires membrane-domain operands, got " +
                    std::string(to_string(main.domain)) + " + " + to_string(skip.domain));
            }
            return {sum(), SignalDomain::Membrane};
        case ShortcutKind::PreSpike:
            if (main.domain != SignalDomain::Binary || skip.domain != SignalDomain::Binary) {
                throw std::invalid_argument(
                    "shortcut: pre-spike shortcut sums two binary spike maps, got " +
                    std::string(to_string(main.domain)) + " + " + to_string(skip.domain));
            }
            return {sum(), SignalDomain::Ternary};
        case ShortcutKind::Vanilla:
            if (main.domain != SignalDomain::Membrane || skip.domain != SignalDomain::Binary) {
                throw std::invalid_argument(
                    "shortcut: vanilla shortcut adds binary spikes into a membrane value, "
                    "got " +
                    std::string(to_string(main.domain)) + " + " + to_string(skip.domain));
            }
            return {sum(), SignalDomain::Membrane};
    }
    throw std::invalid_argument("shortcut: unknown kind");
}

// ---- primitive layers -----------------------------------------------------------

void Conv2dLayer::init(Rng& rng, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                       std::size_t stride_, std::size_t padding_) {
    weight = Tensor({out_ch, in_ch, k, k});
    const double sd = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
    for (std::size_t i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, sd);
    stride = stride_;
    padding = padding_;
}

void DepthwiseConvLayer::init(Rng& rng, std::size_t channels, std::size_t k) {
    weight = Tensor({channels, k, k});
    const double sd = std::sqrt(2.0 / static_cast<double>(k * k));
    for (std::size_t i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, sd);
}

void BatchNormLayer::init(std::size_t channels) {
    gamma = Tensor::ones({channels});
    beta = Tensor::zeros({channels});
    state.init(channels);
}

void LinearLayer::init(Rng& rng, std::size_t d_in, std::size_t d_out) {
    weight = Tensor({d_in, d_out});
    const double sd = std::sqrt(2.0 / static_cast<double>(d_in));
    for (std::size_t i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, sd);
    bias = Tensor::zeros({d_out});
}

// ---- hooks --------------------------------------------------------------------

double mean_value(const Tensor& t) {
    if (t.numel() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) acc += t[i];
    return acc / static_cast<double>(t.numel());
}

void ForwardHooks::record_transmission(const std::string& name, const Tensor& value,
                                       SpikeDomain domain) {
    if (!audit) return;
    TransmissionRecord rec;
    rec.name = name;
    rec.domain = domain;
    rec.strictly_binary = true;
    for (std::size_t i = 0; i < value.numel(); ++i) {
        rec.max_value = std::max(rec.max_value, value[i]);
        if (value[i] != 0.0 && value[i] != 1.0) rec.strictly_binary = false;
    }
    audit->push_back(std::move(rec));
}

namespace {

void record_energy(ForwardHooks& hooks, const BlockContext& ctx, const std::string& layer,
                   std::size_t layer_flops, const Tensor& input_spikes,
                   SignalDomain input_domain) {
    if (!hooks.energy) return;
    LayerActivity act;
    act.layer = ctx.name.empty() ? layer : ctx.name + "." + layer;
    act.stage = ctx.stage;
    act.kind = ctx.kind;
    act.flops = layer_flops;
    if (!hooks.mac_charged) {
        act.mac = true;
        hooks.mac_charged = true;
        act.fr = 0.0;  // encoder layer: charged per MAC, not per spike
    } else {
        act.fr = mean_value(input_spikes);
        act.multibit = input_domain == SignalDomain::Ternary;
    }
    hooks.energy->push_back(std::move(act));
}

}  // namespace

// ---- temporal graph helpers ------------------------------------------------------

Graph::Value lif_over_time(Graph& g, Graph::Value currents, const NeuronParams& p,
                           SpikeMode mode) {
    p.validate();
    if (currents->value.rank() < 1 || currents->value.extent(0) == 0) {
        throw std::invalid_argument("lif_over_time: need at least one timestep");
    }
    const std::size_t T = currents->value.extent(0);
    std::vector<std::size_t> step_shape(currents->value.shape().begin() + 1,
                                        currents->value.shape().end());
    if (step_shape.empty()) step_shape = {1};

    Graph::Value v = g.constant(Tensor::zeros(step_shape));
    std::vector<Graph::Value> spikes;
    spikes.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Graph::Value i_t = g.select0(currents, t);
        Graph::Value u;
        if (p.kind == NeuronKind::LIF) {
            u = g.add(g.scale(v, p.beta), g.scale(i_t, 1.0 - p.beta));
        } else {
            u = g.add(v, i_t);
        }
        Graph::Value s = g.spike(u, p.v_th, p.surrogate_alpha, mode);
        v = g.sub(u, g.scale(s, p.v_th));
        spikes.push_back(s);
    }
    return g.stack0(spikes);
}

Graph::Value conv_over_time(Graph& g, Graph::Value x, Conv2dLayer& conv) {
    check_rank5(x->value, "conv_over_time");
    const std::size_t T = x->value.extent(0), B = x->value.extent(1);
    Graph::Value flat = flatten_tb(g, x);
    Graph::Value y = g.conv2d(flat, g.param(conv.weight), conv.stride, conv.padding);
    return unflatten_tb(g, y, T, B);
}

Graph::Value depthwise_over_time(Graph& g, Graph::Value x, DepthwiseConvLayer& dwc) {
    check_rank5(x->value, "depthwise_over_time");
    const std::size_t T = x->value.extent(0), B = x->value.extent(1);
    Graph::Value flat = flatten_tb(g, x);
    Graph::Value y = g.depthwise_conv2d(flat, g.param(dwc.weight));
    return unflatten_tb(g, y, T, B);
}

Graph::Value bn_over_time(Graph& g, Graph::Value x, BatchNormLayer& bn, bool training) {
    check_rank5(x->value, "bn_over_time");
    const std::size_t T = x->value.extent(0), B = x->value.extent(1);
    Graph::Value flat = flatten_tb(g, x);
    Graph::Value y = g.batch_norm(flat, g.param(bn.gamma), g.param(bn.beta), 1, training,
                                  &bn.state, bn.momentum, bn.eps);
    return unflatten_tb(g, y, T, B);
}

Graph::Value max_pool_over_time(Graph& g, Graph::Value x, std::size_t k, std::size_t stride,
                                std::size_t padding) {
    check_rank5(x->value, "max_pool_over_time");
    const std::size_t T = x->value.extent(0), B = x->value.extent(1);
    Graph::Value y = g.max_pool(flatten_tb(g, x), k, stride, padding);
    return unflatten_tb(g, y, T, B);
}

Graph::Value avg_pool_over_time(Graph& g, Graph::Value x, std::size_t k, std::size_t stride,
                                std::size_t padding) {
    check_rank5(x->value, "avg_pool_over_time");
    const std::size_t T = x->value.extent(0), B = x->value.extent(1);
    Graph::Value y = g.avg_pool(flatten_tb(g, x), k, stride, padding);
    return unflatten_tb(g, y, T, B);
}

// ---- embed blocks ------------------------------------------------------------------

void EmbedBlockLayer::init(Rng& rng, std::size_t in_ch, std::size_t out_ch, EmbedVariant v,
                           bool downsample, const NeuronParams& p) {
    variant = v;
    neuron = p;
    // Orig downsamples through the conv stride; Max keeps stride 1 and lets
    // the 3x3/stride-2 pool halve the map.
    const std::size_t stride = (v == EmbedVariant::Orig && downsample) ? 2 : 1;
    conv.init(rng, in_ch, out_ch, 3, stride, 1);
    bn.init(out_ch);
}

FlowSignal EmbedBlockLayer::forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                                    const BlockContext& ctx) {
    if (in.domain == SignalDomain::Ternary) {
        throw std::invalid_argument("embed block '" + ctx.name +
                                    "' consumes binary spikes only; got a ternary input");
    }
    Graph::Value s = lif_over_time(g, in.value, neuron, ctx.spike_mode);
    hooks.record_transmission(ctx.name + ".spikes", s->value, SpikeDomain::Binary);

    const auto& ss = s->value.shape();
    const auto conv_shape =
        conv2d_output_shape({ss[0] * ss[1], ss[2], ss[3], ss[4]}, conv.weight.shape(),
                            conv.stride, conv.padding);
    record_energy(hooks, ctx, "conv",
                  flops_conv(conv.weight.extent(2), conv.weight.extent(1),
                             conv.weight.extent(0), conv_shape[2], conv_shape[3]),
                  s->value, in.domain);

    Graph::Value y = conv_over_time(g, s, conv);
    y = bn_over_time(g, y, bn, ctx.training);
    if (variant == EmbedVariant::Max) {
        y = max_pool_over_time(g, y, 3, 2, 1);
    }
    return {y, SignalDomain::Membrane};
}

void EmbedBlockLayer::collect(std::vector<Tensor*>& out) {
    conv.collect(out);
    bn.collect(out);
}

FlowSignal PatchEmbedLayer::forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                                    const BlockContext& ctx) {
    auto run_branch = [&](std::vector<EmbedBlockLayer>& chain, const char* tag) {
        FlowSignal cur = in;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            BlockContext sub = ctx;
            sub.name = ctx.name + "." + tag + std::to_string(i + 1);
            cur = chain[i].forward(g, cur, hooks, sub);
        }
        return cur;
    };
    FlowSignal y1 = run_branch(branch1, "g1.b");
    FlowSignal y2 = run_branch(branch2, "g2.b");
    if (!y1.value->value.same_shape(y2.value->value)) {
        throw std::invalid_argument("patch_embed '" + ctx.name + "': branch shapes differ, " +
                                    y1.value->value.shape_string() + " vs " +
                                    y2.value->value.shape_string());
    }
    return {g.add(y1.value, y2.value), SignalDomain::Membrane};
}

void PatchEmbedLayer::collect(std::vector<Tensor*>& out) {
    for (auto& b : branch1) b.collect(out);
    for (auto& b : branch2) b.collect(out);
}

// ---- residual application ------------------------------------------------------

namespace {

// Applies a block's shortcut in graph form. `main` is the block's
// membrane-domain branch output, `head_spikes` the block's leading LIF
// output. A pre-spike block fires its branch and emits the ternary sum; the
// other kinds stay membrane-valued for the next leading LIF.
FlowSignal apply_graph_shortcut(Graph& g, ShortcutKind kind, const NeuronParams& neuron,
                                Graph::Value main, const FlowSignal& in,
                                Graph::Value head_spikes, ForwardHooks& hooks,
                                const BlockContext& ctx) {
    switch (kind) {
        case ShortcutKind::Membrane:
            return {g.add(main, in.value), SignalDomain::Membrane};
        case ShortcutKind::Vanilla:
            return {g.add(main, head_spikes), SignalDomain::Membrane};
        case ShortcutKind::PreSpike: {
            Graph::Value fired = lif_over_time(g, main, neuron, ctx.spike_mode);
            Graph::Value out = g.add(fired, head_spikes);
            hooks.record_transmission(ctx.name + ".prespike_sum", out->value,
                                      SpikeDomain::Ternary);
            return {out, SignalDomain::Ternary};
        }
    }
    throw std::invalid_argument("apply_graph_shortcut: unknown shortcut kind");
}

}  // namespace

// ---- token mixer -------------------------------------------------------------------

void TokenMixerBlock::init(Rng& rng, std::size_t channels, TokenMixKind kind_,
                           std::size_t window_, const NeuronParams& p, ShortcutKind sc) {
    kind = kind_;
    window = window_;
    neuron = p;
    shortcut_kind = sc;
    if (kind == TokenMixKind::DWC) {
        if (window % 2 == 0) {
            throw std::invalid_argument("token mixer: DWC kernel extent must be odd, got " +
                                        std::to_string(window));
        }
        dwc.init(rng, channels, window);
    } else if (kind == TokenMixKind::SSA) {
        wq.init(rng, channels, channels);
        wk.init(rng, channels, channels);
        wv.init(rng, channels, channels);
        bn_q.init(channels);
        bn_k.init(channels);
        bn_v.init(channels);
    }
}

FlowSignal TokenMixerBlock::forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                                    const BlockContext& ctx) {
    if (kind == TokenMixKind::Identity) {
        return in;  // literal pass-through
    }
    if (shortcut_kind == ShortcutKind::Membrane && in.domain != SignalDomain::Membrane) {
        throw std::invalid_argument("block '" + ctx.name +
                                    "': membrane shortcut requires a membrane-domain input, "
                                    "got " +
                                    to_string(in.domain));
    }

    Graph::Value s = lif_over_time(g, in.value, neuron, ctx.spike_mode);
    hooks.record_transmission(ctx.name + ".spikes", s->value, SpikeDomain::Binary);

    const std::size_t T = s->value.extent(0), B = s->value.extent(1);
    const std::size_t C = s->value.extent(2), H = s->value.extent(3), W = s->value.extent(4);

    Graph::Value main = nullptr;
    if (kind == TokenMixKind::DWC) {
        record_energy(hooks, ctx, "dwc", flops_dwc(window, C, H, W), s->value, in.domain);
        main = depthwise_over_time(g, s, dwc);
    } else if (kind == TokenMixKind::MaxPool) {
        main = max_pool_over_time(g, s, window, 1, window / 2);
    } else if (kind == TokenMixKind::AvgPool) {
        main = avg_pool_over_time(g, s, window, 1, window / 2);
    } else {  // SSA
        const std::size_t N = H * W;
        Graph::Value tokens = g.to_tokens(flatten_tb(g, s));  // [T*B, N, C]

        auto project = [&](LinearLayer& w, BatchNormLayer& bn, const char* tag) {
            record_energy(hooks, ctx, std::string("ssa.w") + tag, flops_linear(C, C, N),
                          s->value, in.domain);
            Graph::Value z = g.matmul(tokens, g.param(w.weight));
            z = g.batch_norm(z, g.param(bn.gamma), g.param(bn.beta), 2, ctx.training,
                             &bn.state, bn.momentum, bn.eps);
            z = g.reshape(z, {T, B, N, C});
            z = lif_over_time(g, z, neuron, ctx.spike_mode);
            hooks.record_transmission(ctx.name + ".ssa." + tag, z->value,
                                      SpikeDomain::Binary);
            return z;  // [T,B,N,C] binary
        };
        Graph::Value q = project(wq, bn_q, "q");
        Graph::Value k = project(wk, bn_k, "k");
        Graph::Value v = project(wv, bn_v, "v");

        // Q (K^T V): both products keep a binary left operand, so every
        // partial product is {0, operand} and the whole chain is
        // accumulate-only.
        record_energy(hooks, ctx, "ssa.kv", flops_linear(N, C, C), k->value, in.domain);
        record_energy(hooks, ctx, "ssa.qkv", flops_linear(C, C, N), q->value, in.domain);

        std::vector<Graph::Value> per_t;
        per_t.reserve(T);
        for (std::size_t t = 0; t < T; ++t) {
            Graph::Value qt = g.select0(q, t);  // [B,N,C]
            Graph::Value kt = g.select0(k, t);
            Graph::Value vt = g.select0(v, t);
            Graph::Value kv = g.matmul(g.transpose_last2(kt), vt);  // [B,C,C]
            Graph::Value o = g.matmul(qt, kv);                      // [B,N,C]
            per_t.push_back(g.scale(o, ssa_scale));
        }
        Graph::Value attn = g.stack0(per_t);  // [T,B,N,C]
        main = g.reshape(attn, {T * B, N, C});
        main = g.from_tokens(main, H, W);
        main = unflatten_tb(g, main, T, B);
    }

    return apply_graph_shortcut(g, shortcut_kind, neuron, main, in, s, hooks, ctx);
}

void TokenMixerBlock::collect(std::vector<Tensor*>& out) {
    if (kind == TokenMixKind::DWC) {
        dwc.collect(out);
    } else if (kind == TokenMixKind::SSA) {
        // projections are bias-free; only the weights are learnable
        out.push_back(&wq.weight);
        out.push_back(&wk.weight);
        out.push_back(&wv.weight);
        bn_q.collect(out);
        bn_k.collect(out);
        bn_v.collect(out);
    }
}

// ---- S-MLP ---------------------------------------------------------------------------

void SmlpBlock::init(Rng& rng, std::size_t channels, double expansion, const NeuronParams& p,
                     ShortcutKind sc) {
    neuron = p;
    shortcut_kind = sc;
    const std::size_t hidden =
        std::max<std::size_t>(1, static_cast<std::size_t>(expansion * channels));
    conv1.init(rng, channels, hidden, 1, 1, 0);
    bn1.init(hidden);
    conv2.init(rng, hidden, channels, 1, 1, 0);
    bn2.init(channels);
}

FlowSignal SmlpBlock::forward(Graph& g, const FlowSignal& in, ForwardHooks& hooks,
                              const BlockContext& ctx) {
    if (shortcut_kind == ShortcutKind::Membrane && in.domain != SignalDomain::Membrane) {
        throw std::invalid_argument("block '" + ctx.name +
                                    "': membrane shortcut requires a membrane-domain input, "
                                    "got " +
                                    to_string(in.domain));
    }
    const std::size_t C = in.value->value.extent(2);
    const std::size_t H = in.value->value.extent(3), W = in.value->value.extent(4);
    const std::size_t hidden = conv1.weight.extent(0);

    Graph::Value s = lif_over_time(g, in.value, neuron, ctx.spike_mode);
    hooks.record_transmission(ctx.name + ".spikes", s->value, SpikeDomain::Binary);
    record_energy(hooks, ctx, "conv1", flops_conv(1, C, hidden, H, W), s->value, in.domain);
    Graph::Value y = conv_over_time(g, s, conv1);
    y = bn_over_time(g, y, bn1, ctx.training);

    Graph::Value s2 = lif_over_time(g, y, neuron, ctx.spike_mode);
    hooks.record_transmission(ctx.name + ".hidden_spikes", s2->value, SpikeDomain::Binary);
    record_energy(hooks, ctx, "conv2", flops_conv(1, hidden, C, H, W), s2->value,
                  SignalDomain::Membrane);
    Graph::Value m = conv_over_time(g, s2, conv2);
    m = bn_over_time(g, m, bn2, ctx.training);

    return apply_graph_shortcut(g, shortcut_kind, neuron, m, in, s, hooks, ctx);
}

void SmlpBlock::collect(std::vector<Tensor*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
}

// ---- standalone spec operations ---------------------------------------------------

Tensor batchnorm_apply(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& mean, const Tensor& var, double eps,
                       std::size_t channel_axis) {
    const std::size_t C = gamma.numel();
    if (channel_axis >= x.rank() || x.extent(channel_axis) != C) {
        throw std::invalid_argument("batchnorm_apply: channel axis/extent mismatch for " +
                                    x.shape_string());
    }
    std::size_t stride = 1;
    for (std::size_t d = channel_axis + 1; d < x.rank(); ++d) stride *= x.extent(d);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t c = (i / stride) % C;
        if (!(var[c] + eps > 0.0)) {
            throw std::invalid_argument("batchnorm_apply: non-positive variance in channel " +
                                        std::to_string(c));
        }
        out[i] = gamma[c] * (x[i] - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
    }
    return out;
}

namespace {

// Plain (non-graph) per-timestep LIF over [T,...]: forwards run_sequence.
Tensor lif_plain(const Tensor& currents, const NeuronParams& p) {
    return run_sequence(p, currents).spikes;
}

Tensor flatten_tb_plain(const Tensor& x) {
    check_rank5(x, "spike op");
    const auto& s = x.shape();
    return x.reshaped({s[0] * s[1], s[2], s[3], s[4]});
}

Tensor unflatten_tb_plain(const Tensor& x, std::size_t t, std::size_t b) {
    const auto& s = x.shape();
    return x.reshaped({t, b, s[1], s[2], s[3]});
}

}  // namespace

Tensor embed_block(EmbedBlockLayer& block, const SpikeTensor& x) {
    if (x.domain == SpikeDomain::Ternary) {
        throw std::invalid_argument("embed_block: embed blocks consume binary spikes only");
    }
    x.validate();
    const std::size_t T = x.data.extent(0), B = x.data.extent(1);
    Tensor s = lif_plain(x.data, block.neuron);
    Tensor y = conv2d(flatten_tb_plain(s), block.conv.weight, block.conv.stride,
                      block.conv.padding);
    y = batchnorm_apply(y, block.bn.gamma, block.bn.beta, block.bn.state.running_mean,
                        block.bn.state.running_var, block.bn.eps);
    if (block.variant == EmbedVariant::Max) {
        y = max_pool2d(y, 3, 2, 1);
    }
    return unflatten_tb_plain(y, T, B);
}

SpikeTensor max_pool(const SpikeTensor& x, std::size_t k, std::size_t stride,
                     std::size_t padding) {
    x.validate();
    const std::size_t T = x.data.extent(0), B = x.data.extent(1);
    Tensor y = max_pool2d(flatten_tb_plain(x.data), k, stride, padding);
    return {unflatten_tb_plain(y, T, B), x.domain};
}

Tensor avg_pool(const Tensor& x_tb, std::size_t k, std::size_t stride, std::size_t padding) {
    const std::size_t T = x_tb.extent(0), B = x_tb.extent(1);
    Tensor y = avg_pool2d(flatten_tb_plain(x_tb), k, stride, padding);
    return unflatten_tb_plain(y, T, B);
}

SpikeTensor dwc_token_mix(const SpikeTensor& x, const Tensor& kernels,
                          const NeuronParams& params) {
    if (x.domain != SpikeDomain::Binary) {
        throw std::invalid_argument("dwc_token_mix: input must be binary spikes");
    }
    x.validate();
    const std::size_t T = x.data.extent(0), B = x.data.extent(1);
    Tensor y = depthwise_conv2d(flatten_tb_plain(x.data), kernels);
    Tensor spikes = lif_plain(unflatten_tb_plain(y, T, B), params);
    return {std::move(spikes), SpikeDomain::Binary};
}

SpikeTensor ssa(const SpikeTensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                double scale, const NeuronParams& params) {
    if (x.domain != SpikeDomain::Binary) {
        throw std::invalid_argument("ssa: input must be binary spikes");
    }
    x.validate();
    if (x.data.rank() != 4) {
        throw std::invalid_argument("ssa: expected [T,B,N,D], got " + x.data.shape_string());
    }
    auto project = [&](const Tensor& w) {
        Tensor z = matmul(x.data, w);  // [T,B,N,D]
        SpikeTensor out{lif_plain(z, params), SpikeDomain::Binary};
        out.validate();  // spike-driven contract: binary at multiplication time
        return out;
    };
    const SpikeTensor q = project(wq);
    const SpikeTensor k = project(wk);
    const SpikeTensor v = project(wv);

    const std::size_t T = x.data.extent(0), B = x.data.extent(1);
    const std::size_t N = x.data.extent(2), D = x.data.extent(3);
    Tensor attn({T, B, N, D});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (t * B + b) * N * D;
            // K^T V : [D,D]
            Tensor kv({D, D}, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t d1 = 0; d1 < D; ++d1) {
                    const double kval = k.data[base + n * D + d1];
                    if (kval == 0.0) continue;
                    for (std::size_t d2 = 0; d2 < D; ++d2)
                        kv[d1 * D + d2] += kval * v.data[base + n * D + d2];
                }
            }
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t d2 = 0; d2 < D; ++d2) {
                    double acc = 0.0;
                    for (std::size_t d1 = 0; d1 < D; ++d1)
                        acc += q.data[base + n * D + d1] * kv[d1 * D + d2];
                    attn[base + n * D + d2] = acc * scale;
                }
            }
        }
    }
    return {lif_plain(attn, params), SpikeDomain::Binary};
}

Tensor smlp_block(SmlpBlock& block, const SpikeTensor& x) {
    if (x.domain != SpikeDomain::Binary) {
        throw std::invalid_argument("smlp_block: input must be binary spikes");
    }
    x.validate();
    const std::size_t T = x.data.extent(0), B = x.data.extent(1);
    Tensor s1 = lif_plain(x.data, block.neuron);
    Tensor y = conv2d(flatten_tb_plain(s1), block.conv1.weight, 1, 0);
    y = batchnorm_apply(y, block.bn1.gamma, block.bn1.beta, block.bn1.state.running_mean,
                        block.bn1.state.running_var, block.bn1.eps);
    Tensor s2 = lif_plain(unflatten_tb_plain(y, T, B), block.neuron);
    Tensor z = conv2d(flatten_tb_plain(s2), block.conv2.weight, 1, 0);
    z = batchnorm_apply(z, block.bn2.gamma, block.bn2.beta, block.bn2.state.running_mean,
                        block.bn2.state.running_var, block.bn2.eps);
    return unflatten_tb_plain(z, T, B);
}

FoldedConv bn_fold(const Tensor& conv_weight, const Tensor& gamma, const Tensor& beta,
                   const Tensor& mean, const Tensor& var, double eps) {
    if (conv_weight.rank() != 4) {
        throw std::invalid_argument("bn_fold: conv weight must be [O,C,k,k], got " +
                                    conv_weight.shape_string());
    }
    const std::size_t O = conv_weight.extent(0);
    if (gamma.numel() != O || beta.numel() != O || mean.numel() != O || var.numel() != O) {
        throw std::invalid_argument("bn_fold: statistics extents do not match " +
                                    std::to_string(O) + " output channels");
    }
    FoldedConv out;
    out.weight = conv_weight;
    out.bias = Tensor({O});
    const std::size_t per_out = conv_weight.numel() / O;
    for (std::size_t o = 0; o < O; ++o) {
        if (!(var[o] > 0.0)) {
            throw std::invalid_argument("bn_fold: zero variance in channel " +
                                        std::to_string(o));
        }
        const double inv_sigma = 1.0 / std::sqrt(var[o] + eps);
        const double scale = gamma[o] * inv_sigma;
        for (std::size_t i = 0; i < per_out; ++i) out.weight[o * per_out + i] *= scale;
        out.bias[o] = beta[o] - gamma[o] * mean[o] * inv_sigma;
    }
    return out;
}

}  // namespace spikelab

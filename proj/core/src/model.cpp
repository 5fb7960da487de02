#include "spikelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spikelab/energy.hpp"

namespace spikelab {

const char* to_string(PatchEmbedVariant v) {
    switch (v) {
        case PatchEmbedVariant::Orig: return "orig";
        case PatchEmbedVariant::Max: return "max";
        case PatchEmbedVariant::MaxPlus: return "max+";
    }
    return "?";
}

void ArchSpec::validate() const {
    if (stages.empty() || stages.size() > 3) {
        throw std::invalid_argument("ArchSpec: expected 1-3 stages, got " +
                                    std::to_string(stages.size()));
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const StageSpec& s = stages[i];
        if (s.blocks < 1) {
            throw std::invalid_argument("ArchSpec: stage " + std::to_string(i + 1) +
                                        " needs at least one block");
        }
        if (s.channels < 1) {
            throw std::invalid_argument("ArchSpec: stage " + std::to_string(i + 1) +
                                        " needs a positive channel extent");
        }
        if (s.token_mixer == TokenMixKind::DWC && s.mixer_window % 2 == 0) {
            throw std::invalid_argument("ArchSpec: stage " + std::to_string(i + 1) +
                                        " DWC window must be odd");
        }
    }
    if (timesteps < 1) throw std::invalid_argument("ArchSpec: timesteps must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("ArchSpec: need at least two classes");
    neuron.validate();
    // The spatial ladder divides by 4 then 2 per extra stage.
    std::size_t div = 4;
    for (std::size_t i = 1; i < stages.size(); ++i) div *= 2;
    if (input_height % div != 0 || input_width % div != 0) {
        throw std::invalid_argument("ArchSpec: input extent " +
                                    std::to_string(input_height) + "x" +
                                    std::to_string(input_width) +
                                    " is not divisible by the stage ladder factor " +
                                    std::to_string(div));
    }
}

bool ArchSpec::operator==(const ArchSpec& o) const {
    auto stage_eq = [](const StageSpec& a, const StageSpec& b) {
        return a.patch_embed == b.patch_embed && a.token_mixer == b.token_mixer &&
               a.mixer_window == b.mixer_window && a.blocks == b.blocks &&
               a.channels == b.channels;
    };
    if (stages.size() != o.stages.size()) return false;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (!stage_eq(stages[i], o.stages[i])) return false;
    }
    return timesteps == o.timesteps && num_classes == o.num_classes &&
           input_channels == o.input_channels && input_height == o.input_height &&
           input_width == o.input_width && neuron.beta == o.neuron.beta &&
           neuron.v_th == o.neuron.v_th && neuron.kind == o.neuron.kind &&
           neuron.surrogate_alpha == o.neuron.surrogate_alpha && shortcut == o.shortcut &&
           mlp_expansion == o.mlp_expansion && ssa_scale == o.ssa_scale;
}

ArchSpec ArchSpec::preset(const std::string& name) {
    ArchSpec spec;
    if (name == "tiny") {
        spec.stages = {
            {PatchEmbedVariant::Orig, TokenMixKind::Identity, 3, 1, 16},
            {PatchEmbedVariant::Max, TokenMixKind::DWC, 3, 1, 32},
            {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 1, 64},
        };
        spec.timesteps = 4;
        spec.num_classes = 10;
        spec.input_channels = 3;
        spec.input_height = 32;
        spec.input_width = 32;
        spec.neuron.beta = 0.25;
        spec.neuron.v_th = 0.5;
        return spec;
    }
    if (name == "cifar") {
        spec.stages = {
            {PatchEmbedVariant::Orig, TokenMixKind::Identity, 3, 1, 100},
            {PatchEmbedVariant::Max, TokenMixKind::DWC, 3, 1, 200},
            {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 2, 400},
        };
        spec.timesteps = 4;
        spec.num_classes = 10;
        spec.input_channels = 3;
        spec.input_height = 32;
        spec.input_width = 32;
        spec.neuron.beta = 0.25;
        spec.neuron.v_th = 0.5;
        return spec;
    }
    throw std::invalid_argument("ArchSpec::preset: unknown preset '" + name + "'");
}

// ---- build ----------------------------------------------------------------------

namespace {

EmbedVariant branch_variant(PatchEmbedVariant v, bool first_branch) {
    // Embed-Orig = (Embed, Embed); Embed-Max = (Max-Embed, Embed);
    // Embed-Max+ = (Max-Embed, Max-Embed).
    switch (v) {
        case PatchEmbedVariant::Orig: return EmbedVariant::Orig;
        case PatchEmbedVariant::Max:
            return first_branch ? EmbedVariant::Max : EmbedVariant::Orig;
        case PatchEmbedVariant::MaxPlus: return EmbedVariant::Max;
    }
    return EmbedVariant::Orig;
}

std::vector<EmbedBlockLayer> make_branch(Rng& rng, std::size_t in_ch, std::size_t out_ch,
                                         std::size_t factor, EmbedVariant variant,
                                         const NeuronParams& p) {
    std::vector<EmbedBlockLayer> chain;
    if (factor == 4) {
        const std::size_t mid = std::max<std::size_t>(1, out_ch / 2);
        chain.resize(2);
        chain[0].init(rng, in_ch, mid, variant, true, p);
        chain[1].init(rng, mid, out_ch, variant, true, p);
    } else {
        chain.resize(1);
        chain[0].init(rng, in_ch, out_ch, variant, true, p);
    }
    return chain;
}

}  // namespace

Network build(const ArchSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.neuron = spec.neuron;
    Rng rng(seed);

    std::size_t in_ch = spec.input_channels;
    std::size_t h = spec.input_height, w = spec.input_width;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const StageSpec& ss = spec.stages[i];
        const std::size_t factor = (i == 0) ? 4 : 2;
        NetworkStage stage;
        stage.channels = ss.channels;
        stage.embed.branch1 = make_branch(rng, in_ch, ss.channels, factor,
                                          branch_variant(ss.patch_embed, true), spec.neuron);
        stage.embed.branch2 = make_branch(rng, in_ch, ss.channels, factor,
                                          branch_variant(ss.patch_embed, false), spec.neuron);
        h /= factor;
        w /= factor;
        stage.out_h = h;
        stage.out_w = w;
        for (std::size_t b = 0; b < ss.blocks; ++b) {
            TokenMixerBlock mixer;
            mixer.init(rng, ss.channels, ss.token_mixer, ss.mixer_window, spec.neuron,
                       spec.shortcut);
            mixer.ssa_scale = spec.ssa_scale;
            stage.mixers.push_back(std::move(mixer));
            SmlpBlock mlp;
            mlp.init(rng, ss.channels, spec.mlp_expansion, spec.neuron, spec.shortcut);
            stage.mlps.push_back(std::move(mlp));
        }
        net.stages.push_back(std::move(stage));
        in_ch = ss.channels;
    }
    net.classifier.init(rng, in_ch, spec.num_classes);
    return net;
}

// ---- forward ----------------------------------------------------------------------

Graph::Value Network::forward_graph(Graph& g, const Tensor& input, bool training,
                                    SpikeMode mode, ForwardHooks& hooks) {
    Tensor frames;  // [T,B,C,H,W] drive currents
    if (input.rank() == 4) {
        const auto& s = input.shape();
        frames = Tensor({spec.timesteps, s[0], s[1], s[2], s[3]});
        const std::size_t chunk = input.numel();
        for (std::size_t t = 0; t < spec.timesteps; ++t)
            for (std::size_t i = 0; i < chunk; ++i) frames[t * chunk + i] = input[i];
    } else if (input.rank() == 5) {
        if (input.extent(0) != spec.timesteps) {
            throw std::invalid_argument("forward: input timestep extent " +
                                        std::to_string(input.extent(0)) +
                                        " does not match configured T " +
                                        std::to_string(spec.timesteps));
        }
        frames = input;
    } else {
        throw std::invalid_argument("forward: input must be [B,C,H,W] or [T,B,C,H,W], got " +
                                    input.shape_string());
    }
    if (frames.extent(2) != spec.input_channels || frames.extent(3) != spec.input_height ||
        frames.extent(4) != spec.input_width) {
        throw std::invalid_argument("forward: input geometry " + frames.shape_string() +
                                    " does not match configured " +
                                    std::to_string(spec.input_channels) + "x" +
                                    std::to_string(spec.input_height) + "x" +
                                    std::to_string(spec.input_width));
    }

    FlowSignal sig{g.constant(frames), SignalDomain::Membrane};
    for (std::size_t i = 0; i < stages.size(); ++i) {
        NetworkStage& stage = stages[i];
        const std::string stage_name = "stage" + std::to_string(i + 1);
        BlockContext ctx;
        ctx.stage = stage_name;
        ctx.training = training;
        ctx.spike_mode = mode;

        ctx.kind = "patch_embed";
        ctx.name = stage_name + ".embed";
        sig = stage.embed.forward(g, sig, hooks, ctx);
        for (std::size_t b = 0; b < stage.mixers.size(); ++b) {
            ctx.kind = "token_mix";
            ctx.name = stage_name + ".block" + std::to_string(b + 1) + ".mix";
            sig = stage.mixers[b].forward(g, sig, hooks, ctx);
            ctx.kind = "mlp";
            ctx.name = stage_name + ".block" + std::to_string(b + 1) + ".mlp";
            sig = stage.mlps[b].forward(g, sig, hooks, ctx);
        }
    }

    // Rate readout: fire the final membrane stream, pool tokens, classify per
    // timestep, then average logits over T.
    Graph::Value spikes = lif_over_time(g, sig.value, neuron, mode);
    hooks.record_transmission("head.spikes", spikes->value, SpikeDomain::Binary);
    if (hooks.energy) {
        LayerActivity act;
        act.layer = "head.classifier";
        act.stage = "head";
        act.kind = "classifier";
        act.flops = flops_linear(classifier.weight.extent(0), classifier.weight.extent(1), 1);
        if (!hooks.mac_charged) {
            act.mac = true;
            hooks.mac_charged = true;
        } else {
            act.fr = mean_value(spikes->value);
            act.multibit = sig.domain == SignalDomain::Ternary;
        }
        hooks.energy->push_back(std::move(act));
    }

    const std::size_t T = spikes->value.extent(0);
    std::vector<Graph::Value> per_t;
    per_t.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Graph::Value feat = g.global_avg_hw(g.select0(spikes, t));  // [B,C]
        Graph::Value logits_t =
            g.add_bias(g.matmul(feat, g.param(classifier.weight)), g.param(classifier.bias));
        per_t.push_back(logits_t);
    }
    return g.mean0(g.stack0(per_t));
}

Tensor Network::forward(const Tensor& input) {
    Graph g;
    ForwardHooks hooks;
    return forward_graph(g, input, false, SpikeMode::Hard, hooks)->value;
}

ForwardTrace Network::forward_traced(const Tensor& input, bool collect_energy,
                                     bool collect_audit) {
    Graph g;
    ForwardTrace trace;
    ForwardHooks hooks;
    if (collect_energy) hooks.energy = &trace.activities;
    if (collect_audit) hooks.audit = &trace.transmissions;
    trace.logits = forward_graph(g, input, false, SpikeMode::Hard, hooks)->value;
    return trace;
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (auto& stage : stages) {
        stage.embed.collect(out);
        for (std::size_t b = 0; b < stage.mixers.size(); ++b) {
            stage.mixers[b].collect(out);
            stage.mlps[b].collect(out);
        }
    }
    classifier.collect(out);
    return out;
}

std::vector<Tensor*> Network::state_tensors() {
    std::vector<Tensor*> out = parameters();
    auto add_bn = [&out](BatchNormLayer& bn) {
        out.push_back(&bn.state.running_mean);
        out.push_back(&bn.state.running_var);
    };
    for (auto& stage : stages) {
        for (auto& b : stage.embed.branch1) add_bn(b.bn);
        for (auto& b : stage.embed.branch2) add_bn(b.bn);
        for (std::size_t b = 0; b < stage.mixers.size(); ++b) {
            if (stage.mixers[b].kind == TokenMixKind::SSA) {
                add_bn(stage.mixers[b].bn_q);
                add_bn(stage.mixers[b].bn_k);
                add_bn(stage.mixers[b].bn_v);
            }
            add_bn(stage.mlps[b].bn1);
            add_bn(stage.mlps[b].bn2);
        }
    }
    return out;
}

std::size_t Network::param_count() {
    std::size_t n = 0;
    for (Tensor* t : parameters()) n += t->numel();
    return n;
}

// ---- encodings ----------------------------------------------------------------------

SpikeTensor encode_static(const Tensor& image, std::size_t T, const NeuronParams& params) {
    if (T < 1) throw std::invalid_argument("encode_static: T must be >= 1");
    if (image.rank() != 4) {
        throw std::invalid_argument("encode_static: image must be [B,C,H,W], got " +
                                    image.shape_string());
    }
    for (std::size_t i = 0; i < image.numel(); ++i) {
        if (image[i] < 0.0 || image[i] > 1.0) {
            throw std::invalid_argument("encode_static: pixel value " +
                                        std::to_string(image[i]) + " outside [0,1]");
        }
    }
    const auto& s = image.shape();
    Tensor frames({T, s[0], s[1], s[2], s[3]});
    const std::size_t chunk = image.numel();
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < chunk; ++i) frames[t * chunk + i] = image[i];
    return {run_sequence(params, frames).spikes, SpikeDomain::Binary};
}

void EventStream::sort_by_time() {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
}

Tensor bin_events(const EventStream& stream, std::size_t alpha, std::size_t target_T,
                  std::size_t h, std::size_t w, bool remove_hot_pixels) {
    if (alpha < 1) throw std::invalid_argument("bin_events: alpha must be >= 1");
    if (target_T < 1) throw std::invalid_argument("bin_events: target_T must be >= 1");
    Tensor frames({target_T, 2, h, w}, 0.0);
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const Event& e = stream.events[i];
        if (e.x < 0 || e.y < 0 || e.x >= static_cast<std::int64_t>(w) ||
            e.y >= static_cast<std::int64_t>(h)) {
            throw std::invalid_argument("bin_events: event " + std::to_string(i) +
                                        " at (" + std::to_string(e.x) + "," +
                                        std::to_string(e.y) + ") is outside " +
                                        std::to_string(w) + "x" + std::to_string(h));
        }
        if (e.p != 0 && e.p != 1) {
            throw std::invalid_argument("bin_events: event " + std::to_string(i) +
                                        " has polarity " + std::to_string(e.p));
        }
        if (e.t < 0 || e.t >= static_cast<std::int64_t>(alpha * target_T)) {
            throw std::invalid_argument("bin_events: event " + std::to_string(i) +
                                        " raw bin " + std::to_string(e.t) +
                                        " is outside [0," +
                                        std::to_string(alpha * target_T) + ")");
        }
        const std::size_t frame = static_cast<std::size_t>(e.t) / alpha;
        frames[((frame * 2 + static_cast<std::size_t>(e.p)) * h +
                static_cast<std::size_t>(e.y)) *
                   w +
               static_cast<std::size_t>(e.x)] += 1.0;
    }
    if (remove_hot_pixels) {
        // Pixel activity summed over frames and polarities.
        std::vector<double> totals(h * w, 0.0);
        for (std::size_t t = 0; t < target_T; ++t)
            for (std::size_t p = 0; p < 2; ++p)
                for (std::size_t i = 0; i < h * w; ++i)
                    totals[i] += frames[((t * 2 + p) * h * w) + i];
        double mean = 0.0;
        for (double v : totals) mean += v;
        mean /= static_cast<double>(totals.size());
        double var = 0.0;
        for (double v : totals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(totals.size());
        const double cut = mean + 5.0 * std::sqrt(var);
        for (std::size_t i = 0; i < h * w; ++i) {
            if (totals[i] > cut) {
                for (std::size_t t = 0; t < target_T; ++t)
                    for (std::size_t p = 0; p < 2; ++p) frames[((t * 2 + p) * h * w) + i] = 0.0;
            }
        }
    }
    return frames;
}

// ---- state I/O ------------------------------------------------------------------------

void save_state(Network& net, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_state: cannot open " + path);
    const auto tensors = net.state_tensors();
    f << "spikelab-state 1\n" << tensors.size() << "\n";
    char buf[40];
    for (Tensor* t : tensors) {
        f << t->numel();
        for (std::size_t i = 0; i < t->numel(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", (*t)[i]);
            f << " " << buf;
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_state: write to " + path + " failed");
}

void load_state(Network& net, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_state: cannot open " + path);
    std::string magic;
    int version = 0;
    f >> magic >> version;
    if (magic != "spikelab-state" || version != 1) {
        throw std::runtime_error("load_state: " + path + " is not a spikelab state file");
    }
    std::size_t count = 0;
    f >> count;
    auto tensors = net.state_tensors();
    if (count != tensors.size()) {
        throw std::runtime_error("load_state: state holds " + std::to_string(count) +
                                 " tensors, network expects " +
                                 std::to_string(tensors.size()));
    }
    for (Tensor* t : tensors) {
        std::size_t n = 0;
        f >> n;
        if (n != t->numel()) {
            throw std::runtime_error("load_state: tensor extent mismatch (" +
                                     std::to_string(n) + " vs " +
                                     std::to_string(t->numel()) + ")");
        }
        for (std::size_t i = 0; i < n; ++i) f >> (*t)[i];
    }
    if (!f) throw std::runtime_error("load_state: truncated state file " + path);
}

}  // namespace spikelab

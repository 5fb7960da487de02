// Acceptance suite: one pass/fail line per criterion, each with its wall-time
// budget. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "spikelab/autograd.hpp"
#include "spikelab/energy.hpp"
#include "spikelab/freq.hpp"
#include "spikelab/model.hpp"
#include "spikelab/neuron.hpp"
#include "spikelab/train.hpp"
#include "support/test_support.hpp"

using namespace spikelab;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<bool(std::string&)> run;
};

#define REQUIRE_MSG(cond, msg)                         \
    do {                                               \
        if (!(cond)) {                                 \
            std::ostringstream os_;                    \
            os_ << msg;                                \
            detail = os_.str();                        \
            return false;                              \
        }                                              \
    } while (0)

// ---- criterion 1: transfer-function correctness ------------------------------

bool run_transfer(std::string& detail) {
    for (int bi = 0; bi <= 9; ++bi) {
        const double beta = 0.1 * bi;
        const TransferFunction tf = lif_transfer(beta);
        REQUIRE_MSG(std::fabs(magnitude_response(tf, 0.0) - 1.0) <= 1e-12,
                    "DC gain != 1 at beta " << beta);
        const double want_pi = (1.0 - beta) / (1.0 + beta);
        REQUIRE_MSG(std::fabs(magnitude_response(tf, kPi) - want_pi) <= 1e-12,
                    "pi-gain mismatch at beta " << beta);
        for (std::size_t depth : {1u, 2u, 4u}) {
            const TransferFunction layered =
                layered_transfer(tf, depth, std::vector<double>(depth, 1.0));
            double prev = magnitude_response(layered, 0.0);
            for (std::size_t i = 1; i < 256; ++i) {
                const double w = kPi * static_cast<double>(i) / 255.0;
                const double mag = magnitude_response(layered, w);
                REQUIRE_MSG(mag <= prev, "not monotone at beta " << beta << " depth "
                                                                 << depth);
                if (beta > 0.0) {
                    REQUIRE_MSG(mag < prev, "not strictly decreasing at beta "
                                                << beta << " depth " << depth);
                }
                prev = mag;
            }
        }
    }
    const double at_pi_025 = magnitude_response(lif_transfer(0.25), kPi);
    REQUIRE_MSG(std::fabs(at_pi_025 - 0.6) <= 1e-12, "beta 0.25 at pi is not 0.6");
    detail = "10 betas x depths {1,2,4}, 256-point grids";
    return true;
}

// ---- criterion 2: IF pole ------------------------------------------------------

bool run_if_pole(std::string& detail) {
    const TransferFunction tf = if_transfer();
    REQUIRE_MSG(std::fabs(magnitude_response(tf, kPi) - 0.5) <= 1e-12,
                "|H(pi)| != 0.5");
    const double near_dc = magnitude_response(tf, 1e-7);
    REQUIRE_MSG(near_dc > 1e6, "no divergence toward DC: " << near_dc);
    detail = "pole at z=1: |H(pi)|=0.5, |H(1e-7)|>1e6";
    return true;
}

// ---- criterion 3: Fig-3 reproduction property ----------------------------------

bool run_fig3(std::string& detail) {
    const NeuronParams lif = three_sine_default_neuron();
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto l = three_sine_experiment(ActivationKind::LIF, lif, seed, 1000.0, 1.0);
        const auto r = three_sine_experiment(ActivationKind::ReLU, lif, seed, 1000.0, 1.0);
        const double rl = hf_energy_ratio(l.weighted_spectrum, 150.0);
        const double rr = hf_energy_ratio(r.weighted_spectrum, 150.0);
        if (rl < rr) ++wins;
    }
    std::ostringstream os;
    os << "LIF hf-ratio strictly below ReLU in " << wins << "/20 seeds";
    detail = os.str();
    return wins >= 18;
}

// ---- criterion 4: neuron oracle equivalence -------------------------------------

bool run_neuron_oracle(std::string& detail) {
    Rng rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        NeuronParams p;
        p.kind = trial % 3 == 0 ? NeuronKind::IF : NeuronKind::LIF;
        p.beta = rng.uniform(0.0, 0.999);
        p.v_th = rng.uniform(0.05, 2.0);
        const std::size_t T = 1 + rng.index(32);
        const std::size_t n = 1 + rng.index(6);
        Tensor currents({T, n});
        std::vector<std::vector<double>> ref(T, std::vector<double>(n));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < n; ++i) {
                const double v = rng.normal(0.4, 1.0);
                currents[t * n + i] = v;
                ref[t][i] = v;
            }
        const SequenceResult got = run_sequence(p, currents);
        const auto want = testsupport::reference_lif(p, ref);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < n; ++i) {
                REQUIRE_MSG(got.spikes[t * n + i] == want.spikes[t][i],
                            "spike mismatch in case " << trial);
                REQUIRE_MSG(got.v_trace[t * n + i] == want.membrane[t][i],
                            "membrane mismatch in case " << trial);
            }
    }
    detail = "1000 random (beta, v_th, T<=32) cases bit-identical";
    return true;
}

// ---- criterion 5: gradient checks ------------------------------------------------

using Builder = std::function<Graph::Value(Graph&, Graph::Value)>;

Tensor graph_grad(const Builder& build, const Tensor& x) {
    Graph g;
    Graph::Value in = g.leaf(x, true);
    g.backward(build(g, in));
    return in->ensure_grad();
}

Tensor fd_grad(const Builder& build, const Tensor& x, double eps) {
    return finite_diff_grad(
        [&](const Tensor& probe) {
            Graph g;
            return build(g, g.leaf(probe, false))->value[0];
        },
        x, eps);
}

bool gradcheck(const Builder& build, const Tensor& x, double rel, double eps = 1e-4) {
    return testsupport::grads_match(graph_grad(build, x), fd_grad(build, x, eps), rel);
}

bool run_gradients(std::string& detail) {
    Rng rng(500);
    std::size_t cases = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = testsupport::random_tensor(rng, {2, 3, 4, 4});
        const Tensor w = testsupport::random_tensor(rng, {2, 3, 3, 3});
        const Tensor dw = testsupport::random_tensor(rng, {3, 3, 3});
        const Tensor mat = testsupport::random_tensor(rng, {4, 5});
        const Tensor mat_x = testsupport::random_tensor(rng, {3, 4});
        const Tensor bias = testsupport::random_tensor(rng, {4});
        const Tensor gamma = testsupport::random_tensor(rng, {3}, 0.5, 1.5);
        const Tensor mask = testsupport::random_tensor(rng, x.shape());

        auto weighted = [&](Graph& g, Graph::Value v) {
            return g.sum(g.mul(v, g.constant(mask)));
        };

        const std::vector<Builder> builders = {
            [&](Graph& g, Graph::Value in) { return weighted(g, g.add(in, g.constant(mask))); },
            [&](Graph& g, Graph::Value in) { return weighted(g, g.sub(in, g.constant(mask))); },
            [&](Graph& g, Graph::Value in) { return weighted(g, g.mul(in, g.constant(mask))); },
            [&](Graph& g, Graph::Value in) { return weighted(g, g.scale(in, -2.3)); },
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.add_bias(g.reshape(in, {24, 4}), g.constant(bias)));
            },
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.matmul(g.reshape(in, {6, 4, 4}), g.constant(mat.reshaped({4, 5}))));
            },
            [&](Graph& g, Graph::Value in) { return g.sum(g.conv2d(in, g.constant(w), 1, 1)); },
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.depthwise_conv2d(in, g.constant(dw)));
            },
            [&](Graph& g, Graph::Value in) {
                BatchNormState state;
                return weighted(
                    g, g.batch_norm(in, g.constant(gamma),
                                    g.constant(Tensor::zeros({3})), 1, true, &state));
            },
            [&](Graph& g, Graph::Value in) { return g.sum(g.max_pool(in, 2, 2)); },
            [&](Graph& g, Graph::Value in) {
                Graph::Value p = g.avg_pool(in, 3, 1, 1);
                Tensor m2(p->value.shape());
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::sin(static_cast<double>(i));
                return g.sum(g.mul(p, g.constant(m2)));
            },
            [&](Graph& g, Graph::Value in) {
                return g.sum(g.spike(in, 0.4, 2.0, SpikeMode::Smooth));
            },
            [&](Graph& g, Graph::Value in) { return weighted(g, g.mean0(g.stack0({in, in}))); },
            [&](Graph& g, Graph::Value in) {
                Tensor m2({2, 16, 3});
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::cos(static_cast<double>(i));
                return g.sum(g.mul(g.to_tokens(in), g.constant(m2)));
            },
            [&](Graph& g, Graph::Value in) {
                Tensor m2({2, 3});
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::sin(0.7 * static_cast<double>(i) + 0.2);
                return g.sum(g.mul(g.global_avg_hw(in), g.constant(m2)));
            },
            [&](Graph& g, Graph::Value in) {
                Tensor m2({3, 4, 4});
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::cos(1.3 * static_cast<double>(i));
                return g.sum(g.mul(g.select0(in, 1), g.constant(m2)));
            },
            [&](Graph& g, Graph::Value in) {
                Tensor m2({2, 3, 4, 4});
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::sin(0.9 * static_cast<double>(i));
                Graph::Value t = g.transpose_last2(g.transpose_last2(in));
                return g.sum(g.mul(t, g.constant(m2)));
            },
            [&](Graph& g, Graph::Value in) {
                Tensor m2({2, 3, 4, 4});
                for (std::size_t i = 0; i < m2.numel(); ++i)
                    m2[i] = std::cos(0.4 * static_cast<double>(i) + 1.0);
                Graph::Value back = g.from_tokens(g.to_tokens(in), 4, 4);
                return g.sum(g.mul(back, g.constant(m2)));
            },
        };
        for (const Builder& b : builders) {
            if (!gradcheck(b, x, 1e-4)) {
                detail = "op gradient check failed at trial " + std::to_string(trial);
                return false;
            }
            ++cases;
        }
        // matmul right operand and cross entropy on their natural shapes
        if (!gradcheck(
                [&](Graph& g, Graph::Value in) {
                    return g.sum(g.matmul(g.constant(mat_x), in));
                },
                testsupport::random_tensor(rng, {4, 5}), 1e-4)) {
            detail = "matmul rhs gradient check failed";
            return false;
        }
        if (!gradcheck(
                [&](Graph& g, Graph::Value in) {
                    return g.cross_entropy_smoothed(in, {0, 2, 1}, 0.1);
                },
                testsupport::random_tensor(rng, {3, 4}), 1e-4)) {
            detail = "cross-entropy gradient check failed";
            return false;
        }
        cases += 2;
    }

    // smooth-surrogate path through a 2-layer spiking toy net at 1e-3
    Rng rng2(501);
    Tensor w1({2, 1, 3, 3}), w2({2, 2, 3, 3});
    for (std::size_t i = 0; i < w1.numel(); ++i) w1[i] = rng2.normal(0.0, 0.4);
    for (std::size_t i = 0; i < w2.numel(); ++i) w2[i] = rng2.normal(0.0, 0.4);
    const Tensor img = testsupport::random_tensor(rng2, {1, 1, 6, 6}, 0.0, 1.0);
    const Builder spiking_net = [&](Graph& g, Graph::Value win) {
        Graph::Value v = g.conv2d(g.constant(img), win, 1, 1);
        v = g.spike(v, 0.4, 2.0, SpikeMode::Smooth);
        v = g.conv2d(v, g.constant(w2), 1, 1);
        v = g.spike(v, 0.4, 2.0, SpikeMode::Smooth);
        return g.sum(v);
    };
    if (!testsupport::grads_match(graph_grad(spiking_net, w1),
                                  fd_grad(spiking_net, w1, 1e-5), 1e-3)) {
        detail = "smooth-surrogate 2-layer net gradient check failed";
        return false;
    }
    std::ostringstream os;
    os << cases << " op cases at rel 1e-4 plus the smooth spiking stack at 1e-3";
    detail = os.str();
    return true;
}

// ---- criterion 6: binarity and shortcut semantics -------------------------------

ArchSpec three_stage_toy() {
    ArchSpec spec;
    spec.stages = {
        {PatchEmbedVariant::Orig, TokenMixKind::Identity, 3, 1, 4},
        {PatchEmbedVariant::Max, TokenMixKind::DWC, 3, 1, 8},
        {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 1, 16},
    };
    spec.timesteps = 2;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = 32;
    spec.input_width = 32;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.5;
    return spec;
}

bool run_binarity(std::string& detail) {
    Network net = build(three_stage_toy(), 6);
    Rng rng(60);
    std::size_t transmissions = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Tensor img({1, 1, 32, 32});
        for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
        const ForwardTrace trace = net.forward_traced(img, false, true);
        REQUIRE_MSG(!trace.transmissions.empty(), "no transmissions recorded");
        for (const TransmissionRecord& rec : trace.transmissions) {
            REQUIRE_MSG(rec.strictly_binary,
                        "non-binary transmission '" << rec.name << "' at input " << rep);
            REQUIRE_MSG(rec.domain == SpikeDomain::Binary,
                        "unexpected ternary tag on '" << rec.name << "'");
        }
        transmissions += trace.transmissions.size();
    }

    // flip the final block's shortcut to pre-spike
    net.stages.back().mlps.back().shortcut_kind = ShortcutKind::PreSpike;
    bool saw_two = false, saw_ternary_tag = false;
    for (int rep = 0; rep < 100 && !(saw_two && saw_ternary_tag); ++rep) {
        Tensor img({1, 1, 32, 32});
        for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
        const ForwardTrace trace = net.forward_traced(img, false, true);
        for (const TransmissionRecord& rec : trace.transmissions) {
            if (rec.domain == SpikeDomain::Ternary) {
                saw_ternary_tag = true;
                if (rec.max_value == 2.0) saw_two = true;
            }
        }
    }
    REQUIRE_MSG(saw_ternary_tag, "pre-spike flip produced no ternary tag");
    REQUIRE_MSG(saw_two, "pre-spike flip never produced a value of 2");
    std::ostringstream os;
    os << transmissions << " membrane-net transmissions all {0,1}; pre-spike flip ternary";
    detail = os.str();
    return true;
}

// ---- criterion 7: energy arithmetic ----------------------------------------------

bool run_energy(std::string& detail) {
    REQUIRE_MSG(kEnergyMacPJ == 4.6 && kEnergyAcPJ == 0.9, "constants drifted");
    ArchSpec spec;
    spec.stages = {
        {PatchEmbedVariant::Orig, TokenMixKind::DWC, 3, 1, 4},
        {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 1, 8},
    };
    spec.timesteps = 4;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = 16;
    spec.input_width = 16;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.5;
    Network net = build(spec, 7);

    Rng rng(70);
    Tensor img({2, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    const EnergyReport report = instrument(net, img);
    REQUIRE_MSG(report.rows.size() >= 10, "too few report rows");
    double hand_total = 0.0;
    for (const EnergyRow& r : report.rows) {
        const double sops = r.fr * static_cast<double>(r.T) * static_cast<double>(r.flops);
        REQUIRE_MSG(r.sops == sops, "row '" << r.layer << "' SOPs != fr*T*FLOPs");
        const double energy = r.mac ? kEnergyMacPJ * static_cast<double>(r.flops)
                                    : kEnergyAcPJ * r.sops;
        REQUIRE_MSG(r.energy_pj == energy, "row '" << r.layer << "' energy rule broken");
        hand_total += r.energy_pj;
    }
    REQUIRE_MSG(report.total_pj() == hand_total, "total != hand-computed row sum");
    double stage_sum = 0.0;
    for (const StageComponentTotal& t : report.breakdown()) stage_sum += t.energy_pj;
    REQUIRE_MSG(std::fabs(stage_sum - hand_total) < 1e-9, "stage breakdown leaks energy");

    const EnergyReport zero = instrument(net, Tensor({2, 1, 16, 16}, 0.0));
    const double want = kEnergyMacPJ * static_cast<double>(zero.rows.front().flops);
    REQUIRE_MSG(zero.total_pj() == want, "zero-input energy != E_MAC * first-layer FLOPs");
    std::ostringstream os;
    os << report.rows.size() << " rows exact; zero-input = E_MAC x FLOPs^1";
    detail = os.str();
    return true;
}

// ---- criterion 8: pooling-ablation ordering ---------------------------------------

bool run_pooling_ablation(std::string& detail) {
    AblationOptions options;
    options.timesteps = 2;
    options.train_size = 800;
    options.test_size = 400;
    options.train.epochs = 9;
    options.train.batch_size = 32;
    options.train.learning_rate = 5e-3;
    options.train.label_smoothing = 0.1;
    options.train.schedule = LrSchedule::Cosine;
    const AblationReport report = pooling_ablation({1, 2, 3, 4, 5}, options);
    std::size_t wins = 0;
    std::ostringstream os;
    for (const AblationSeedResult& r : report.seeds) {
        if (r.acc_a >= r.acc_b) ++wins;
        os << " s" << r.seed << ":" << r.acc_a << "/" << r.acc_b;
    }
    detail = "max>=avg in " + std::to_string(wins) + "/5 seeds;" + os.str();
    return wins >= 4;
}

// ---- criterion 9: architecture shape ladder ----------------------------------------

bool run_shape_ladder(std::string& detail) {
    Network net = build(ArchSpec::preset("cifar"), 9);
    REQUIRE_MSG(net.stages.size() == 3, "expected 3 stages");
    REQUIRE_MSG(net.stages[0].out_h == 8 && net.stages[0].out_w == 8, "stage 1 extent");
    REQUIRE_MSG(net.stages[1].out_h == 4 && net.stages[1].out_w == 4, "stage 2 extent");
    REQUIRE_MSG(net.stages[2].out_h == 2 && net.stages[2].out_w == 2, "stage 3 extent");
    REQUIRE_MSG(net.stages[1].channels == 2 * net.stages[0].channels,
                "stage 2 does not double channels");
    REQUIRE_MSG(net.stages[2].channels == 2 * net.stages[1].channels,
                "stage 3 does not double channels");
    detail = "32x32 -> 8/4/2 spatial, channels x2 per later stage";
    return true;
}

// ---- criterion 10: event binning conservation ---------------------------------------

bool run_event_binning(std::string& detail) {
    Rng rng(100);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t alpha = 1 + rng.index(4);
        const std::size_t T = 1 + rng.index(8);
        const std::size_t h = 2 + rng.index(14), w = 2 + rng.index(14);
        const std::size_t n = rng.index(120);
        EventStream stream;
        for (std::size_t i = 0; i < n; ++i) {
            stream.events.push_back({static_cast<std::int64_t>(rng.index(w)),
                                     static_cast<std::int64_t>(rng.index(h)),
                                     static_cast<std::int64_t>(rng.index(alpha * T)),
                                     static_cast<int>(rng.index(2))});
        }
        const Tensor frames = bin_events(stream, alpha, T, h, w);
        double total = 0.0;
        for (std::size_t i = 0; i < frames.numel(); ++i) total += frames[i];
        REQUIRE_MSG(total == static_cast<double>(n),
                    "count not conserved in stream " << rep);
    }
    // single-event placement
    EventStream one;
    one.events.push_back({3, 5, 2, 1});
    const Tensor f = bin_events(one, 1, 4, 8, 8);
    REQUIRE_MSG(f.at({2, 1, 5, 3}) == 1.0, "single event landed at the wrong cell");
    detail = "1000 random streams conserve counts; placement matches coordinates";
    return true;
}

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "transfer-function correctness", 1.0, run_transfer},
        {2, "IF pole placement", 1.0, run_if_pole},
        {3, "Fig-3 low-pass reproduction", 30.0, run_fig3},
        {4, "neuron oracle equivalence", 10.0, run_neuron_oracle},
        {5, "gradient checks", 60.0, run_gradients},
        {6, "binarity and shortcut semantics", 10.0, run_binarity},
        {7, "energy arithmetic", 10.0, run_energy},
        {8, "pooling-ablation ordering", 900.0, run_pooling_ablation},
        {9, "architecture shape ladder", 1.0, run_shape_ladder},
        {10, "event binning conservation", 5.0, run_event_binning},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        const bool in_budget = elapsed < c.budget_s;
        const bool pass = ok && in_budget;
        std::printf("[%s] criterion %2d: %s (%.2fs %s %.0fs)%s%s\n",
                    pass ? "PASS" : "FAIL", c.id, c.name.c_str(), elapsed,
                    in_budget ? "<" : ">=", c.budget_s, detail.empty() ? "" : " -- ",
                    detail.c_str());
        if (!pass) ++failures;
    }
    return failures;
}

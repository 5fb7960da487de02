#include "doctest.h"

#include <stdexcept>

#include <cmath>

#include "spikelab/energy.hpp"
#include "spikelab/model.hpp"
#include "spikelab/rng.hpp"
#include "support/test_support.hpp"

using namespace spikelab;
using testsupport::close;

TEST_CASE("flops formulas") {
    LayerDescriptor conv;
    conv.kind = LayerDescriptor::Kind::Conv;
    conv.k = 1;
    conv.c_in = 1;
    conv.c_out = 1;
    conv.h_out = 1;
    conv.w_out = 1;
    CHECK(flops(conv) == 2);  // one multiply + one add

    conv.k = 3;
    conv.c_in = 16;
    conv.c_out = 32;
    conv.h_out = 8;
    conv.w_out = 8;
    CHECK(flops(conv) == 589824);

    LayerDescriptor pool;
    pool.kind = LayerDescriptor::Kind::Pool;
    CHECK(flops(pool) == 0);
    LayerDescriptor ident;
    ident.kind = LayerDescriptor::Kind::Identity;
    CHECK(flops(ident) == 0);

    LayerDescriptor lin;
    lin.kind = LayerDescriptor::Kind::Linear;
    lin.d_in = 4;
    lin.d_out = 3;
    lin.tokens = 5;
    CHECK(flops(lin) == 120);

    LayerDescriptor dwc;
    dwc.kind = LayerDescriptor::Kind::DWC;
    dwc.k = 3;
    dwc.c_in = 8;
    dwc.h_out = 4;
    dwc.w_out = 4;
    CHECK(flops(dwc) == 2 * 9 * 8 * 16);

    LayerDescriptor unresolved;
    unresolved.kind = LayerDescriptor::Kind::Conv;
    CHECK_THROWS_AS(flops(unresolved), std::invalid_argument);
}

TEST_CASE("sops is the exact product and rejects broken rates") {
    CHECK(sops(100, 0.5, 4) == 200.0);
    CHECK(sops(12345, 0.0, 7) == 0.0);
    CHECK(sops(77, 1.0, 1) == 77.0);
    CHECK_THROWS_AS(sops(10, 1.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(sops(10, -0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(sops(10, 0.5, 0), std::invalid_argument);
}

TEST_CASE("energy formulas use the 4.6/0.9 pJ constants") {
    CHECK(kEnergyMacPJ == 4.6);
    CHECK(kEnergyAcPJ == 0.9);
    // 1000 MAC FLOPs + 2000 SOPs = 4600 + 1800 pJ
    CHECK(close(energy_snn_mj(1000, {1500.0, 500.0}), 6400.0 * 1e-9));
    CHECK(energy_snn_mj(0, {}) == 0.0);
    CHECK(close(energy_ann_mj(1000000000), 4.6));
    CHECK(energy_ann_mj(0) == 0.0);
}

TEST_CASE("ANN cost dominates whenever fr*T stays under e_mac/e_ac") {
    // per-layer comparison: E_AC * fr*T*FLOPs <= E_MAC * FLOPs iff fr*T <= 4.6/0.9
    const double bound = kEnergyMacPJ / kEnergyAcPJ;
    for (double fr : {0.1, 0.5, 1.0}) {
        for (std::size_t T : {1u, 4u, 5u}) {
            const double spiking = kEnergyAcPJ * sops(1000, fr, T);
            const double ann = kEnergyMacPJ * 1000.0;
            if (fr * static_cast<double>(T) <= bound) {
                CHECK(spiking <= ann);
            } else {
                CHECK(spiking > ann);
            }
        }
    }
}

namespace {

ArchSpec tiny_spec(ShortcutKind shortcut = ShortcutKind::Membrane) {
    ArchSpec spec;
    spec.stages = {
        {PatchEmbedVariant::Orig, TokenMixKind::DWC, 3, 1, 4},
        {PatchEmbedVariant::Max, TokenMixKind::SSA, 3, 1, 8},
    };
    spec.timesteps = 2;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = 16;
    spec.input_width = 16;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.5;
    spec.shortcut = shortcut;
    return spec;
}

}  // namespace

TEST_CASE("instrument: zero input charges only the first-layer MACs") {
    Network net = build(tiny_spec(), 21);
    const EnergyReport report = instrument(net, Tensor({2, 1, 16, 16}, 0.0));
    REQUIRE(!report.rows.empty());
    CHECK(report.rows.front().mac);
    CHECK(report.rows.front().flops > 0);
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        CHECK(!report.rows[i].mac);
        CHECK(report.rows[i].fr == 0.0);
        CHECK(report.rows[i].sops == 0.0);
        CHECK(report.rows[i].energy_pj == 0.0);
    }
    CHECK(report.total_pj() ==
          kEnergyMacPJ * static_cast<double>(report.rows.front().flops));
}

TEST_CASE("instrument: row arithmetic and totals are exact") {
    Network net = build(tiny_spec(), 22);
    Rng rng(23);
    Tensor img({2, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    const EnergyReport report = instrument(net, img);
    REQUIRE(report.rows.size() > 4);
    double expected_total = 0.0;
    for (const EnergyRow& r : report.rows) {
        CHECK(r.T == 2);
        CHECK(r.sops == r.fr * static_cast<double>(r.T) * static_cast<double>(r.flops));
        const double expected_energy =
            r.mac ? kEnergyMacPJ * static_cast<double>(r.flops) : kEnergyAcPJ * r.sops;
        CHECK(r.energy_pj == expected_energy);
        expected_total += r.energy_pj;
    }
    CHECK(report.total_pj() == expected_total);

    // the fr=0.25 example row: T=4, FLOPs 1e6 -> SOPs 1e6 -> 0.9e6 pJ = 9e-4 mJ
    const double s = sops(1000000, 0.25, 4);
    CHECK(s == 1.0e6);
    CHECK(close(kEnergyAcPJ * s * kMJPerPJ, 9e-4));

    // stage totals equal row sums
    double stage1 = 0.0;
    for (const EnergyRow& r : report.rows) {
        if (r.stage == "stage1") stage1 += r.energy_pj;
    }
    CHECK(report.stage_total_pj("stage1") == stage1);

    // breakdown covers every row exactly once
    double breakdown_total = 0.0;
    for (const StageComponentTotal& t : report.breakdown()) breakdown_total += t.energy_pj;
    CHECK(close(breakdown_total, expected_total, 1e-12));
}

TEST_CASE("instrument: raising firing never lowers the spiking energy") {
    // same net, brighter input drives more spikes
    Network net = build(tiny_spec(), 24);
    const EnergyReport dim = instrument(net, Tensor({1, 1, 16, 16}, 0.1));
    const EnergyReport bright = instrument(net, Tensor({1, 1, 16, 16}, 1.0));
    CHECK(bright.total_pj() >= dim.total_pj());
}

TEST_CASE("instrument flags multi-bit transmission behind pre-spike shortcuts") {
    ArchSpec spec;
    // single stage, two blocks, all pre-spike: the ternary stream stays
    // inside the stage
    spec.stages = {{PatchEmbedVariant::Orig, TokenMixKind::DWC, 3, 2, 6}};
    spec.timesteps = 2;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = 16;
    spec.input_width = 16;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.35;
    spec.shortcut = ShortcutKind::PreSpike;
    Network net = build(spec, 25);
    const EnergyReport report = instrument(net, Tensor({2, 1, 16, 16}, 0.9));
    CHECK(report.multibit);
    bool saw_multibit_row = false;
    for (const EnergyRow& r : report.rows) saw_multibit_row |= r.multibit;
    CHECK(saw_multibit_row);
}

TEST_CASE("energy report serialization round-trips") {
    Network net = build(tiny_spec(), 26);
    Rng rng(27);
    Tensor img({1, 1, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    const EnergyReport report = instrument(net, img);

    const EnergyReport via_json = report_from_json(report_to_json(report));
    CHECK(via_json == report);

    const EnergyReport via_csv = report_from_csv(report_to_csv(report));
    REQUIRE(via_csv.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(via_csv.rows[i].layer == report.rows[i].layer);
        CHECK(via_csv.rows[i].stage == report.rows[i].stage);
        CHECK(via_csv.rows[i].kind == report.rows[i].kind);
        CHECK(via_csv.rows[i].flops == report.rows[i].flops);
        CHECK(via_csv.rows[i].fr == report.rows[i].fr);
        CHECK(via_csv.rows[i].T == report.rows[i].T);
        CHECK(via_csv.rows[i].sops == report.rows[i].sops);
        CHECK(via_csv.rows[i].energy_pj == report.rows[i].energy_pj);
    }
    CHECK(via_csv.rows.front().mac);

    CHECK_THROWS_AS(report_from_csv("bad header\n"), std::invalid_argument);
}

TEST_CASE("mJ display formatting keeps four significant digits") {
    CHECK(format_mj(15.1337) == "15.13");
    CHECK(format_mj(0.00123456) == "0.001235");
    CHECK(format_mj(0.0) == "0");
}

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spikelab/tensor.hpp"

namespace spikelab {

class Network;

// 45nm process constants: one multiply-accumulate vs one accumulate.
inline constexpr double kEnergyMacPJ = 4.6;
inline constexpr double kEnergyAcPJ = 0.9;
inline constexpr double kMJPerPJ = 1e-9;

/// Weight-bearing layer descriptor for FLOP counting. Pooling and neuron
/// layers carry no MACs and count as zero.
struct LayerDescriptor {
    enum class Kind { Conv, Linear, DWC, Pool, Neuron, Identity };
    Kind kind = Kind::Identity;
    std::size_t k = 1;        // conv/dwc window
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t h_out = 0;    // spatial extent of the produced map
    std::size_t w_out = 0;
    std::size_t d_in = 0;     // linear
    std::size_t d_out = 0;
    std::size_t tokens = 0;
};

std::size_t flops(const LayerDescriptor& layer);

std::size_t flops_conv(std::size_t k, std::size_t c_in, std::size_t c_out,
                       std::size_t h_out, std::size_t w_out);
std::size_t flops_linear(std::size_t d_in, std::size_t d_out, std::size_t tokens);
std::size_t flops_dwc(std::size_t k, std::size_t c, std::size_t h, std::size_t w);

/// SOPs(l) = fr * T * FLOPs(l). fr outside [0,1] signals broken binarity
/// upstream and throws.
double sops(std::size_t flops_l, double fr, std::size_t T);

/// E_SNN = E_MAC * first-layer FLOPs + E_AC * sum(SOPs), in millijoule.
double energy_snn_mj(std::size_t first_layer_flops, const std::vector<double>& spiking_sops);

/// E_ANN = E_MAC * FLOPs, in millijoule.
double energy_ann_mj(std::size_t total_flops);

struct EnergyRow {
    std::string layer;
    std::string stage;
    std::string kind;  // patch_embed | token_mix | mlp | classifier
    std::size_t flops = 0;
    double fr = 0.0;
    std::size_t T = 1;
    double sops = 0.0;       // fr * T * flops
    double energy_pj = 0.0;  // mac row: E_MAC*flops; spiking rows: E_AC*sops
    bool mac = false;
    bool multibit = false;

    bool operator==(const EnergyRow&) const = default;
};

struct StageComponentTotal {
    std::string stage;
    std::string kind;
    double energy_pj = 0.0;
};

struct EnergyReport {
    std::size_t timesteps = 1;
    double e_mac_pj = kEnergyMacPJ;
    double e_ac_pj = kEnergyAcPJ;
    bool multibit = false;
    std::vector<EnergyRow> rows;

    double total_pj() const;
    double total_mj() const { return total_pj() * kMJPerPJ; }
    double stage_total_pj(const std::string& stage) const;
    /// Table-style stage x component breakdown, rows in first-seen order.
    std::vector<StageComponentTotal> breakdown() const;

    bool operator==(const EnergyReport&) const = default;
};

/// Runs a forward pass on `input` (static [B,C,H,W] or time-resolved
/// [T,B,C,H,W]) and assembles the per-layer report. The first conv of the
/// first patch-embed branch is the MAC-charged encoder layer; everything
/// downstream is charged per accumulate, with value-2 spikes counting twice.
EnergyReport instrument(Network& net, const Tensor& input);

std::string report_to_csv(const EnergyReport& report);
/// Rows-only view: the mac flag is restored positionally (first row) and the
/// report-level flags come back from the JSON form, which is lossless.
EnergyReport report_from_csv(const std::string& csv);
std::string report_to_json(const EnergyReport& report);
EnergyReport report_from_json(const std::string& json_text);

/// Four-significant-digit mJ formatting used in human-readable summaries.
std::string format_mj(double mj);

}  // namespace spikelab

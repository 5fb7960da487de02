#include "spikelab/energy.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "spikelab/model.hpp"

namespace spikelab {

std::size_t flops_conv(std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t h_out,
                       std::size_t w_out) {
    return 2 * k * k * c_in * c_out * h_out * w_out;
}

std::size_t flops_linear(std::size_t d_in, std::size_t d_out, std::size_t tokens) {
    return 2 * d_in * d_out * tokens;
}

std::size_t flops_dwc(std::size_t k, std::size_t c, std::size_t h, std::size_t w) {
    return 2 * k * k * c * h * w;
}

std::size_t flops(const LayerDescriptor& layer) {
    switch (layer.kind) {
        case LayerDescriptor::Kind::Conv:
            if (layer.h_out == 0 || layer.w_out == 0 || layer.c_in == 0 || layer.c_out == 0) {
                throw std::invalid_argument("flops: unresolved conv shape");
            }
            return flops_conv(layer.k, layer.c_in, layer.c_out, layer.h_out, layer.w_out);
        case LayerDescriptor::Kind::Linear:
            if (layer.d_in == 0 || layer.d_out == 0 || layer.tokens == 0) {
                throw std::invalid_argument("flops: unresolved linear shape");
            }
            return flops_linear(layer.d_in, layer.d_out, layer.tokens);
        case LayerDescriptor::Kind::DWC:
            if (layer.c_in == 0 || layer.h_out == 0 || layer.w_out == 0) {
                throw std::invalid_argument("flops: unresolved depthwise shape");
            }
            return flops_dwc(layer.k, layer.c_in, layer.h_out, layer.w_out);
        case LayerDescriptor::Kind::Pool:
        case LayerDescriptor::Kind::Neuron:
        case LayerDescriptor::Kind::Identity:
            return 0;  // comparison/accumulate only
    }
    throw std::invalid_argument("flops: unknown layer kind");
}

double sops(std::size_t flops_l, double fr, std::size_t T) {
    if (!(fr >= 0.0 && fr <= 1.0)) {
        throw std::invalid_argument("sops: firing rate " + std::to_string(fr) +
                                    " outside [0,1] signals broken binarity upstream");
    }
    if (T < 1) throw std::invalid_argument("sops: T must be >= 1");
    return fr * static_cast<double>(T) * static_cast<double>(flops_l);
}

double energy_snn_mj(std::size_t first_layer_flops, const std::vector<double>& spiking_sops) {
    double total_sops = 0.0;
    for (double s : spiking_sops) total_sops += s;
    const double pj =
        kEnergyMacPJ * static_cast<double>(first_layer_flops) + kEnergyAcPJ * total_sops;
    return pj * kMJPerPJ;
}

double energy_ann_mj(std::size_t total_flops) {
    return kEnergyMacPJ * static_cast<double>(total_flops) * kMJPerPJ;
}

// ---- report assembly -------------------------------------------------------------

double EnergyReport::total_pj() const {
    double acc = 0.0;
    for (const EnergyRow& r : rows) acc += r.energy_pj;
    return acc;
}

double EnergyReport::stage_total_pj(const std::string& stage) const {
    double acc = 0.0;
    for (const EnergyRow& r : rows) {
        if (r.stage == stage) acc += r.energy_pj;
    }
    return acc;
}

std::vector<StageComponentTotal> EnergyReport::breakdown() const {
    std::vector<StageComponentTotal> out;
    for (const EnergyRow& r : rows) {
        bool found = false;
        for (StageComponentTotal& t : out) {
            if (t.stage == r.stage && t.kind == r.kind) {
                t.energy_pj += r.energy_pj;
                found = true;
                break;
            }
        }
        if (!found) out.push_back({r.stage, r.kind, r.energy_pj});
    }
    return out;
}

EnergyReport instrument(Network& net, const Tensor& input) {
    ForwardTrace trace = net.forward_traced(input, true, true);
    EnergyReport report;
    report.timesteps = net.spec.timesteps;
    for (const LayerActivity& act : trace.activities) {
        EnergyRow row;
        row.layer = act.layer;
        row.stage = act.stage;
        row.kind = act.kind;
        row.flops = act.flops;
        row.fr = act.fr;
        row.T = report.timesteps;
        row.sops = row.fr * static_cast<double>(row.T) * static_cast<double>(row.flops);
        row.mac = act.mac;
        row.multibit = act.multibit;
        if (act.multibit) report.multibit = true;
        row.energy_pj = row.mac ? kEnergyMacPJ * static_cast<double>(row.flops)
                                : kEnergyAcPJ * row.sops;
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---- serialization ------------------------------------------------------------------

namespace {

std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string format_mj(double mj) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", mj);
    return buf;
}

std::string report_to_csv(const EnergyReport& report) {
    std::ostringstream os;
    os << "layer,stage,kind,flops,fr,T,sops,energy_pJ\n";
    for (const EnergyRow& r : report.rows) {
        os << r.layer << "," << r.stage << "," << r.kind << "," << r.flops << ","
           << full_precision(r.fr) << "," << r.T << "," << full_precision(r.sops) << ","
           << full_precision(r.energy_pj) << "\n";
    }
    return os.str();
}

EnergyReport report_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line != "layer,stage,kind,flops,fr,T,sops,energy_pJ") {
        throw std::invalid_argument("report_from_csv: bad or missing header");
    }
    EnergyReport report;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        EnergyRow r;
        std::getline(row, r.layer, ',');
        std::getline(row, r.stage, ',');
        std::getline(row, r.kind, ',');
        std::getline(row, field, ',');
        r.flops = std::stoull(field);
        std::getline(row, field, ',');
        r.fr = std::stod(field);
        std::getline(row, field, ',');
        r.T = std::stoull(field);
        std::getline(row, field, ',');
        r.sops = std::stod(field);
        std::getline(row, field, ',');
        r.energy_pj = std::stod(field);
        report.rows.push_back(std::move(r));
    }
    if (!report.rows.empty()) {
        report.rows.front().mac = true;
        report.timesteps = report.rows.front().T;
    }
    return report;
}

std::string report_to_json(const EnergyReport& report) {
    nlohmann::json j;
    j["timesteps"] = report.timesteps;
    j["e_mac_pj"] = report.e_mac_pj;
    j["e_ac_pj"] = report.e_ac_pj;
    j["multibit"] = report.multibit;
    j["rows"] = nlohmann::json::array();
    for (const EnergyRow& r : report.rows) {
        j["rows"].push_back({{"layer", r.layer},
                             {"stage", r.stage},
                             {"kind", r.kind},
                             {"flops", r.flops},
                             {"fr", r.fr},
                             {"T", r.T},
                             {"sops", r.sops},
                             {"energy_pJ", r.energy_pj},
                             {"mac", r.mac},
                             {"multibit", r.multibit}});
    }
    nlohmann::json totals = nlohmann::json::object();
    for (const StageComponentTotal& t : report.breakdown()) {
        totals[t.stage][t.kind] = t.energy_pj * kMJPerPJ;
    }
    for (auto& [stage, kinds] : totals.items()) {
        (void)kinds;
        totals[stage]["total"] = report.stage_total_pj(stage) * kMJPerPJ;
    }
    j["stage_totals_mj"] = totals;
    j["total_mj"] = report.total_mj();
    j["total_mj_display"] = format_mj(report.total_mj());
    return j.dump(2);
}

EnergyReport report_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    EnergyReport report;
    report.timesteps = j.at("timesteps").get<std::size_t>();
    report.e_mac_pj = j.at("e_mac_pj").get<double>();
    report.e_ac_pj = j.at("e_ac_pj").get<double>();
    report.multibit = j.at("multibit").get<bool>();
    for (const auto& row : j.at("rows")) {
        EnergyRow r;
        r.layer = row.at("layer").get<std::string>();
        r.stage = row.at("stage").get<std::string>();
        r.kind = row.at("kind").get<std::string>();
        r.flops = row.at("flops").get<std::size_t>();
        r.fr = row.at("fr").get<double>();
        r.T = row.at("T").get<std::size_t>();
        r.sops = row.at("sops").get<double>();
        r.energy_pj = row.at("energy_pJ").get<double>();
        r.mac = row.at("mac").get<bool>();
        r.multibit = row.at("multibit").get<bool>();
        report.rows.push_back(std::move(r));
    }
    return report;
}

}  // namespace spikelab

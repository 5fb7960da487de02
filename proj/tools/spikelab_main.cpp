// spikelab command-line front end: filter analysis, time-frequency
// experiments, training, evaluation, and energy reports from declarative
// configs. Exit codes: 0 success, 2 usage, 3 config, 4 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "spikelab/config.hpp"
#include "spikelab/energy.hpp"
#include "spikelab/freq.hpp"
#include "spikelab/model.hpp"
#include "spikelab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitRuntime = 4;

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

std::uint64_t seed_or_env(std::int64_t seed_flag) {
    if (seed_flag >= 0) return static_cast<std::uint64_t>(seed_flag);
    if (const char* env = std::getenv("SPIKELAB_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

// ---- filter -----------------------------------------------------------------

int run_filter(double beta, std::size_t depth, std::size_t grid_points, bool use_if,
               const std::string& out) {
    if (!use_if && !(beta >= 0.0 && beta < 1.0)) {
        throw UsageError("--beta must lie in [0,1) unless --if is given");
    }
    if (grid_points < 2) throw UsageError("--grid-points must be >= 2");
    const spikelab::TransferFunction base =
        use_if ? spikelab::if_transfer() : spikelab::lif_transfer(beta);
    const spikelab::TransferFunction tf = spikelab::layered_transfer(
        base, depth, std::vector<double>(depth, 1.0));

    std::ostringstream os;
    os << "omega,magnitude\n";
    constexpr double kPi = 3.14159265358979323846;
    // The integrator pole makes omega = 0 unbounded; its grid starts one
    // point in.
    for (std::size_t i = use_if ? 1 : 0; i < grid_points; ++i) {
        const double omega =
            kPi * static_cast<double>(i) / static_cast<double>(grid_points - 1);
        os << full(omega) << "," << full(spikelab::magnitude_response(tf, omega)) << "\n";
    }
    if (out == "-") {
        std::cout << os.str();
    } else {
        write_file(out, os.str());
    }
    return kExitOk;
}

// ---- fig3 ------------------------------------------------------------------

json fig3_summary(const spikelab::ThreeSineResult& r, double cutoff) {
    json j;
    j["hf_ratio_input"] = spikelab::hf_energy_ratio(r.input_spectrum, cutoff);
    j["hf_ratio_activated"] = spikelab::hf_energy_ratio(r.activated_spectrum, cutoff);
    j["hf_ratio_weighted"] = spikelab::hf_energy_ratio(r.weighted_spectrum, cutoff);
    return j;
}

int run_fig3(const std::string& activation, std::int64_t seed_flag, std::size_t n_seeds,
             bool compare, const std::string& out_dir, double sample_rate, double duration,
             double cutoff) {
    const std::uint64_t seed = seed_or_env(seed_flag);
    const spikelab::NeuronParams lif = spikelab::three_sine_default_neuron();
    fs::create_directories(out_dir);

    if (compare) {
        std::ostringstream csv;
        csv << "seed,lif_ratio,relu_ratio\n";
        std::size_t lif_wins = 0;
        json seeds_json = json::array();
        for (std::size_t i = 0; i < n_seeds; ++i) {
            const std::uint64_t s = seed + i;
            const auto lif_run = spikelab::three_sine_experiment(
                spikelab::ActivationKind::LIF, lif, s, sample_rate, duration);
            const auto relu_run = spikelab::three_sine_experiment(
                spikelab::ActivationKind::ReLU, lif, s, sample_rate, duration);
            const double rl = spikelab::hf_energy_ratio(lif_run.weighted_spectrum, cutoff);
            const double rr = spikelab::hf_energy_ratio(relu_run.weighted_spectrum, cutoff);
            if (rl < rr) ++lif_wins;
            csv << s << "," << full(rl) << "," << full(rr) << "\n";
            seeds_json.push_back({{"seed", s}, {"lif_ratio", rl}, {"relu_ratio", rr}});
        }
        json j;
        j["cutoff_hz"] = cutoff;
        j["seeds"] = seeds_json;
        j["lif_below_relu"] = lif_wins;
        j["total_seeds"] = n_seeds;
        write_file(fs::path(out_dir) / "comparison.csv", csv.str());
        write_file(fs::path(out_dir) / "summary.json", j.dump(2));
        return kExitOk;
    }

    spikelab::ActivationKind kind;
    if (activation == "relu") {
        kind = spikelab::ActivationKind::ReLU;
    } else if (activation == "lif") {
        kind = spikelab::ActivationKind::LIF;
    } else {
        throw UsageError("--activation must be 'relu' or 'lif'");
    }
    const auto r = spikelab::three_sine_experiment(kind, lif, seed, sample_rate, duration);
    write_file(fs::path(out_dir) / "input_spectrum.csv",
               spikelab::spectrum_to_csv(r.input_spectrum));
    write_file(fs::path(out_dir) / "activated_spectrum.csv",
               spikelab::spectrum_to_csv(r.activated_spectrum));
    write_file(fs::path(out_dir) / "weighted_spectrum.csv",
               spikelab::spectrum_to_csv(r.weighted_spectrum));
    json j = fig3_summary(r, cutoff);
    j["activation"] = activation;
    j["seed"] = seed;
    j["cutoff_hz"] = cutoff;
    write_file(fs::path(out_dir) / "summary.json", j.dump(2));
    return kExitOk;
}

// ---- train / eval / energy ----------------------------------------------------

spikelab::Dataset make_dataset(const spikelab::ExperimentConfig& exp, bool train_split) {
    const std::size_t n = train_split ? exp.train_size : exp.test_size;
    const std::uint64_t seed = exp.data_seed * 1000003ULL + (train_split ? 1 : 2);
    if (exp.data_kind == "lowfreq_control") {
        return spikelab::make_lowfreq_control_dataset(n, seed);
    }
    return spikelab::make_synthetic_freq_dataset(n, seed);
}

int run_train(const std::string& config_path, std::int64_t seed_flag,
              const std::string& out_dir) {
    auto exp = spikelab::experiment_from_config(spikelab::ParsedConfig::parse_file(config_path));
    if (seed_flag >= 0) exp.train.seed = static_cast<std::uint64_t>(seed_flag);
    const spikelab::Dataset train_set = make_dataset(exp, true);
    const spikelab::Dataset test_set = make_dataset(exp, false);

    spikelab::Network net = spikelab::build(exp.arch, exp.train.seed);
    const spikelab::TrainResult result = spikelab::train(net, train_set, test_set, exp.train);

    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "metrics.csv", spikelab::metrics_to_csv(result.history));
    spikelab::save_state(net, (fs::path(out_dir) / "model.state").string());
    write_file(fs::path(out_dir) / "arch.cfg", spikelab::arch_to_config(exp.arch));
    std::cout << "final test accuracy " << result.final_test_acc << "\n";
    return kExitOk;
}

int run_eval(const std::string& config_path, const std::string& model_path,
             const std::string& ablation_dir, const std::string& out) {
    if (!ablation_dir.empty()) {
        std::ifstream f(fs::path(ablation_dir) / "ablation.csv");
        if (!f) {
            throw std::runtime_error("cannot open " +
                                     (fs::path(ablation_dir) / "ablation.csv").string());
        }
        std::ostringstream buf;
        buf << f.rdbuf();
        const spikelab::AblationReport report = spikelab::parse_ablation_csv(buf.str());
        json j;
        j["variant_a"] = report.name_a;
        j["variant_b"] = report.name_b;
        j["seeds"] = report.seeds.size();
        j["win_fraction_a"] = report.win_fraction_a();
        std::cout << report.name_a << " >= " << report.name_b << " in "
                  << report.win_fraction_a() * static_cast<double>(report.seeds.size())
                  << "/" << report.seeds.size() << " seeds\n";
        if (!out.empty()) write_file(out, j.dump(2));
        return kExitOk;
    }
    if (config_path.empty() || model_path.empty()) {
        throw UsageError("eval needs --config and --model, or --ablation-dir");
    }
    auto exp = spikelab::experiment_from_config(spikelab::ParsedConfig::parse_file(config_path));
    spikelab::Network net = spikelab::build(exp.arch, exp.train.seed);
    spikelab::load_state(net, model_path);
    const spikelab::Dataset test_set = make_dataset(exp, false);
    const auto [acc, loss] = spikelab::evaluate(net, test_set);
    json j;
    j["test_accuracy"] = acc;
    j["test_loss"] = loss;
    std::cout << "test accuracy " << acc << ", loss " << loss << "\n";
    if (!out.empty()) write_file(out, j.dump(2));
    return kExitOk;
}

int run_energy(const std::string& config_path, const std::string& input_kind,
               std::size_t batch, bool batch_given, std::int64_t seed_flag,
               const std::string& out_dir) {
    auto exp = spikelab::experiment_from_config(spikelab::ParsedConfig::parse_file(config_path));
    spikelab::Network net = spikelab::build(exp.arch, seed_or_env(seed_flag));

    spikelab::Tensor input;
    if (input_kind == "dataset") {
        // firing rates measured over the full test split unless --batch trims it
        const spikelab::Dataset d = make_dataset(exp, false);
        const std::size_t n = batch_given ? std::min(batch, d.size()) : d.size();
        const std::size_t chunk = exp.arch.input_channels * exp.arch.input_height *
                                  exp.arch.input_width;
        input = spikelab::Tensor({n, exp.arch.input_channels, exp.arch.input_height,
                                  exp.arch.input_width});
        for (std::size_t i = 0; i < n * chunk; ++i) input[i] = d.images[i];
    } else if (input_kind == "random") {
        input = spikelab::Tensor({batch, exp.arch.input_channels, exp.arch.input_height,
                                  exp.arch.input_width});
        spikelab::Rng rng(seed_or_env(seed_flag) + 17);
        for (std::size_t i = 0; i < input.numel(); ++i) input[i] = rng.uniform();
    } else if (input_kind == "zero") {
        input = spikelab::Tensor({batch, exp.arch.input_channels, exp.arch.input_height,
                                  exp.arch.input_width},
                                 0.0);
    } else {
        throw UsageError("--input must be zero, random, or dataset");
    }

    const spikelab::EnergyReport report = spikelab::instrument(net, input);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "report.csv", spikelab::report_to_csv(report));
    write_file(fs::path(out_dir) / "report.json", spikelab::report_to_json(report));
    std::cout << "total energy " << spikelab::format_mj(report.total_mj()) << " mJ ("
              << report.rows.size() << " layers)\n";
    return kExitOk;
}

int run_ablation(const std::string& kind, std::size_t n_seeds, std::size_t timesteps,
                 std::size_t epochs, std::size_t train_size, std::size_t test_size,
                 std::int64_t seed_flag, bool control, const std::string& out_dir) {
    if (n_seeds < 5) throw UsageError("--seeds must be at least 5");
    spikelab::AblationOptions options;
    options.timesteps = timesteps;
    options.train_size = train_size;
    options.test_size = test_size;
    options.control_task = control;
    options.train.epochs = epochs;
    options.train.batch_size = 32;
    options.train.learning_rate = 5e-3;
    options.train.label_smoothing = 0.1;
    options.train.schedule = spikelab::LrSchedule::Cosine;

    std::vector<std::uint64_t> seeds;
    const std::uint64_t base = seed_or_env(seed_flag);
    for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(base + i);

    spikelab::AblationReport report;
    if (kind == "pooling") {
        report = spikelab::pooling_ablation(seeds, options);
    } else if (kind == "embed") {
        report = spikelab::patch_embed_ablation(seeds, options);
    } else {
        throw UsageError("--kind must be 'pooling' or 'embed'");
    }
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "ablation.csv", report.to_csv());
    json j;
    j["variant_a"] = report.name_a;
    j["variant_b"] = report.name_b;
    j["win_fraction_a"] = report.win_fraction_a();
    json rows = json::array();
    for (const auto& r : report.seeds) {
        rows.push_back({{"seed", r.seed}, {report.name_a, r.acc_a}, {report.name_b, r.acc_b}});
    }
    j["seeds"] = rows;
    write_file(fs::path(out_dir) / "summary.json", j.dump(2));
    std::cout << report.name_a << " >= " << report.name_b << " in "
              << report.win_fraction_a() * static_cast<double>(report.seeds.size()) << "/"
              << report.seeds.size() << " seeds\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spikelab: spiking-transformer laboratory"};
    app.require_subcommand(1);

    // filter
    auto* filter = app.add_subcommand("filter", "membrane transfer-function magnitude table");
    double beta = 0.25;
    std::size_t depth = 1, grid_points = 256;
    bool use_if = false;
    std::string filter_out = "-";
    filter->add_option("--beta", beta, "decay factor in [0,1)");
    filter->add_option("--depth", depth, "composition depth L");
    filter->add_option("--grid-points", grid_points, "omega grid size on [0,pi]");
    filter->add_flag("--if", use_if, "integrate-and-fire filter (pole at 1)");
    filter->add_option("--out", filter_out, "output CSV path, '-' for stdout");

    // fig3
    auto* fig3 = app.add_subcommand("fig3", "three-sine time-frequency experiment");
    std::string activation = "lif";
    std::int64_t seed_flag = -1;
    std::size_t n_seeds = 20;
    bool compare = false;
    std::string fig3_dir = "fig3_out";
    double sample_rate = 1000.0, duration = 1.0, cutoff = 150.0;
    fig3->add_option("--activation", activation, "relu or lif");
    fig3->add_option("--seed", seed_flag, "weighting seed (default SPIKELAB_SEED or 0)");
    fig3->add_option("--seeds", n_seeds, "seed count in --compare mode");
    fig3->add_flag("--compare", compare, "run both chains over several seeds");
    fig3->add_option("--out-dir", fig3_dir, "output directory");
    fig3->add_option("--sample-rate", sample_rate, "sampling rate in Hz");
    fig3->add_option("--duration", duration, "window length in seconds");
    fig3->add_option("--cutoff", cutoff, "high-frequency cutoff in Hz");

    // train
    auto* train_cmd = app.add_subcommand("train", "surrogate-gradient training run");
    std::string train_config, train_dir = "train_out";
    std::int64_t train_seed = -1;
    train_cmd->add_option("--config", train_config, "experiment config path")->required();
    train_cmd->add_option("--seed", train_seed, "training seed override");
    train_cmd->add_option("--out-dir", train_dir, "output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained model or ablation dir");
    std::string eval_config, eval_model, eval_ablation, eval_out;
    eval_cmd->add_option("--config", eval_config, "experiment config path");
    eval_cmd->add_option("--model", eval_model, "model state path");
    eval_cmd->add_option("--ablation-dir", eval_ablation, "ablation artifact directory");
    eval_cmd->add_option("--out", eval_out, "summary JSON path");

    // energy
    auto* energy_cmd = app.add_subcommand("energy", "per-layer energy report");
    std::string energy_config, energy_input = "zero", energy_dir = "energy_out";
    std::size_t energy_batch = 4;
    std::int64_t energy_seed = -1;
    energy_cmd->add_option("--config", energy_config, "model config path")->required();
    energy_cmd->add_option("--input", energy_input, "zero, random, or dataset");
    energy_cmd->add_option("--batch", energy_batch, "instrumentation batch size");
    energy_cmd->add_option("--seed", energy_seed, "weight/input seed");
    energy_cmd->add_option("--out-dir", energy_dir, "output directory");

    // ablation
    auto* abl_cmd = app.add_subcommand("ablation", "matched-parameter ordering experiment");
    std::string abl_kind = "pooling", abl_dir = "ablation_out";
    std::size_t abl_seeds = 5, abl_T = 2, abl_epochs = 9;
    std::size_t abl_train = 800, abl_test = 400;
    std::int64_t abl_seed = -1;
    bool abl_control = false;
    abl_cmd->add_option("--kind", abl_kind, "pooling or embed");
    abl_cmd->add_option("--seeds", abl_seeds, "number of seeds (>= 5)");
    abl_cmd->add_option("--timesteps", abl_T, "simulation timesteps");
    abl_cmd->add_option("--epochs", abl_epochs, "training epochs per run");
    abl_cmd->add_option("--train-size", abl_train, "training images");
    abl_cmd->add_option("--test-size", abl_test, "test images");
    abl_cmd->add_option("--seed", abl_seed, "base seed");
    abl_cmd->add_flag("--control", abl_control, "use the low-frequency control task");
    abl_cmd->add_option("--out-dir", abl_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (filter->parsed()) {
            return run_filter(beta, depth, grid_points, use_if, filter_out);
        }
        if (fig3->parsed()) {
            return run_fig3(activation, seed_flag, n_seeds, compare, fig3_dir, sample_rate,
                            duration, cutoff);
        }
        if (train_cmd->parsed()) {
            return run_train(train_config, train_seed, train_dir);
        }
        if (eval_cmd->parsed()) {
            return run_eval(eval_config, eval_model, eval_ablation, eval_out);
        }
        if (energy_cmd->parsed()) {
            return run_energy(energy_config, energy_input, energy_batch,
                              energy_cmd->count("--batch") > 0, energy_seed, energy_dir);
        }
        if (abl_cmd->parsed()) {
            return run_ablation(abl_kind, abl_seeds, abl_T, abl_epochs, abl_train, abl_test,
                                abl_seed, abl_control, abl_dir);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const spikelab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

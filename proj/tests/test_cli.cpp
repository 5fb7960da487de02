// Drives the spikelab binary end to end: exit codes, file outputs, and
// determinism. The binary path arrives as argv[1].

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_workdir;

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
    const fs::path out = g_workdir / "cli_stdout.txt";
    const std::string cmd = g_binary + " " + args + " > " + out.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream f(out);
    std::ostringstream buf;
    buf << f.rdbuf();
    r.stdout_text = buf.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(static_cast<bool>(f));
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

const char* kTinyConfig = R"([model]
timesteps = 1
num_classes = 2
input_channels = 1
input_height = 16
input_width = 16
neuron = lif
beta = 0.25
threshold = 0.5
shortcut = membrane

[stage]
patch_embed = orig
token_mixer = maxpool
blocks = 1
channels = 6

[train]
epochs = 1
batch_size = 16
learning_rate = 0.005
seed = 7

[data]
kind = synthetic_freq
train_size = 48
test_size = 24
seed = 3
)";

}  // namespace

TEST_CASE("filter command emits the magnitude table") {
    const fs::path out = g_workdir / "filter.csv";
    const RunResult r =
        run_cli("filter --beta 0.25 --depth 1 --grid-points 3 --out " + out.string());
    CHECK(r.exit_code == 0);
    const std::string csv = slurp(out);
    CHECK(csv.find("omega,magnitude\n") == 0);
    CHECK(csv.find("\n0,1\n") != std::string::npos);                // DC gain 1
    CHECK(csv.find("0.59999999999999998\n") != std::string::npos);  // pi row

    const RunResult rif = run_cli("filter --if --grid-points 3 --out " + out.string());
    CHECK(rif.exit_code == 0);
    CHECK(slurp(out).find("0.5\n") != std::string::npos);

    // beta 0: all-pass, every magnitude exactly 1
    const RunResult flat =
        run_cli("filter --beta 0 --depth 1 --grid-points 5 --out " + out.string());
    CHECK(flat.exit_code == 0);
    std::istringstream rows(slurp(out));
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line)) {
        CHECK(line.substr(line.find(',') + 1) == "1");
    }
}

TEST_CASE("filter usage errors exit with code 2") {
    CHECK(run_cli("filter --beta 1.5").exit_code == 2);
    CHECK(run_cli("filter --beta 1.0").exit_code == 2);
    CHECK(run_cli("bogus-subcommand").exit_code == 2);
    CHECK(run_cli("fig3 --activation tanh --out-dir " + (g_workdir / "f").string())
              .exit_code == 2);
}

TEST_CASE("fig3 writes spectra and a deterministic summary") {
    const fs::path dir = g_workdir / "fig3";
    const RunResult r =
        run_cli("fig3 --activation lif --seed 5 --out-dir " + dir.string());
    CHECK(r.exit_code == 0);
    const std::string input_csv = slurp(dir / "input_spectrum.csv");
    CHECK(input_csv.find("freq,amplitude\n") == 0);
    // the three 1/3 peaks at the 100/200/300 Hz bins
    CHECK(input_csv.find("\n100,0.333333333333") != std::string::npos);
    CHECK(input_csv.find("\n200,0.333333333333") != std::string::npos);
    CHECK(input_csv.find("\n300,0.333333333333") != std::string::npos);
    CHECK(fs::exists(dir / "activated_spectrum.csv"));
    CHECK(fs::exists(dir / "weighted_spectrum.csv"));
    const std::string summary = slurp(dir / "summary.json");

    // identical seed, identical bytes
    const fs::path dir2 = g_workdir / "fig3_again";
    run_cli("fig3 --activation lif --seed 5 --out-dir " + dir2.string());
    CHECK(slurp(dir2 / "summary.json") == summary);
    CHECK(slurp(dir2 / "weighted_spectrum.csv") == slurp(dir / "weighted_spectrum.csv"));
}

TEST_CASE("fig3 compare mode reports the lif-vs-relu ordering") {
    const fs::path dir = g_workdir / "fig3_cmp";
    const RunResult r = run_cli("fig3 --compare --seeds 3 --seed 1 --out-dir " +
                                dir.string());
    CHECK(r.exit_code == 0);
    const std::string summary = slurp(dir / "summary.json");
    CHECK(summary.find("\"lif_below_relu\": 3") != std::string::npos);
    CHECK(slurp(dir / "comparison.csv").find("seed,lif_ratio,relu_ratio\n") == 0);
}

TEST_CASE("train/eval/energy pipeline on a tiny config") {
    const fs::path cfg = g_workdir / "tiny.cfg";
    write(cfg, kTinyConfig);

    const fs::path dir = g_workdir / "run1";
    const RunResult r =
        run_cli("train --config " + cfg.string() + " --out-dir " + dir.string());
    CHECK(r.exit_code == 0);
    const std::string metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.find("epoch,train_loss,train_acc,test_loss,test_acc\n") == 0);
    CHECK(fs::exists(dir / "model.state"));

    // determinism: a second run writes identical metrics
    const fs::path dir2 = g_workdir / "run2";
    run_cli("train --config " + cfg.string() + " --out-dir " + dir2.string());
    CHECK(slurp(dir2 / "metrics.csv") == metrics);
    CHECK(slurp(dir2 / "model.state") == slurp(dir / "model.state"));

    // eval on the saved state reproduces the final test metrics
    const RunResult ev = run_cli("eval --config " + cfg.string() + " --model " +
                                 (dir / "model.state").string() + " --out " +
                                 (g_workdir / "eval.json").string());
    CHECK(ev.exit_code == 0);
    CHECK(ev.stdout_text.find("test accuracy") != std::string::npos);
    {
        std::istringstream rows(metrics);
        std::string line, last;
        std::getline(rows, line);  // header
        while (std::getline(rows, line)) {
            if (!line.empty()) last = line;
        }
        const std::string test_acc = last.substr(last.rfind(',') + 1);
        CHECK(slurp(g_workdir / "eval.json").find(test_acc.substr(0, 8)) !=
              std::string::npos);
    }

    // energy on the same model config: zero input leaves only the MAC row
    const fs::path endir = g_workdir / "energy";
    const RunResult en = run_cli("energy --config " + cfg.string() +
                                 " --input zero --batch 2 --out-dir " + endir.string());
    CHECK(en.exit_code == 0);
    const std::string csv = slurp(endir / "report.csv");
    std::istringstream rows(csv);
    std::string line;
    std::getline(rows, line);
    CHECK(line == "layer,stage,kind,flops,fr,T,sops,energy_pJ");
    std::size_t row_idx = 0, nonzero = 0;
    while (std::getline(rows, line)) {
        if (line.empty()) continue;
        const std::string energy = line.substr(line.rfind(',') + 1);
        if (energy != "0") ++nonzero;
        ++row_idx;
    }
    CHECK(row_idx >= 3);
    CHECK(nonzero == 1);  // the first-layer MAC row
    CHECK(slurp(endir / "report.json").find("\"multibit\": false") != std::string::npos);
}

TEST_CASE("config errors exit with code 3 and name the line") {
    const fs::path cfg = g_workdir / "broken.cfg";
    write(cfg, "[model]\ntimesteps = 1\nwhat is this\n");
    const RunResult r = run_cli("train --config " + cfg.string() + " --out-dir " +
                                (g_workdir / "x").string());
    CHECK(r.exit_code == 3);
    CHECK(r.stdout_text.find("line 3") != std::string::npos);

    write(cfg, "[model]\ntimesteps = 1\nnum_classes = 2\ninput_channels = 1\n"
               "input_height = 16\ninput_width = 16\nsurprise = 1\n"
               "[stage]\npatch_embed = orig\ntoken_mixer = identity\n"
               "blocks = 1\nchannels = 4\n");
    const RunResult r2 = run_cli("energy --config " + cfg.string() + " --out-dir " +
                                 (g_workdir / "x").string());
    CHECK(r2.exit_code == 3);
    CHECK(r2.stdout_text.find("surprise") != std::string::npos);

    CHECK(run_cli("train --config /nonexistent.cfg --out-dir " +
                  (g_workdir / "x").string())
              .exit_code == 4);
}

TEST_CASE("eval summarizes an ablation artifact directory") {
    const fs::path dir = g_workdir / "abl";
    fs::create_directories(dir);
    write(dir / "ablation.csv",
          "seed,maxpool,avgpool\n1,0.9,0.8\n2,0.7,0.7\n3,0.6,0.65\n");
    const RunResult r = run_cli("eval --ablation-dir " + dir.string() + " --out " +
                                (dir / "summary.json").string());
    CHECK(r.exit_code == 0);
    CHECK(r.stdout_text.find("maxpool >= avgpool in 2/3 seeds") != std::string::npos);
    const std::string summary = slurp(dir / "summary.json");
    CHECK(summary.find("\"win_fraction_a\"") != std::string::npos);
}

TEST_CASE("SPIKELAB_SEED is the seed fallback") {
    const fs::path dir1 = g_workdir / "env1";
    const fs::path dir2 = g_workdir / "env2";
    const std::string base = "fig3 --activation lif --out-dir ";
    ::setenv("SPIKELAB_SEED", "9", 1);
    run_cli(base + dir1.string());
    ::unsetenv("SPIKELAB_SEED");
    run_cli(base + dir2.string() + " --seed 9");
    CHECK(slurp(dir1 / "summary.json") == slurp(dir2 / "summary.json"));
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <path-to-spikelab-binary>\n", argv[0]);
        return 2;
    }
    g_binary = argv[1];
    g_workdir = fs::temp_directory_path() / "spikelab_cli_tests";
    std::error_code ec;
    fs::remove_all(g_workdir, ec);
    fs::create_directories(g_workdir);

    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    const int rc = ctx.run();
    fs::remove_all(g_workdir, ec);
    return rc;
}

#include "spikelab/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "spikelab/autograd.hpp"
#include "spikelab/rng.hpp"

namespace spikelab {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("TrainConfig: learning rate must be positive");
    }
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
        throw std::invalid_argument("TrainConfig: label smoothing must lie in [0,1)");
    }
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
}

// ---- synthetic datasets ---------------------------------------------------------

namespace {

constexpr std::size_t kImageSize = 16;
constexpr double kPi = 3.14159265358979323846;

void clamp01(Tensor& img) {
    for (std::size_t i = 0; i < img.numel(); ++i)
        img[i] = std::min(1.0, std::max(0.0, img[i]));
}

// Both classes share the pixel mean and the contrast band so global
// statistics do not separate them; the classes differ in spatial period only.

// Smooth content: long-period sinusoids and soft blobs (period >= 8 px).
void paint_lowfreq(Rng& rng, double* px) {
    const std::size_t n = kImageSize;
    const double amp = rng.uniform(0.04, 0.26);
    if (rng.index(2) == 0) {
        int kx = static_cast<int>(rng.index(3)) - 1;  // {-1,0,1}
        int ky = static_cast<int>(rng.index(2));      // {0,1}
        if (kx == 0 && ky == 0) ky = 1;
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                px[y * n + x] =
                    0.5 + amp * std::sin(2.0 * kPi *
                                             (kx * static_cast<double>(x) +
                                              ky * static_cast<double>(y)) /
                                             static_cast<double>(n) +
                                         phase);
    } else {
        const double cx = rng.uniform(4.0, 12.0);
        const double cy = rng.uniform(4.0, 12.0);
        const double sigma = rng.uniform(2.5, 5.0);
        const double sign = rng.index(2) ? 1.0 : -1.0;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                px[y * n + x] = 0.5 + sign * 1.6 * amp *
                                          std::exp(-(dx * dx + dy * dy) /
                                                   (2.0 * sigma * sigma));
            }
    }
}

// Fine textures: stripes and checkerboards with period 2-3 px at the same
// contrast band as the smooth class.
void paint_highfreq(Rng& rng, double* px) {
    const std::size_t n = kImageSize;
    const double amp = rng.uniform(0.04, 0.26);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const std::size_t kind = rng.index(3);
    const double period = rng.index(2) == 0 ? 2.0 : 3.0;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            double v = 0.0;
            if (kind == 0) {
                v = std::cos(2.0 * kPi * static_cast<double>(x) / period + phase);
            } else if (kind == 1) {
                v = std::cos(2.0 * kPi * static_cast<double>(y) / period + phase);
            } else {
                v = std::cos(kPi * static_cast<double>(x) + phase) *
                    std::cos(kPi * static_cast<double>(y) + phase);
            }
            px[y * n + x] = 0.5 + amp * v;
        }
    }
}

Dataset make_texture_dataset(std::size_t n, std::uint64_t seed, bool control) {
    if (n < 2) throw std::invalid_argument("synthetic dataset: need at least 2 images");
    Rng rng(seed);
    Dataset ds;
    ds.images = Tensor({n, 1, kImageSize, kImageSize});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);  // balanced by construction
        ds.labels[i] = label;
        double* px = ds.images.data() + i * kImageSize * kImageSize;
        for (std::size_t j = 0; j < kImageSize * kImageSize; ++j) px[j] = 0.5;
        if (control) {
            // Both classes smooth; class separates on orientation only.
            const double amp = rng.uniform(0.3, 0.45);
            const double phase = rng.uniform(0.0, 2.0 * kPi);
            for (std::size_t y = 0; y < kImageSize; ++y)
                for (std::size_t x = 0; x < kImageSize; ++x) {
                    const double coord =
                        label == 0 ? static_cast<double>(x) : static_cast<double>(y);
                    px[y * kImageSize + x] =
                        0.5 + amp * std::sin(2.0 * kPi * coord /
                                                 static_cast<double>(kImageSize) +
                                             phase);
                }
        } else if (label == 0) {
            paint_lowfreq(rng, px);
        } else {
            paint_highfreq(rng, px);
        }
        for (std::size_t j = 0; j < kImageSize * kImageSize; ++j)
            px[j] += rng.normal(0.0, 0.05);
    }
    clamp01(ds.images);
    return ds;
}

}  // namespace

Dataset make_synthetic_freq_dataset(std::size_t n, std::uint64_t seed) {
    return make_texture_dataset(n, seed, false);
}

Dataset make_lowfreq_control_dataset(std::size_t n, std::uint64_t seed) {
    return make_texture_dataset(n, seed, true);
}

// ---- loss ------------------------------------------------------------------------

double loss_ce_smoothed(const Tensor& logits, const std::vector<int>& labels,
                        double smoothing) {
    Graph g;
    Graph::Value l = g.constant(logits);
    return g.cross_entropy_smoothed(l, labels, smoothing)->value[0];
}

// ---- batching helpers ----------------------------------------------------------------

namespace {

Tensor gather_images(const Dataset& ds, const std::vector<std::size_t>& idx) {
    const auto& s = ds.images.shape();
    const std::size_t chunk = s[1] * s[2] * s[3];
    Tensor batch({idx.size(), s[1], s[2], s[3]});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < chunk; ++j)
            batch[i * chunk + j] = ds.images[idx[i] * chunk + j];
    return batch;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
    return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.extent(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (logits[row * k + j] > logits[row * k + best]) best = j;
    }
    return best;
}

struct Optimizer {
    OptimizerKind kind;
    double lr, wd;
    std::vector<Tensor> m, v;
    std::size_t step = 0;

    Optimizer(OptimizerKind kind_, double lr_, double wd_, const std::vector<Tensor*>& params)
        : kind(kind_), lr(lr_), wd(wd_) {
        for (Tensor* p : params) {
            m.emplace_back(Tensor::zeros(p->shape()));
            if (kind == OptimizerKind::AdamW) v.emplace_back(Tensor::zeros(p->shape()));
        }
    }

    void apply(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        step += 1;
        if (kind == OptimizerKind::Sgd) {
            constexpr double mu = 0.9;
            for (std::size_t i = 0; i < params.size(); ++i) {
                Tensor& p = *params[i];
                for (std::size_t j = 0; j < p.numel(); ++j) {
                    m[i][j] = mu * m[i][j] + grads[i][j];
                    p[j] -= lr * (m[i][j] + wd * p[j]);
                }
            }
        } else {
            constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                Tensor& p = *params[i];
                for (std::size_t j = 0; j < p.numel(); ++j) {
                    const double gj = grads[i][j];
                    m[i][j] = b1 * m[i][j] + (1.0 - b1) * gj;
                    v[i][j] = b2 * v[i][j] + (1.0 - b2) * gj * gj;
                    const double mhat = m[i][j] / c1;
                    const double vhat = v[i][j] / c2;
                    p[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[j]);
                }
            }
        }
    }
};

}  // namespace

std::pair<double, double> evaluate(Network& net, const Dataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const std::size_t batch = 64;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const std::size_t end = std::min(ds.size(), start + batch);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Tensor logits = net.forward(gather_images(ds, idx));
        const std::vector<int> labels = gather_labels(ds, idx);
        loss_sum += loss_ce_smoothed(logits, labels, 0.0) * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (argmax_row(logits, i) == static_cast<std::size_t>(labels[i])) ++correct;
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(ds.size()),
            loss_sum / static_cast<double>(ds.size())};
}

TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");

    const std::vector<Tensor*> params = net.parameters();
    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, params);
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.schedule == LrSchedule::Cosine) {
            const double progress =
                static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
            opt.lr = cfg.learning_rate * 0.5 *
                     (1.0 + std::cos(3.14159265358979323846 * progress));
        }
        // Fisher-Yates with the run's own generator keeps epochs reproducible.
        for (std::size_t i = order.size(); i-- > 1;) {
            std::swap(order[i], order[shuffle_rng.index(i + 1)]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            const Tensor images = gather_images(train_set, idx);
            const std::vector<int> labels = gather_labels(train_set, idx);

            Graph g;
            ForwardHooks hooks;
            Graph::Value logits = net.forward_graph(g, images, true, SpikeMode::Hard, hooks);
            Graph::Value loss =
                g.cross_entropy_smoothed(logits, labels, cfg.label_smoothing);
            if (!std::isfinite(loss->value[0])) {
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch + 1));
            }
            g.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (Tensor* p : params) grads.push_back(g.grad_for(*p));
            opt.apply(params, grads);
        }

        EpochMetrics m;
        m.epoch = epoch + 1;
        auto [train_acc, train_loss] = evaluate(net, train_set);
        m.train_acc = train_acc;
        m.train_loss = train_loss;
        if (test_set.size() > 0) {
            auto [test_acc, test_loss] = evaluate(net, test_set);
            m.test_acc = test_acc;
            m.test_loss = test_loss;
        }
        result.history.push_back(m);
    }
    if (!result.history.empty()) result.final_test_acc = result.history.back().test_acc;
    return result;
}

std::string metrics_to_csv(const std::vector<EpochMetrics>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,test_loss,test_acc\n";
    char buf[40];
    for (const EpochMetrics& m : history) {
        os << m.epoch;
        for (double v : {m.train_loss, m.train_acc, m.test_loss, m.test_acc}) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << "," << buf;
        }
        os << "\n";
    }
    return os.str();
}

// ---- ablations --------------------------------------------------------------------

double AblationReport::win_fraction_a() const {
    if (seeds.empty()) return 0.0;
    std::size_t wins = 0;
    for (const AblationSeedResult& r : seeds) {
        if (r.acc_a >= r.acc_b) ++wins;
    }
    return static_cast<double>(wins) / static_cast<double>(seeds.size());
}

std::string AblationReport::to_csv() const {
    std::ostringstream os;
    os << "seed," << name_a << "," << name_b << "\n";
    char buf[40];
    for (const AblationSeedResult& r : seeds) {
        os << r.seed;
        std::snprintf(buf, sizeof(buf), "%.17g", r.acc_a);
        os << "," << buf;
        std::snprintf(buf, sizeof(buf), "%.17g", r.acc_b);
        os << "," << buf << "\n";
    }
    return os.str();
}

AblationReport parse_ablation_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) {
        throw std::invalid_argument("parse_ablation_csv: empty input");
    }
    AblationReport report;
    {
        std::istringstream head(line);
        std::string col;
        std::getline(head, col, ',');
        if (col != "seed") throw std::invalid_argument("parse_ablation_csv: bad header");
        std::getline(head, report.name_a, ',');
        std::getline(head, report.name_b, ',');
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        AblationSeedResult r;
        std::getline(row, field, ',');
        r.seed = std::stoull(field);
        std::getline(row, field, ',');
        r.acc_a = std::stod(field);
        std::getline(row, field, ',');
        r.acc_b = std::stod(field);
        report.seeds.push_back(r);
    }
    return report;
}

ArchSpec ablation_arch(TokenMixKind mixer, PatchEmbedVariant embed, std::size_t timesteps) {
    ArchSpec spec;
    spec.stages = {
        {embed, mixer, 3, 2, 12},
        {embed, mixer, 3, 2, 24},
    };
    spec.timesteps = timesteps;
    spec.num_classes = 2;
    spec.input_channels = 1;
    spec.input_height = kImageSize;
    spec.input_width = kImageSize;
    spec.neuron.beta = 0.25;
    spec.neuron.v_th = 0.5;
    spec.shortcut = ShortcutKind::Membrane;
    return spec;
}

namespace {

AblationReport run_matched_ablation(const std::string& name_a, const ArchSpec& spec_a,
                                    const std::string& name_b, const ArchSpec& spec_b,
                                    const std::vector<std::uint64_t>& seeds,
                                    const AblationOptions& options) {
    if (seeds.size() < 5) {
        throw std::invalid_argument("ablation: need at least 5 seeds, got " +
                                    std::to_string(seeds.size()));
    }
    AblationReport report;
    report.name_a = name_a;
    report.name_b = name_b;
    // One shared dataset instance; seeds vary initialization and batch order,
    // so the comparison is between training runs, not dataset draws.
    const Dataset train_set =
        options.control_task ? make_lowfreq_control_dataset(options.train_size, 1001)
                             : make_synthetic_freq_dataset(options.train_size, 1001);
    const Dataset test_set =
        options.control_task ? make_lowfreq_control_dataset(options.test_size, 1002)
                             : make_synthetic_freq_dataset(options.test_size, 1002);

    {
        Network probe_a = build(spec_a, seeds.front());
        Network probe_b = build(spec_b, seeds.front());
        if (probe_a.param_count() != probe_b.param_count()) {
            throw std::runtime_error("ablation: variants are not parameter-matched (" +
                                     std::to_string(probe_a.param_count()) + " vs " +
                                     std::to_string(probe_b.param_count()) + ")");
        }
    }

    // Runs are independent (own nets and generators, read-only datasets), so
    // they shard across workers; results land in fixed slots and are
    // identical for any worker count.
    struct Job {
        const ArchSpec* spec;
        std::uint64_t seed;
        double* out;
    };
    report.seeds.resize(seeds.size());
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        report.seeds[i].seed = seeds[i];
        jobs.push_back({&spec_a, seeds[i], &report.seeds[i].acc_a});
        jobs.push_back({&spec_b, seeds[i], &report.seeds[i].acc_b});
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            try {
                TrainConfig cfg = options.train;
                cfg.seed = jobs[j].seed;
                Network net = build(*jobs[j].spec, jobs[j].seed);
                const TrainResult res = train(net, train_set, test_set, cfg);
                // converged-plateau estimate: mean test accuracy over the
                // final three epochs
                const std::size_t n = res.history.size();
                const std::size_t take = std::min<std::size_t>(3, n);
                double acc = 0.0;
                for (std::size_t e = n - take; e < n; ++e)
                    acc += res.history[e].test_acc;
                *jobs[j].out = acc / static_cast<double>(take);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    const std::size_t n_workers =
        std::max<std::size_t>(1, std::min<std::size_t>(jobs.size(),
                                                       std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w + 1 < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return report;
}

}  // namespace

AblationReport pooling_ablation(const std::vector<std::uint64_t>& seeds,
                                const AblationOptions& options) {
    const ArchSpec max_spec =
        ablation_arch(TokenMixKind::MaxPool, PatchEmbedVariant::Orig, options.timesteps);
    const ArchSpec avg_spec =
        ablation_arch(TokenMixKind::AvgPool, PatchEmbedVariant::Orig, options.timesteps);
    return run_matched_ablation("maxpool", max_spec, "avgpool", avg_spec, seeds, options);
}

AblationReport patch_embed_ablation(const std::vector<std::uint64_t>& seeds,
                                    const AblationOptions& options) {
    const ArchSpec max_spec =
        ablation_arch(TokenMixKind::Identity, PatchEmbedVariant::Max, options.timesteps);
    const ArchSpec orig_spec =
        ablation_arch(TokenMixKind::Identity, PatchEmbedVariant::Orig, options.timesteps);
    return run_matched_ablation("embed-max", max_spec, "embed-orig", orig_spec, seeds,
                                options);
}

}  // namespace spikelab

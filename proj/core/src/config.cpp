#include "spikelab/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace spikelab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ParsedConfig ParsedConfig::parse(const std::string& text) {
    ParsedConfig cfg;
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError(line_no, "malformed section header '" + raw + "'");
            }
            ConfigSection s;
            s.name = trim(line.substr(1, line.size() - 2));
            s.line = line_no;
            cfg.sections.push_back(std::move(s));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(line_no, "expected 'key = value', got '" + raw + "'");
        }
        if (cfg.sections.empty()) {
            throw ConfigError(line_no, "key-value pair outside any [section]");
        }
        ConfigEntry e;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = line_no;
        if (e.key.empty()) throw ConfigError(line_no, "empty key");
        for (const ConfigEntry& prev : cfg.sections.back().entries) {
            if (prev.key == e.key) {
                throw ConfigError(line_no, "duplicate key '" + e.key + "' in [" +
                                               cfg.sections.back().name + "]");
            }
        }
        cfg.sections.back().entries.push_back(std::move(e));
    }
    return cfg;
}

ParsedConfig ParsedConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse(buf.str());
}

const ConfigSection* ParsedConfig::find(const std::string& name) const {
    for (const ConfigSection& s : sections) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::vector<const ConfigSection*> ParsedConfig::find_all(const std::string& name) const {
    std::vector<const ConfigSection*> out;
    for (const ConfigSection& s : sections) {
        if (s.name == name) out.push_back(&s);
    }
    return out;
}

SectionReader::SectionReader(const ConfigSection& section)
    : section_(section), used_(section.entries.size(), false) {}

std::size_t SectionReader::line_of(const std::string& key) const {
    for (const ConfigEntry& e : section_.entries) {
        if (e.key == key) return e.line;
    }
    return section_.line;
}

std::optional<std::string> SectionReader::optional(const std::string& key) {
    for (std::size_t i = 0; i < section_.entries.size(); ++i) {
        if (section_.entries[i].key == key) {
            used_[i] = true;
            return section_.entries[i].value;
        }
    }
    return std::nullopt;
}

std::string SectionReader::require(const std::string& key) {
    auto v = optional(key);
    if (!v) {
        throw ConfigError(section_.line,
                          "missing key '" + key + "' in [" + section_.name + "]");
    }
    return *v;
}

namespace {

double parse_double_or_throw(const std::string& v, const std::string& key,
                             std::size_t line) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(line, "key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::size_t parse_size_or_throw(const std::string& v, const std::string& key,
                                std::size_t line) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size() || d < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(d);
    } catch (const std::exception&) {
        throw ConfigError(line, "key '" + key + "': expected a non-negative integer, got '" +
                                    v + "'");
    }
}

}  // namespace

double SectionReader::require_double(const std::string& key) {
    return parse_double_or_throw(require(key), key, line_of(key));
}

double SectionReader::optional_double(const std::string& key, double fallback) {
    auto v = optional(key);
    if (!v) return fallback;
    return parse_double_or_throw(*v, key, line_of(key));
}

std::size_t SectionReader::require_size(const std::string& key) {
    return parse_size_or_throw(require(key), key, line_of(key));
}

std::size_t SectionReader::optional_size(const std::string& key, std::size_t fallback) {
    auto v = optional(key);
    if (!v) return fallback;
    return parse_size_or_throw(*v, key, line_of(key));
}

std::uint64_t SectionReader::optional_u64(const std::string& key, std::uint64_t fallback) {
    auto v = optional(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long d = std::stoull(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument(*v);
        return static_cast<std::uint64_t>(d);
    } catch (const std::exception&) {
        throw ConfigError(line_of(key), "key '" + key +
                                            "': expected an unsigned integer, got '" + *v +
                                            "'");
    }
}

void SectionReader::finish() {
    for (std::size_t i = 0; i < section_.entries.size(); ++i) {
        if (!used_[i]) {
            throw ConfigError(section_.entries[i].line,
                              "unknown key '" + section_.entries[i].key + "' in [" +
                                  section_.name + "]");
        }
    }
}

// ---- enum parsing ------------------------------------------------------------------

std::string token_mixer_to_string(TokenMixKind kind, std::size_t window) {
    switch (kind) {
        case TokenMixKind::Identity: return "identity";
        case TokenMixKind::DWC: return "dwc-" + std::to_string(window);
        case TokenMixKind::SSA: return "ssa";
        case TokenMixKind::MaxPool: return "maxpool";
        case TokenMixKind::AvgPool: return "avgpool";
    }
    return "identity";
}

void parse_token_mixer(const std::string& text, std::size_t line, TokenMixKind& kind,
                       std::size_t& window) {
    window = 3;
    if (text == "identity") {
        kind = TokenMixKind::Identity;
    } else if (text == "ssa") {
        kind = TokenMixKind::SSA;
    } else if (text == "maxpool") {
        kind = TokenMixKind::MaxPool;
    } else if (text == "avgpool") {
        kind = TokenMixKind::AvgPool;
    } else if (text.rfind("dwc-", 0) == 0) {
        kind = TokenMixKind::DWC;
        try {
            window = static_cast<std::size_t>(std::stoull(text.substr(4)));
        } catch (const std::exception&) {
            throw ConfigError(line, "bad DWC kernel in token_mixer '" + text + "'");
        }
    } else {
        throw ConfigError(line, "unknown token_mixer '" + text +
                                    "' (expected identity|dwc-k|ssa|maxpool|avgpool)");
    }
}

namespace {

PatchEmbedVariant parse_patch_embed(const std::string& text, std::size_t line) {
    if (text == "orig") return PatchEmbedVariant::Orig;
    if (text == "max") return PatchEmbedVariant::Max;
    if (text == "max+") return PatchEmbedVariant::MaxPlus;
    throw ConfigError(line, "unknown patch_embed '" + text + "' (expected orig|max|max+)");
}

ShortcutKind parse_shortcut(const std::string& text, std::size_t line) {
    if (text == "membrane") return ShortcutKind::Membrane;
    if (text == "prespike") return ShortcutKind::PreSpike;
    if (text == "vanilla") return ShortcutKind::Vanilla;
    throw ConfigError(line,
                      "unknown shortcut '" + text + "' (expected membrane|prespike|vanilla)");
}

NeuronKind parse_neuron_kind(const std::string& text, std::size_t line) {
    if (text == "lif") return NeuronKind::LIF;
    if (text == "if") return NeuronKind::IF;
    throw ConfigError(line, "unknown neuron '" + text + "' (expected lif|if)");
}

}  // namespace

ArchSpec arch_from_config(const ParsedConfig& cfg) {
    const ConfigSection* model = cfg.find("model");
    if (!model) throw ConfigError(1, "missing [model] section");
    ArchSpec spec;
    SectionReader r(*model);
    spec.timesteps = r.require_size("timesteps");
    spec.num_classes = r.require_size("num_classes");
    spec.input_channels = r.require_size("input_channels");
    spec.input_height = r.require_size("input_height");
    spec.input_width = r.require_size("input_width");
    if (auto v = r.optional("neuron")) {
        spec.neuron.kind = parse_neuron_kind(*v, model->line);
    }
    spec.neuron.beta = r.optional_double("beta", spec.neuron.beta);
    spec.neuron.v_th = r.optional_double("threshold", spec.neuron.v_th);
    spec.neuron.surrogate_alpha =
        r.optional_double("surrogate_alpha", spec.neuron.surrogate_alpha);
    if (auto v = r.optional("shortcut")) {
        spec.shortcut = parse_shortcut(*v, model->line);
    }
    spec.mlp_expansion = r.optional_double("mlp_expansion", spec.mlp_expansion);
    spec.ssa_scale = r.optional_double("ssa_scale", spec.ssa_scale);
    r.finish();

    for (const ConfigSection* s : cfg.find_all("stage")) {
        SectionReader sr(*s);
        StageSpec stage;
        stage.patch_embed = parse_patch_embed(sr.require("patch_embed"), s->line);
        parse_token_mixer(sr.require("token_mixer"), s->line, stage.token_mixer,
                          stage.mixer_window);
        stage.blocks = sr.require_size("blocks");
        stage.channels = sr.require_size("channels");
        sr.finish();
        spec.stages.push_back(stage);
    }
    if (spec.stages.empty()) throw ConfigError(model->line, "no [stage] sections");
    spec.validate();
    return spec;
}

std::string arch_to_config(const ArchSpec& spec) {
    std::ostringstream os;
    os << "[model]\n";
    os << "timesteps = " << spec.timesteps << "\n";
    os << "num_classes = " << spec.num_classes << "\n";
    os << "input_channels = " << spec.input_channels << "\n";
    os << "input_height = " << spec.input_height << "\n";
    os << "input_width = " << spec.input_width << "\n";
    os << "neuron = " << (spec.neuron.kind == NeuronKind::LIF ? "lif" : "if") << "\n";
    os << "beta = " << fmt_double(spec.neuron.beta) << "\n";
    os << "threshold = " << fmt_double(spec.neuron.v_th) << "\n";
    os << "surrogate_alpha = " << fmt_double(spec.neuron.surrogate_alpha) << "\n";
    os << "shortcut = " << to_string(spec.shortcut) << "\n";
    os << "mlp_expansion = " << fmt_double(spec.mlp_expansion) << "\n";
    os << "ssa_scale = " << fmt_double(spec.ssa_scale) << "\n";
    for (const StageSpec& s : spec.stages) {
        os << "\n[stage]\n";
        os << "patch_embed = " << to_string(s.patch_embed) << "\n";
        os << "token_mixer = " << token_mixer_to_string(s.token_mixer, s.mixer_window)
           << "\n";
        os << "blocks = " << s.blocks << "\n";
        os << "channels = " << s.channels << "\n";
    }
    return os.str();
}

ExperimentConfig experiment_from_config(const ParsedConfig& cfg) {
    ExperimentConfig exp;
    exp.arch = arch_from_config(cfg);
    if (const ConfigSection* t = cfg.find("train")) {
        SectionReader r(*t);
        exp.train.epochs = r.optional_size("epochs", exp.train.epochs);
        exp.train.batch_size = r.optional_size("batch_size", exp.train.batch_size);
        exp.train.learning_rate = r.optional_double("learning_rate", exp.train.learning_rate);
        exp.train.weight_decay = r.optional_double("weight_decay", exp.train.weight_decay);
        exp.train.label_smoothing =
            r.optional_double("label_smoothing", exp.train.label_smoothing);
        exp.train.seed = r.optional_u64("seed", exp.train.seed);
        if (auto v = r.optional("schedule")) {
            if (*v == "constant") {
                exp.train.schedule = LrSchedule::Constant;
            } else if (*v == "cosine") {
                exp.train.schedule = LrSchedule::Cosine;
            } else {
                throw ConfigError(t->line, "unknown schedule '" + *v + "'");
            }
        }
        if (auto v = r.optional("optimizer")) {
            if (*v == "sgd") {
                exp.train.optimizer = OptimizerKind::Sgd;
            } else if (*v == "adamw") {
                exp.train.optimizer = OptimizerKind::AdamW;
            } else {
                throw ConfigError(t->line, "unknown optimizer '" + *v + "'");
            }
        }
        r.finish();
        exp.train.validate();
    }
    if (const ConfigSection* d = cfg.find("data")) {
        SectionReader r(*d);
        if (auto v = r.optional("kind")) {
            if (*v != "synthetic_freq" && *v != "lowfreq_control") {
                throw ConfigError(d->line, "unknown data kind '" + *v + "'");
            }
            exp.data_kind = *v;
        }
        exp.train_size = r.optional_size("train_size", exp.train_size);
        exp.test_size = r.optional_size("test_size", exp.test_size);
        exp.data_seed = r.optional_u64("seed", exp.data_seed);
        r.finish();
    }
    return exp;
}

}  // namespace spikelab

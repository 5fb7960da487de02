#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikelab/model.hpp"
#include "spikelab/train.hpp"

namespace spikelab {

/// Parse failure carrying the 1-based line number of the offending input.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::size_t line, const std::string& message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct ConfigEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct ConfigSection {
    std::string name;
    std::size_t line = 0;
    std::vector<ConfigEntry> entries;
};

/// Flat sectioned key-value text: `[section]` headers, `key = value` lines,
/// `#` comments. Repeated sections are kept in order.
struct ParsedConfig {
    std::vector<ConfigSection> sections;

    static ParsedConfig parse(const std::string& text);
    static ParsedConfig parse_file(const std::string& path);

    const ConfigSection* find(const std::string& name) const;
    std::vector<const ConfigSection*> find_all(const std::string& name) const;
};

/// Typed access to one section; every key must be consumed, unknown keys are
/// rejected when finish() runs.
class SectionReader {
public:
    explicit SectionReader(const ConfigSection& section);
    std::string require(const std::string& key);
    std::optional<std::string> optional(const std::string& key);
    double require_double(const std::string& key);
    double optional_double(const std::string& key, double fallback);
    std::size_t require_size(const std::string& key);
    std::size_t optional_size(const std::string& key, std::size_t fallback);
    std::uint64_t optional_u64(const std::string& key, std::uint64_t fallback);
    void finish();  // throws ConfigError on unconsumed keys

private:
    const ConfigSection& section_;
    std::vector<bool> used_;
    std::size_t line_of(const std::string& key) const;
};

// ---- model / experiment bindings ------------------------------------------------

ArchSpec arch_from_config(const ParsedConfig& cfg);
std::string arch_to_config(const ArchSpec& spec);

struct ExperimentConfig {
    ArchSpec arch;
    TrainConfig train;
    std::string data_kind = "synthetic_freq";
    std::size_t train_size = 2000;
    std::size_t test_size = 500;
    std::uint64_t data_seed = 1;
};

/// Reads [model]/[stage]+ plus optional [train] and [data] sections.
ExperimentConfig experiment_from_config(const ParsedConfig& cfg);

std::string token_mixer_to_string(TokenMixKind kind, std::size_t window);
void parse_token_mixer(const std::string& text, std::size_t line, TokenMixKind& kind,
                       std::size_t& window);

}  // namespace spikelab

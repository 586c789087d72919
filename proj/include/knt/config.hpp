#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knt/experiment.hpp"

#include <json.hpp>

namespace knt {

/// Everything a CLI run needs. Built from a JSON document, then flag overrides.
struct ExperimentConfig {
    SynthConfig synth;
    std::optional<std::filesystem::path> manifest;  // replaces the synthetic source when set

    DefenseSpec defense;
    std::optional<MasterKey> key;

    EvalProtocol protocol;
    AttackSetup attack;

    std::vector<std::size_t> sweep_layers{1, 2, 3, 4};
    std::vector<std::size_t> sweep_dims;  // empty: the channel count
    std::vector<Method> sweep_methods{Method::knt};

    std::vector<std::uint64_t> key_seeds{0};
    std::vector<std::uint64_t> eval_seeds{0};

    std::filesystem::path out_dir = "knt_out";
    int threads = 0;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Unknown keys and wrongly typed values raise ConfigError with a dotted path
/// such as "defense.epsilon".
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Reproducible echo of the config. The key appears only as its fingerprint.
nlohmann::ordered_json echo_config(const ExperimentConfig& cfg);

/// Dataset named by the config: the manifest when given, otherwise generated.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Protocol with every evaluation seed set to `eval_seed`.
EvalProtocol protocol_for_seed(const EvalProtocol& base, std::uint64_t eval_seed);

}  // namespace knt

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sled/model_config.hpp"
#include "sled/model.hpp"
#include "sled/pps.hpp"
#include "sled/world.hpp"

namespace sled {

struct EvalConfig {
    std::size_t gamma = 1;
    std::size_t delta = 15;      // 15 for gamma=1, 7 for gamma>1
    double alpha_min = -0.5;
    double alpha_max = 1.25;
    std::size_t steps = 8;
    std::vector<std::uint64_t> seeds = {101};

    std::vector<double> alpha_list() const; // delta evenly spaced values
};

/// Whole-run configuration: model dims, world spec, pretraining and
/// adapter-training hyperparameters, evaluation grid.
struct Config {
    ModelConfig model;
    WorldSpec world;
    PretrainOptions pretrain;
    Hyperparams train;
    EvalConfig eval;

    /// Consistency across sections (vocab covers the world's tokens,
    /// prompts fit the text length with at least one pad, ...).
    void validate() const;
};

Config default_config();

Config load_config(const std::string& path);
std::string config_to_json(const Config& config);
void save_config(const std::string& path, const Config& config);

/// FNV-1a over the canonical JSON dump; embedded in every output manifest.
std::string config_hash(const Config& config);

/// Applies the SLED_SEED environment override (when set) to every seed
/// field. Returns true when an override happened.
bool apply_seed_override(Config& config);

} // namespace sled

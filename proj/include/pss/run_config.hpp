#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pss/data.hpp"
#include "pss/trainer.hpp"

namespace pss {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything needed to reproduce a run. Serialized as a flat JSON object.
struct RunConfig {
    std::string dataset = "mnist";  // mnist | mnist_variation
    std::string data_dir;
    std::vector<std::size_t> layers{312, 128};
    double leaky_slope = kDefaultLeakySlope;
    TrainerConfig trainer;
    StreamOptions stream;
    std::optional<std::uint64_t> noise_seed;  // defaults to the run seed
    std::string noise_cache;                  // optional cache file for the noisy set
    std::string out_dir = "runs/latest";
    bool baseline = false;

    std::uint64_t seed() const noexcept { return trainer.seed; }
    std::uint64_t resolved_noise_seed() const noexcept { return noise_seed.value_or(trainer.seed); }
    void set_seed(std::uint64_t seed) noexcept;

    // Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
};

// "mnist" and "mnist-variation": two hidden layers (312, 128), drift
// thresholds (0.3, 0.25), drift deltas (0.0015, 0.25).
RunConfig preset(const std::string& name);

// Applies flat keys; a "preset" key is applied before the others. Unknown
// keys and ill-typed values raise ConfigError.
void apply_overrides(RunConfig& config, const nlohmann::json& flat);
// Parses "key=value"; the value is read as JSON, falling back to a string.
void apply_override(RunConfig& config, const std::string& assignment);

RunConfig load_run_config(const std::string& path, std::optional<std::string> preset_name = {});

struct RunData {
    ImageDataset train;
    ImageDataset test;
};

// config.data_dir, else $PSS_DATA_DIR; DataError when neither is set.
std::filesystem::path resolve_data_dir(const RunConfig& config);

// Loads the four MNIST IDX files from the data directory. For
// mnist_variation, adds noise to both splits (the test split uses a seed
// derived from the noise seed) and reuses `noise_cache` files when present.
RunData load_run_data(const RunConfig& config);

}  // namespace pss

#include "pss/run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace pss {

void RunConfig::set_seed(std::uint64_t seed) noexcept {
    trainer.seed = seed;
    stream.seed = seed;
}

void RunConfig::validate() const {
    if (dataset != "mnist" && dataset != "mnist_variation") {
        throw ConfigError("dataset must be mnist or mnist_variation, got '" + dataset + "'");
    }
    if (layers.empty()) throw ConfigError("layers must list at least one hidden layer");
    for (std::size_t s : layers) {
        if (s == 0) throw ConfigError("hidden layer sizes must be >= 1");
    }
    if (trainer.drift_thresholds.size() != layers.size() ||
        trainer.drift_deltas.size() != layers.size()) {
        throw ConfigError("drift_thresholds and drift_deltas need one entry per hidden layer");
    }
    try {
        trainer.validate(layers.size());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(stream.negative_ratio > 0.0)) throw ConfigError("negative_ratio must be > 0");
    if (stream.test_count == 0) throw ConfigError("test_count must be >= 1");
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = trainer.to_json();
    j["dataset"] = dataset;
    j["data_dir"] = data_dir;
    j["layers"] = layers;
    j["leaky_slope"] = leaky_slope;
    j["test_count"] = stream.test_count;
    j["negative_ratio"] = stream.negative_ratio;
    j["max_positives_per_task"] = stream.max_positives_per_task;
    j["random_test_subset"] = stream.random_test_subset;
    j["noise_seed"] = resolved_noise_seed();
    j["noise_cache"] = noise_cache;
    j["baseline"] = baseline;
    return j;
}

RunConfig preset(const std::string& name) {
    RunConfig c;
    c.layers = {312, 128};
    c.trainer.drift_thresholds = {0.3, 0.25};
    c.trainer.drift_deltas = {0.0015, 0.25};
    if (name == "mnist") {
        c.dataset = "mnist";
    } else if (name == "mnist-variation" || name == "mnist_variation") {
        c.dataset = "mnist_variation";
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected mnist or mnist-variation)");
    }
    return c;
}

namespace {

template <typename T>
T read(const nlohmann::json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void apply_key(RunConfig& c, const std::string& key, const nlohmann::json& v) {
    auto& t = c.trainer;
    if (key == "dataset") c.dataset = read<std::string>(v, key);
    else if (key == "data_dir") c.data_dir = read<std::string>(v, key);
    else if (key == "layers") c.layers = read<std::vector<std::size_t>>(v, key);
    else if (key == "leaky_slope") c.leaky_slope = read<double>(v, key);
    else if (key == "learning_rate") t.learning_rate = read<double>(v, key);
    else if (key == "momentum") t.momentum = read<double>(v, key);
    else if (key == "batch_size") t.batch_size = read<std::size_t>(v, key);
    else if (key == "epochs_per_task") t.epochs_per_task = read<std::size_t>(v, key);
    else if (key == "drift_thresholds") t.drift_thresholds = read<std::vector<double>>(v, key);
    else if (key == "drift_deltas") t.drift_deltas = read<std::vector<double>>(v, key);
    else if (key == "magnitude_freeze") t.magnitude_freeze = read<double>(v, key);
    else if (key == "splitting") t.splitting = read<bool>(v, key);
    else if (key == "shuffle") t.shuffle = read<bool>(v, key);
    else if (key == "seed") c.set_seed(read<std::uint64_t>(v, key));
    else if (key == "noise_seed") c.noise_seed = read<std::uint64_t>(v, key);
    else if (key == "noise_cache") c.noise_cache = read<std::string>(v, key);
    else if (key == "test_count") c.stream.test_count = read<std::size_t>(v, key);
    else if (key == "negative_ratio") c.stream.negative_ratio = read<double>(v, key);
    else if (key == "max_positives_per_task") c.stream.max_positives_per_task = read<std::size_t>(v, key);
    else if (key == "random_test_subset") c.stream.random_test_subset = read<bool>(v, key);
    else if (key == "out") c.out_dir = read<std::string>(v, key);
    else if (key == "baseline") c.baseline = read<bool>(v, key);
    else if (key == "split_init") {
        try {
            t.split_init = parse_split_init(read<std::string>(v, key));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "freeze_policy") {
        try {
            t.freeze_policy = parse_freeze_policy(read<std::string>(v, key));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

}  // namespace

void apply_overrides(RunConfig& config, const nlohmann::json& flat) {
    if (!flat.is_object()) throw ConfigError("config must be a flat JSON object");
    if (auto it = flat.find("preset"); it != flat.end()) {
        const RunConfig base = preset(read<std::string>(*it, "preset"));
        config.dataset = base.dataset;
        config.layers = base.layers;
        config.trainer.drift_thresholds = base.trainer.drift_thresholds;
        config.trainer.drift_deltas = base.trainer.drift_deltas;
    }
    for (const auto& [key, value] : flat.items()) {
        if (key != "preset") apply_key(config, key, value);
    }
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    apply_overrides(config, nlohmann::json{{key, value}});
}

RunConfig load_run_config(const std::string& path, std::optional<std::string> preset_name) {
    RunConfig config = preset(preset_name.value_or("mnist"));
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
    if (preset_name && doc.contains("preset")) doc.erase("preset");
    apply_overrides(config, doc);
    return config;
}

std::filesystem::path resolve_data_dir(const RunConfig& config) {
    if (!config.data_dir.empty()) return config.data_dir;
    if (const char* env = std::getenv("PSS_DATA_DIR"); env != nullptr && *env != '\0') return env;
    throw DataError("no data directory: pass --data-dir or set PSS_DATA_DIR");
}

namespace {

ImageDataset noisy_split(const ImageDataset& clean, std::uint64_t seed, const std::string& cache_prefix,
                         const char* split) {
    if (cache_prefix.empty()) return make_variation(clean, seed);
    const std::filesystem::path path = cache_prefix + "-" + split + ".bin";
    const std::uint64_t sum = dataset_checksum(clean);
    if (auto cached = load_variation_cache(path, seed, sum)) return std::move(*cached);
    ImageDataset noisy = make_variation(clean, seed);
    save_variation_cache(path, noisy, sum);
    return noisy;
}

}  // namespace

RunData load_run_data(const RunConfig& config) {
    const std::filesystem::path dir = resolve_data_dir(config);
    RunData data{load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                 load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
    if (config.dataset == "mnist_variation") {
        const std::uint64_t seed = config.resolved_noise_seed();
        data.train = noisy_split(data.train, seed, config.noise_cache, "train");
        data.test = noisy_split(data.test, seed ^ 0x9e3779b97f4a7c15ULL, config.noise_cache, "test");
    }
    return data;
}

}  // namespace pss

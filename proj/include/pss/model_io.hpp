#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pss/plasticity.hpp"

namespace pss {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Container layout:
//   "PSSNET1\n"
//   uint64 little-endian: header length in bytes
//   JSON header (shapes, generations, output registry, freeze state,
//                generator state, payload size and FNV-1a checksum)
//   payload: per layer, float64 weights and biases, then uint8 masks.
inline constexpr char kModelMagic[] = "PSSNET1\n";

void save_model(const PlasticNetwork& network, const std::filesystem::path& path,
                const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedModel {
    PlasticNetwork network;
    nlohmann::json metadata;
};

LoadedModel load_model(const std::filesystem::path& path);

// Per-layer neuron counts by generation, mask densities, output registry.
nlohmann::json topology_json(const PlasticNetwork& network);

}  // namespace pss

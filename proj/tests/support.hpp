#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pss/matrix.hpp"
#include "pss/numerics.hpp"
#include "reference_net.hpp"

namespace testing {

inline ref::Layer to_ref(const pss::MaskedLayer& layer) {
    ref::Layer r;
    r.w.assign(layer.fan_out(), std::vector<double>(layer.fan_in()));
    for (std::size_t o = 0; o < layer.fan_out(); ++o) {
        for (std::size_t i = 0; i < layer.fan_in(); ++i) r.w[o][i] = layer.weights(o, i);
    }
    r.b = layer.bias;
    r.identity = layer.activation == pss::Activation::identity;
    r.slope = layer.slope;
    return r;
}

inline std::vector<ref::Layer> to_ref(std::span<const pss::MaskedLayer> layers) {
    std::vector<ref::Layer> out;
    for (const auto& l : layers) out.push_back(to_ref(l));
    return out;
}

inline std::vector<std::vector<double>> rows_of(const pss::Matrix& m) {
    std::vector<std::vector<double>> out;
    for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
    return out;
}

inline pss::Matrix random_batch(std::size_t n, std::size_t dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    pss::Matrix m(n, dims);
    for (double& v : m.values()) v = normal(rng);
    return m;
}

// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("pss_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing

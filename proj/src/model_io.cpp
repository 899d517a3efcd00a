#include "pss/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace pss {

static_assert(std::endian::native == std::endian::little,
              "model payload is written in host order and assumes little-endian");

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void append_doubles(std::string& out, std::span<const double> v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void append_mask(std::string& out, std::span<const double> v) {
    for (double m : v) out.push_back(m != 0.0 ? '\1' : '\0');
}

class PayloadReader {
public:
    explicit PayloadReader(const std::string& bytes) : bytes_(bytes) {}

    void doubles(std::span<double> out) {
        const std::size_t n = out.size() * sizeof(double);
        need(n);
        std::memcpy(out.data(), bytes_.data() + pos_, n);
        pos_ += n;
    }
    void mask(std::span<double> out) {
        need(out.size());
        for (double& m : out) {
            const char c = bytes_[pos_++];
            if (c != 0 && c != 1) throw ModelError("corrupt mask byte in model payload");
            m = c;
        }
    }
    bool exhausted() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw ModelError("model payload is truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_model(const PlasticNetwork& network, const std::filesystem::path& path,
                const nlohmann::json& metadata) {
    using nlohmann::json;
    std::string payload;
    json layers = json::array();
    for (const MaskedLayer& layer : network.layers()) {
        layers.push_back({{"rows", layer.fan_out()},
                          {"cols", layer.fan_in()},
                          {"activation", layer.activation == Activation::identity ? "identity" : "leaky_relu"},
                          {"slope", layer.slope}});
        append_doubles(payload, layer.weights.values());
        append_doubles(payload, layer.bias);
        append_mask(payload, layer.connectivity.values());
        append_mask(payload, layer.trainable.values());
        append_mask(payload, layer.bias_trainable);
    }
    json outputs = json::array();
    for (const auto& [task, pos] : network.outputs()) outputs.push_back({task, pos});
    const FreezeState& fs = network.freeze_state();

    json header = {{"version", 1},
                   {"layers", layers},
                   {"generations", network.generations()},
                   {"outputs", outputs},
                   {"freeze", {{"scope", fs.scope == FreezeScope::pss_only ? "pss_only" : "full_truncated"},
                               {"generation", fs.generation},
                               {"task", fs.task}}},
                   {"rng_state", network.rng_state()},
                   {"payload_bytes", payload.size()},
                   {"payload_fnv1a", fnv1a(payload)},
                   {"metadata", metadata}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot write model " + path.string());
    out.write(kModelMagic, sizeof kModelMagic - 1);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw ModelError("model write failed: " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open model " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const std::size_t magic_len = sizeof kModelMagic - 1;
    if (bytes.size() < magic_len + 8 || bytes.compare(0, magic_len, kModelMagic) != 0) {
        throw ModelError(path.string() + ": not a PSSNET1 model file");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + magic_len, sizeof len);
    const std::size_t header_at = magic_len + 8;
    if (len > bytes.size() - header_at) throw ModelError(path.string() + ": truncated header");

    try {
        const auto header = nlohmann::json::parse(bytes.substr(header_at, len));
        if (header.at("version").get<int>() != 1) throw ModelError("unsupported model version");
        const std::string payload = bytes.substr(header_at + len);
        if (payload.size() != header.at("payload_bytes").get<std::size_t>() ||
            fnv1a(payload) != header.at("payload_fnv1a").get<std::uint64_t>()) {
            throw ModelError(path.string() + ": payload checksum mismatch (corrupt file)");
        }

        PayloadReader reader(payload);
        std::vector<MaskedLayer> layers;
        for (const auto& spec : header.at("layers")) {
            const auto rows = spec.at("rows").get<std::size_t>();
            const auto cols = spec.at("cols").get<std::size_t>();
            const auto act = spec.at("activation").get<std::string>() == "identity"
                                 ? Activation::identity
                                 : Activation::leaky_relu;
            MaskedLayer layer = MaskedLayer::dense(rows, cols, act, spec.at("slope").get<double>());
            reader.doubles(layer.weights.values());
            reader.doubles(layer.bias);
            reader.mask(layer.connectivity.values());
            reader.mask(layer.trainable.values());
            reader.mask(layer.bias_trainable);
            layers.push_back(std::move(layer));
        }
        if (!reader.exhausted()) throw ModelError("trailing bytes in model payload");

        std::map<int, std::size_t> outputs;
        for (const auto& entry : header.at("outputs")) {
            outputs[entry.at(0).get<int>()] = entry.at(1).get<std::size_t>();
        }
        const auto& f = header.at("freeze");
        FreezeState freeze{f.at("scope").get<std::string>() == "pss_only" ? FreezeScope::pss_only
                                                                           : FreezeScope::full_truncated,
                           f.at("generation").get<int>(), f.at("task").get<int>()};
        auto net = PlasticNetwork::from_parts(
            std::move(layers), header.at("generations").get<std::vector<std::vector<int>>>(),
            std::move(outputs), freeze, header.at("rng_state").get<std::string>());
        return {std::move(net), header.at("metadata")};
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(path.string() + ": malformed header: " + e.what());
    } catch (const DimensionError& e) {
        throw ModelError(path.string() + ": inconsistent model: " + e.what());
    } catch (const NumericalError& e) {
        throw ModelError(path.string() + ": inconsistent model: " + e.what());
    }
}

nlohmann::json topology_json(const PlasticNetwork& network) {
    using nlohmann::json;
    json layers = json::array();
    const auto all = network.layers();
    for (std::size_t l = 0; l < network.hidden_count(); ++l) {
        const MaskedLayer& layer = all[l];
        const auto& gens = network.generations()[l];
        std::map<int, std::size_t> by_gen;
        for (int g : gens) ++by_gen[g];
        json counts = json::object();
        for (const auto& [g, n] : by_gen) counts[std::to_string(g)] = n;

        std::size_t connected = 0, newer_edges = 0, newer_connected = 0;
        for (std::size_t v = 0; v < layer.fan_out(); ++v) {
            for (std::size_t u = 0; u < layer.fan_in(); ++u) {
                const bool c = layer.connectivity(v, u) != 0.0;
                connected += c ? 1 : 0;
                if (l > 0 && network.generation(l - 1, u) > gens[v]) {
                    ++newer_edges;
                    newer_connected += c ? 1 : 0;
                }
            }
        }
        const double total = static_cast<double>(layer.weights.size());
        layers.push_back({{"index", l},
                          {"size", layer.fan_out()},
                          {"fan_in", layer.fan_in()},
                          {"generation_counts", counts},
                          {"generations", gens},
                          {"mask_density", total > 0 ? static_cast<double>(connected) / total : 0.0},
                          {"newer_to_older_edges", newer_edges},
                          {"newer_to_older_density",
                           newer_edges > 0 ? static_cast<double>(newer_connected) /
                                                 static_cast<double>(newer_edges)
                                           : 0.0}});
    }
    const MaskedLayer& out = network.output_layer();
    std::size_t out_connected = 0;
    for (double c : out.connectivity.values()) out_connected += c != 0.0 ? 1 : 0;
    json registry = json::array();
    for (const auto& [task, pos] : network.outputs()) registry.push_back({{"task", task}, {"position", pos}});

    return {{"input_dim", network.input_dim()},
            {"hidden_neurons", network.hidden_neuron_count()},
            {"parameters", network.parameter_count()},
            {"hidden_layers", layers},
            {"outputs",
             {{"count", network.output_count()},
              {"mask_density", out.weights.size() > 0 ? static_cast<double>(out_connected) /
                                                            static_cast<double>(out.weights.size())
                                                      : 1.0},
              {"registry", registry}}},
            {"freeze_scope", network.freeze_scope() == FreezeScope::pss_only ? "pss_only" : "full_truncated"}};
}

}  // namespace pss

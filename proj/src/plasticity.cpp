#include "pss/plasticity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace pss {

namespace {

bool on(double mask) noexcept { return mask != 0.0; }

double edge_allowed(int from_generation, int to_generation) noexcept {
    return from_generation > to_generation ? 0.0 : 1.0;
}

void check_hidden(const PlasticNetwork& network, const NeuronTag& neuron) {
    if (neuron.layer >= network.hidden_count() ||
        neuron.position >= network.layer_size(neuron.layer)) {
        throw PlasticityError("neuron (" + std::to_string(neuron.layer) + ", " +
                              std::to_string(neuron.position) + ") is not a hidden neuron");
    }
}

// Random values for the allowed outgoing edges of a freshly created neuron.
// Edges into hidden neurons that predate the snapshot and into other tasks'
// output nodes stay at 0 so existing outputs are untouched.
void init_outgoing(PlasticNetwork& network, const NeuronTag& created, const Snapshot& snapshot) {
    const std::size_t next = created.layer + 1;
    MaskedLayer& layer = network.layers()[next];
    const bool into_outputs = next == network.hidden_count();
    std::normal_distribution<double> normal(0.0, he_stddev(layer.fan_in()));
    for (std::size_t v = 0; v < layer.fan_out(); ++v) {
        if (!on(layer.connectivity(v, created.position))) continue;
        bool randomize = false;
        if (into_outputs) {
            const auto owner = network.task_of_output(v);
            randomize = owner && *owner == created.generation;
        } else {
            randomize = !snapshot.covers(next, v);
        }
        layer.weights(v, created.position) = randomize ? normal(network.rng()) : 0.0;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// PlasticNetwork

PlasticNetwork::PlasticNetwork(std::size_t inputs, std::vector<std::size_t> hidden,
                               std::uint64_t seed, double slope)
    : rng_(seed) {
    if (inputs == 0) throw DimensionError("network needs at least one input");
    if (hidden.empty()) throw DimensionError("network needs at least one hidden layer");
    std::size_t fan_in = inputs;
    for (std::size_t size : hidden) {
        if (size == 0) throw DimensionError("hidden layer sizes must be >= 1");
        MaskedLayer layer = MaskedLayer::dense(size, fan_in, Activation::leaky_relu, slope);
        init_he(layer, rng_);
        layers_.push_back(std::move(layer));
        generations_.emplace_back(size, 0);
        last_split_task_.emplace_back(size, -1);
        fan_in = size;
    }
    layers_.push_back(MaskedLayer::dense(0, fan_in, Activation::identity, slope));
}

PlasticNetwork PlasticNetwork::from_parts(std::vector<MaskedLayer> layers,
                                          std::vector<std::vector<int>> generations,
                                          std::map<int, std::size_t> outputs, FreezeState freeze,
                                          const std::string& rng_state) {
    if (layers.size() < 2) throw DimensionError("network needs a hidden and an output layer");
    if (generations.size() != layers.size() - 1) {
        throw DimensionError("generation table does not match hidden layer count");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].validate();
        if (l > 0 && layers[l].fan_in() != layers[l - 1].fan_out()) {
            throw DimensionError("layer " + std::to_string(l) + " fan-in does not chain");
        }
        if (l + 1 < layers.size() && generations[l].size() != layers[l].fan_out()) {
            throw DimensionError("generation count mismatch in layer " + std::to_string(l));
        }
    }
    std::set<std::size_t> positions;
    for (const auto& [task, pos] : outputs) {
        if (task < 0 || pos >= layers.back().fan_out() || !positions.insert(pos).second) {
            throw DimensionError("invalid output registry");
        }
    }
    if (positions.size() != layers.back().fan_out()) {
        throw DimensionError("output registry does not cover every output node");
    }

    PlasticNetwork net;
    net.layers_ = std::move(layers);
    net.generations_ = std::move(generations);
    for (const auto& g : net.generations_) net.last_split_task_.emplace_back(g.size(), -1);
    net.outputs_ = std::move(outputs);
    net.freeze_ = freeze;
    if (!rng_state.empty()) {
        std::istringstream in(rng_state);
        in >> net.rng_;
        if (!in) throw DimensionError("invalid generator state");
    }
    return net;
}

std::vector<std::size_t> PlasticNetwork::hidden_sizes() const {
    std::vector<std::size_t> sizes;
    for (std::size_t l = 0; l < hidden_count(); ++l) sizes.push_back(layers_[l].fan_out());
    return sizes;
}

std::size_t PlasticNetwork::hidden_neuron_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < hidden_count(); ++l) n += layers_[l].fan_out();
    return n;
}

std::size_t PlasticNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
        for (double c : layer.connectivity.values()) n += on(c) ? 1 : 0;
        n += layer.bias.size();
    }
    return n;
}

int PlasticNetwork::max_generation() const {
    int g = 0;
    for (const auto& layer : generations_) {
        for (int x : layer) g = std::max(g, x);
    }
    return g;
}

std::optional<std::size_t> PlasticNetwork::output_of(int task) const {
    auto it = outputs_.find(task);
    if (it == outputs_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> PlasticNetwork::task_of_output(std::size_t position) const {
    for (const auto& [task, pos] : outputs_) {
        if (pos == position) return task;
    }
    return std::nullopt;
}

Matrix PlasticNetwork::logits(const Matrix& batch) const {
    if (output_count() == 0) throw PlasticityError("network has no output nodes");
    return forward(layers_, batch).output();
}

std::string PlasticNetwork::rng_state() const {
    std::ostringstream out;
    out << rng_;
    return out.str();
}

NeuronTag PlasticNetwork::append_hidden_neuron(std::size_t layer, int generation,
                                               std::span<const double> incoming, double bias) {
    if (layer >= hidden_count()) throw PlasticityError("append_hidden_neuron: not a hidden layer");
    MaskedLayer& target = layers_[layer];
    if (incoming.size() != target.fan_in()) {
        throw DimensionError("append_hidden_neuron: incoming row has wrong length");
    }
    std::vector<double> conn(target.fan_in(), 1.0);
    if (layer > 0) {
        for (std::size_t k = 0; k < conn.size(); ++k) {
            conn[k] = edge_allowed(generations_[layer - 1][k], generation);
        }
    }
    std::vector<double> row(incoming.begin(), incoming.end());
    for (std::size_t k = 0; k < row.size(); ++k) {
        if (!on(conn[k])) row[k] = 0.0;
    }
    target.append_neuron(row, bias, conn, conn, true);
    generations_[layer].push_back(generation);
    last_split_task_[layer].push_back(-1);

    MaskedLayer& next = layers_[layer + 1];
    const bool into_outputs = layer + 1 == hidden_count();
    std::vector<double> next_conn(next.fan_out(), 1.0);
    if (!into_outputs) {
        for (std::size_t v = 0; v < next_conn.size(); ++v) {
            next_conn[v] = edge_allowed(generation, generations_[layer + 1][v]);
        }
    }
    std::vector<double> zeros(next.fan_out(), 0.0);
    next.append_input(zeros, next_conn, next_conn);
    return {layer, target.fan_out() - 1, generation};
}

std::size_t PlasticNetwork::append_output(int task, std::span<const double> incoming) {
    if (task < 0) throw PlasticityError("task index must be non-negative");
    if (outputs_.count(task) != 0) {
        throw PlasticityError("task " + std::to_string(task) + " already has an output node");
    }
    MaskedLayer& out = layers_.back();
    std::vector<double> ones(out.fan_in(), 1.0);
    out.append_neuron(incoming, 0.0, ones, ones, true);
    outputs_[task] = out.fan_out() - 1;
    return out.fan_out() - 1;
}

void PlasticNetwork::set_freeze_state(const FreezeState& state) {
    freeze_ = state;
    refresh_trainability();
}

void PlasticNetwork::refresh_trainability() {
    if (freeze_.scope == FreezeScope::full_truncated) {
        for (auto& layer : layers_) {
            layer.trainable = layer.connectivity;
            std::fill(layer.bias_trainable.begin(), layer.bias_trainable.end(), 1.0);
        }
        return;
    }

    const int g = freeze_.generation;
    for (auto& layer : layers_) {
        layer.trainable.fill(0.0);
        std::fill(layer.bias_trainable.begin(), layer.bias_trainable.end(), 0.0);
    }
    for (std::size_t l = 0; l < hidden_count(); ++l) {
        MaskedLayer& layer = layers_[l];
        for (std::size_t v = 0; v < layer.fan_out(); ++v) {
            if (generations_[l][v] != g) continue;
            for (std::size_t k = 0; k < layer.fan_in(); ++k) {
                layer.trainable(v, k) = layer.connectivity(v, k);
            }
            layer.bias_trainable[v] = 1.0;
        }
        MaskedLayer& next = layers_[l + 1];
        const bool into_outputs = l + 1 == hidden_count();
        const auto task_row = output_of(freeze_.task);
        for (std::size_t u = 0; u < layer.fan_out(); ++u) {
            if (generations_[l][u] != g) continue;
            if (into_outputs) {
                if (task_row) next.trainable(*task_row, u) = next.connectivity(*task_row, u);
                continue;
            }
            for (std::size_t v = 0; v < next.fan_out(); ++v) {
                next.trainable(v, u) = next.connectivity(v, u);
            }
        }
    }
    if (const auto row = output_of(freeze_.task)) {
        MaskedLayer& out = layers_.back();
        for (std::size_t k = 0; k < out.fan_in(); ++k) {
            out.trainable(*row, k) = out.connectivity(*row, k);
        }
        out.bias_trainable[*row] = 1.0;
    }
}

bool PlasticNetwork::split_this_task(std::size_t layer, std::size_t position, int task) const {
    return last_split_task_.at(layer).at(position) == task;
}

void PlasticNetwork::mark_split(std::size_t layer, std::size_t position, int task) {
    last_split_task_.at(layer).at(position) = task;
}

// ---------------------------------------------------------------------------
// Snapshot and schedule

Snapshot Snapshot::capture(const PlasticNetwork& network) {
    Snapshot snap;
    for (std::size_t l = 0; l < network.hidden_count(); ++l) {
        snap.weights_.push_back(network.layers()[l].weights);
        snap.biases_.push_back(network.layers()[l].bias);
    }
    return snap;
}

std::size_t Snapshot::neuron_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.rows();
    return n;
}

DriftSchedule::DriftSchedule(std::vector<double> initial_thresholds, std::vector<double> deltas)
    : initial_(std::move(initial_thresholds)), deltas_(std::move(deltas)) {
    if (initial_.size() != deltas_.size()) {
        throw PlasticityError("drift schedule needs one delta per threshold");
    }
    for (std::size_t l = 0; l < initial_.size(); ++l) {
        if (!(initial_[l] >= 0.0) || !(deltas_[l] >= 0.0)) {
            throw PlasticityError("drift thresholds and deltas must be >= 0");
        }
    }
}

double DriftSchedule::threshold(std::size_t layer) const {
    return initial_.at(layer) + static_cast<double>(epochs_) * deltas_.at(layer);
}

std::size_t SplitReport::split_count() const {
    std::size_t n = 0;
    for (const auto& l : splits) n += l.size();
    return n;
}

std::size_t SplitReport::filler_count() const {
    std::size_t n = 0;
    for (const auto& l : fillers) n += l.size();
    return n;
}

// ---------------------------------------------------------------------------
// Operations

double semantic_drift(const PlasticNetwork& network, const NeuronTag& neuron,
                      const Snapshot& snapshot) {
    check_hidden(network, neuron);
    if (!snapshot.covers(neuron.layer, neuron.position)) return 0.0;
    const MaskedLayer& layer = network.layers()[neuron.layer];
    auto now = layer.weights.row(neuron.position);
    auto then = snapshot.row(neuron.layer, neuron.position);
    double drift = 0.0;
    for (std::size_t k = 0; k < now.size(); ++k) {
        const double before = k < then.size() ? then[k] : 0.0;
        const double d = now[k] - before;
        drift += d * d;
    }
    const double db = layer.bias[neuron.position] - snapshot.bias(neuron.layer, neuron.position);
    return drift + db * db;
}

void revert_neuron(PlasticNetwork& network, const NeuronTag& neuron, const Snapshot& snapshot) {
    check_hidden(network, neuron);
    if (!snapshot.covers(neuron.layer, neuron.position)) {
        throw PlasticityError("neuron has no snapshot baseline");
    }
    MaskedLayer& layer = network.layers()[neuron.layer];
    auto now = layer.weights.row(neuron.position);
    auto then = snapshot.row(neuron.layer, neuron.position);
    for (std::size_t k = 0; k < now.size(); ++k) now[k] = k < then.size() ? then[k] : 0.0;
    layer.bias[neuron.position] = snapshot.bias(neuron.layer, neuron.position);
}

NeuronTag split_neuron(PlasticNetwork& network, const NeuronTag& neuron, int generation,
                       const Snapshot& snapshot, SplitInit init) {
    check_hidden(network, neuron);
    if (!snapshot.covers(neuron.layer, neuron.position)) {
        throw PlasticityError("cannot split a neuron created after the snapshot");
    }
    if (network.split_this_task(neuron.layer, neuron.position, generation)) {
        throw PlasticityError("neuron already split during task " + std::to_string(generation));
    }
    if (generation < network.max_generation()) {
        throw PlasticityError("split generation is older than existing neurons");
    }

    const MaskedLayer& layer = network.layers()[neuron.layer];
    std::vector<double> drifted(layer.weights.row(neuron.position).begin(),
                                layer.weights.row(neuron.position).end());
    const std::vector<double> source_conn(layer.connectivity.row(neuron.position).begin(),
                                          layer.connectivity.row(neuron.position).end());
    const double drifted_bias = layer.bias[neuron.position];

    revert_neuron(network, neuron, snapshot);
    network.mark_split(neuron.layer, neuron.position, generation);

    std::vector<double> incoming = drifted;
    double bias = drifted_bias;
    if (init == SplitInit::reverted) {
        auto reverted = network.layers()[neuron.layer].weights.row(neuron.position);
        incoming.assign(reverted.begin(), reverted.end());
        bias = network.layers()[neuron.layer].bias[neuron.position];
    }

    const NeuronTag created =
        network.append_hidden_neuron(neuron.layer, generation, incoming, bias);

    // Edges the source could not use (from neurons newer than it) are open
    // to the copy; they start from a fresh random draw instead of the source's 0.
    MaskedLayer& grown = network.layers()[neuron.layer];
    std::normal_distribution<double> normal(0.0, he_stddev(grown.fan_in()));
    for (std::size_t k = 0; k < grown.fan_in(); ++k) {
        if (on(grown.connectivity(created.position, k)) && !on(source_conn[k])) {
            grown.weights(created.position, k) = normal(network.rng());
        }
    }
    init_outgoing(network, created, snapshot);
    network.refresh_trainability();
    return created;
}

std::vector<NeuronTag> ensure_support_path(PlasticNetwork& network, int generation,
                                           const Snapshot& snapshot) {
    std::vector<NeuronTag> added;
    for (std::size_t l = 0; l < network.hidden_count(); ++l) {
        const auto& gens = network.generations()[l];
        if (std::find(gens.begin(), gens.end(), generation) != gens.end()) continue;
        const MaskedLayer& layer = network.layers()[l];
        std::normal_distribution<double> normal(0.0, he_stddev(layer.fan_in()));
        std::vector<double> incoming(layer.fan_in());
        for (double& w : incoming) w = normal(network.rng());
        const NeuronTag created = network.append_hidden_neuron(l, generation, incoming, 0.0);
        init_outgoing(network, created, snapshot);
        added.push_back(created);
    }
    network.refresh_trainability();
    return added;
}

SplitReport splitting_round(PlasticNetwork& network, const Snapshot& snapshot,
                            const DriftSchedule& schedule, int task, SplitInit init) {
    if (schedule.layer_count() != network.hidden_count()) {
        throw PlasticityError("drift schedule has " + std::to_string(schedule.layer_count()) +
                              " layers, network has " + std::to_string(network.hidden_count()));
    }
    SplitReport report;
    report.splits.resize(network.hidden_count());
    report.fillers.resize(network.hidden_count());
    for (std::size_t l = 0; l < network.hidden_count(); ++l) {
        report.thresholds.push_back(schedule.threshold(l));
    }

    for (std::size_t l = 0; l < network.hidden_count(); ++l) {
        const double threshold = report.thresholds[l];
        const std::size_t covered = std::min(snapshot.layer_size(l), network.layer_size(l));
        std::vector<std::pair<std::size_t, double>> over;
        for (std::size_t p = 0; p < covered; ++p) {
            if (network.split_this_task(l, p, task)) continue;
            const double drift = semantic_drift(network, network.tag(l, p), snapshot);
            if (drift > threshold) over.emplace_back(p, drift);
        }
        for (const auto& [p, drift] : over) {
            const NeuronTag original = network.tag(l, p);
            const NeuronTag created = split_neuron(network, original, task, snapshot, init);
            report.splits[l].push_back({original, drift, created});
        }
    }

    if (report.split_count() > 0) {
        for (const NeuronTag& t : ensure_support_path(network, task, snapshot)) {
            report.fillers[t.layer].push_back(t);
        }
    }
    return report;
}

std::size_t grow_output(PlasticNetwork& network, int task) {
    if (network.output_of(task)) {
        throw PlasticityError("task " + std::to_string(task) + " already has an output node");
    }
    const std::size_t fan_in = network.output_layer().fan_in();
    std::normal_distribution<double> normal(0.0, he_stddev(fan_in));
    std::vector<double> incoming(fan_in);
    for (double& w : incoming) w = normal(network.rng());
    const std::size_t pos = network.append_output(task, incoming);
    network.refresh_trainability();
    return pos;
}

std::size_t freeze_small_weights(PlasticNetwork& network, double magnitude_threshold) {
    if (!(magnitude_threshold >= 0.0)) throw PlasticityError("magnitude threshold must be >= 0");
    std::size_t frozen = 0;
    for (MaskedLayer& layer : network.layers()) {
        auto w = layer.weights.values();
        auto tr = layer.trainable.values();
        for (std::size_t idx = 0; idx < w.size(); ++idx) {
            if (on(tr[idx]) && std::abs(w[idx]) < magnitude_threshold) {
                tr[idx] = 0.0;
                ++frozen;
            }
        }
        for (std::size_t j = 0; j < layer.bias.size(); ++j) {
            if (on(layer.bias_trainable[j]) && std::abs(layer.bias[j]) < magnitude_threshold) {
                layer.bias_trainable[j] = 0.0;
                ++frozen;
            }
        }
    }
    return frozen;
}

void set_structural_freeze(PlasticNetwork& network, int generation, int task) {
    if (!network.output_of(task)) {
        throw PlasticityError("task " + std::to_string(task) + " has no output node");
    }
    int newest = network.max_generation();
    for (const auto& [t, pos] : network.outputs()) newest = std::max(newest, t);
    if (generation < 0 || generation > newest) {
        throw PlasticityError("unknown generation " + std::to_string(generation));
    }
    network.set_freeze_state({FreezeScope::pss_only, generation, task});
}

void set_full_trainability(PlasticNetwork& network) {
    network.set_freeze_state({FreezeScope::full_truncated, 0, 0});
}

namespace {

int argmax_task(const PlasticNetwork& network, std::span<const double> logits) {
    int best_task = -1;
    double best = 0.0;
    for (const auto& [task, pos] : network.outputs()) {
        if (best_task < 0 || logits[pos] > best) {
            best_task = task;
            best = logits[pos];
        }
    }
    return best_task;
}

}  // namespace

int predict(const PlasticNetwork& network, std::span<const double> input) {
    Matrix batch(1, input.size(), std::vector<double>(input.begin(), input.end()));
    return predict_batch(network, batch).front();
}

std::vector<int> predict_batch(const PlasticNetwork& network, const Matrix& batch) {
    if (network.outputs().empty()) throw PlasticityError("predict: network has no output nodes");
    const Matrix out = network.logits(batch);
    std::vector<int> tasks(out.rows());
    for (std::size_t i = 0; i < out.rows(); ++i) tasks[i] = argmax_task(network, out.row(i));
    return tasks;
}

MaskReport check_masks(const PlasticNetwork& network) {
    MaskReport report;
    auto flag = [&](std::string msg) { report.violations.push_back(std::move(msg)); };
    const auto layers = network.layers();
    const std::size_t hidden = network.hidden_count();

    for (std::size_t l = 0; l < layers.size(); ++l) {
        const MaskedLayer& layer = layers[l];
        const std::string where = "layer " + std::to_string(l);
        if (layer.connectivity.rows() != layer.fan_out() ||
            layer.connectivity.cols() != layer.fan_in() ||
            layer.trainable.rows() != layer.fan_out() || layer.trainable.cols() != layer.fan_in() ||
            layer.bias.size() != layer.fan_out() || layer.bias_trainable.size() != layer.fan_out()) {
            flag(where + ": component shapes disagree");
            continue;
        }
        if (l > 0 && layer.fan_in() != layers[l - 1].fan_out()) flag(where + ": fan-in does not chain");
        for (std::size_t v = 0; v < layer.fan_out(); ++v) {
            for (std::size_t u = 0; u < layer.fan_in(); ++u) {
                const double conn = layer.connectivity(v, u);
                const std::string edge = where + " edge (" + std::to_string(v) + " <- " +
                                         std::to_string(u) + ")";
                if (!on(conn) && layer.weights(v, u) != 0.0) flag(edge + ": structural zero is nonzero");
                if (!on(conn) && on(layer.trainable(v, u))) flag(edge + ": structural zero is trainable");
                if (l == 0) continue;
                const int from = network.generation(l - 1, u);
                if (l == hidden) {
                    if (!on(conn)) flag(edge + ": hidden-to-output edge is masked");
                } else {
                    const int to = network.generation(l, v);
                    if (conn != edge_allowed(from, to)) flag(edge + ": violates generation rule");
                }
            }
        }
    }

    // Registry: injective and covering the output layer.
    std::set<std::size_t> seen;
    int newest_task = 0;
    for (const auto& [task, pos] : network.outputs()) {
        newest_task = std::max(newest_task, task);
        if (pos >= network.output_count()) flag("output registry: task " + std::to_string(task) + " out of range");
        if (!seen.insert(pos).second) flag("output registry: position " + std::to_string(pos) + " shared");
    }
    if (seen.size() != network.output_count()) flag("output registry does not cover every output node");
    if (network.max_generation() > newest_task) flag("neuron generation exceeds the newest task");

    // Support paths: every generation-g neuron reaches output g through
    // generation-g neurons only.
    for (const auto& [g, out_pos] : network.outputs()) {
        if (out_pos >= network.output_count()) continue;
        std::vector<char> reach_next;
        for (std::size_t l = hidden; l-- > 0;) {
            const auto& gens = network.generations()[l];
            const MaskedLayer& next = layers[l + 1];
            std::vector<char> reach(gens.size(), 0);
            for (std::size_t u = 0; u < gens.size(); ++u) {
                if (gens[u] != g) continue;
                if (l + 1 == hidden) {
                    reach[u] = on(next.connectivity(out_pos, u));
                } else {
                    const auto& next_gens = network.generations()[l + 1];
                    for (std::size_t v = 0; v < next_gens.size() && !reach[u]; ++v) {
                        reach[u] = next_gens[v] == g && reach_next[v] && on(next.connectivity(v, u));
                    }
                }
                if (!reach[u]) {
                    flag("generation " + std::to_string(g) + " neuron (" + std::to_string(l) + ", " +
                         std::to_string(u) + ") has no support path to its output");
                }
            }
            reach_next = std::move(reach);
        }
    }
    return report;
}

}  // namespace pss

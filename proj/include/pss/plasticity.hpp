#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/matrix.hpp"
#include "pss/numerics.hpp"

namespace pss {

class PlasticityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Identifies a hidden neuron. `generation` is the task index at which the
// neuron was created; the initial neurons are generation 0.
struct NeuronTag {
    std::size_t layer = 0;
    std::size_t position = 0;
    int generation = 0;

    friend bool operator==(const NeuronTag&, const NeuronTag&) = default;
};

enum class FreezeScope { full_truncated, pss_only };
enum class SplitInit { drifted, reverted };

struct FreezeState {
    FreezeScope scope = FreezeScope::full_truncated;
    int generation = 0;  // pss_only: the generation allowed to train
    int task = 0;        // pss_only: the task whose output node trains
};

// Feedforward network whose hidden layers grow by appending neurons. The
// last layer holds one identity output node per task. Structural zeros
// follow the generation rule: an edge from hidden neuron u to hidden neuron
// v in the next layer exists iff generation(u) <= generation(v). Edges into
// output nodes always exist.
class PlasticNetwork {
public:
    PlasticNetwork(std::size_t inputs, std::vector<std::size_t> hidden, std::uint64_t seed,
                   double slope = kDefaultLeakySlope);

    // Rebuilds a network from serialized parts; validates the structure.
    static PlasticNetwork from_parts(std::vector<MaskedLayer> layers,
                                     std::vector<std::vector<int>> generations,
                                     std::map<int, std::size_t> outputs, FreezeState freeze,
                                     const std::string& rng_state);

    std::size_t input_dim() const noexcept { return layers_.front().fan_in(); }
    std::size_t hidden_count() const noexcept { return layers_.size() - 1; }
    std::size_t layer_size(std::size_t hidden_layer) const { return layers_.at(hidden_layer).fan_out(); }
    std::vector<std::size_t> hidden_sizes() const;
    std::size_t hidden_neuron_count() const;
    std::size_t output_count() const noexcept { return layers_.back().fan_out(); }
    // Connected weights plus biases.
    std::size_t parameter_count() const;

    std::span<const MaskedLayer> layers() const noexcept { return layers_; }
    // Mutable access for the optimizer. Topology and masks must be changed
    // through the plasticity operations; check_masks audits the result.
    std::span<MaskedLayer> layers() noexcept { return layers_; }
    const MaskedLayer& output_layer() const { return layers_.back(); }

    int generation(std::size_t layer, std::size_t position) const {
        return generations_.at(layer).at(position);
    }
    const std::vector<std::vector<int>>& generations() const noexcept { return generations_; }
    NeuronTag tag(std::size_t layer, std::size_t position) const {
        return {layer, position, generation(layer, position)};
    }
    int max_generation() const;

    const std::map<int, std::size_t>& outputs() const noexcept { return outputs_; }
    std::optional<std::size_t> output_of(int task) const;
    // Inverse registry lookup; nullopt for a position no task owns.
    std::optional<int> task_of_output(std::size_t position) const;

    const FreezeState& freeze_state() const noexcept { return freeze_; }
    FreezeScope freeze_scope() const noexcept { return freeze_.scope; }

    // Output-layer values (pre-sigmoid) for a batch, one column per output node.
    Matrix logits(const Matrix& batch) const;

    std::mt19937_64& rng() noexcept { return rng_; }
    std::string rng_state() const;

    // Low-level edits used by the plasticity operations.
    NeuronTag append_hidden_neuron(std::size_t layer, int generation,
                                   std::span<const double> incoming, double bias);
    std::size_t append_output(int task, std::span<const double> incoming);
    void set_freeze_state(const FreezeState& state);
    // Recomputes trainability masks from the stored freeze state.
    void refresh_trainability();

    bool split_this_task(std::size_t layer, std::size_t position, int task) const;
    void mark_split(std::size_t layer, std::size_t position, int task);

private:
    PlasticNetwork() = default;

    std::vector<MaskedLayer> layers_;  // hidden layers..., output layer
    std::vector<std::vector<int>> generations_;
    std::vector<std::vector<int>> last_split_task_;
    std::map<int, std::size_t> outputs_;
    FreezeState freeze_;
    std::mt19937_64 rng_;
};

// Incoming weights and biases of every hidden neuron, captured at task start.
class Snapshot {
public:
    static Snapshot capture(const PlasticNetwork& network);

    std::size_t hidden_count() const noexcept { return weights_.size(); }
    std::size_t layer_size(std::size_t layer) const { return weights_.at(layer).rows(); }
    std::size_t fan_in(std::size_t layer) const { return weights_.at(layer).cols(); }
    std::size_t neuron_count() const;
    bool covers(std::size_t layer, std::size_t position) const {
        return layer < weights_.size() && position < weights_[layer].rows();
    }
    std::span<const double> row(std::size_t layer, std::size_t position) const {
        return weights_.at(layer).row(position);
    }
    double bias(std::size_t layer, std::size_t position) const {
        return biases_.at(layer).at(position);
    }

private:
    std::vector<Matrix> weights_;
    std::vector<std::vector<double>> biases_;
};

inline Snapshot take_snapshot(const PlasticNetwork& network) { return Snapshot::capture(network); }

// Per-layer split threshold that rises by a fixed delta every epoch:
// threshold(l) = initial(l) + epochs_elapsed * delta(l).
class DriftSchedule {
public:
    DriftSchedule() = default;
    DriftSchedule(std::vector<double> initial_thresholds, std::vector<double> deltas);

    double threshold(std::size_t layer) const;
    std::size_t epochs_elapsed() const noexcept { return epochs_; }
    std::size_t layer_count() const noexcept { return initial_.size(); }
    const std::vector<double>& initial_thresholds() const noexcept { return initial_; }
    const std::vector<double>& deltas() const noexcept { return deltas_; }

    void escalate() noexcept { ++epochs_; }
    void reset() noexcept { epochs_ = 0; }

private:
    std::vector<double> initial_;
    std::vector<double> deltas_;
    std::size_t epochs_ = 0;
};

inline DriftSchedule escalate(DriftSchedule schedule) {
    schedule.escalate();
    return schedule;
}

struct SplitEvent {
    NeuronTag neuron;
    double drift = 0.0;
    NeuronTag created;
};

struct SplitReport {
    std::vector<std::vector<SplitEvent>> splits;     // per hidden layer
    std::vector<std::vector<NeuronTag>> fillers;     // per hidden layer
    std::vector<double> thresholds;                  // per hidden layer, in effect
    std::size_t split_count() const;
    std::size_t filler_count() const;
};

// Squared distance between the neuron's incoming parameters (weights and
// bias) now and in the snapshot. Neurons absent from the snapshot have drift 0.
double semantic_drift(const PlasticNetwork& network, const NeuronTag& neuron,
                      const Snapshot& snapshot);

// Restores the neuron's incoming weights and bias to the snapshot values.
void revert_neuron(PlasticNetwork& network, const NeuronTag& neuron, const Snapshot& snapshot);

// Reverts `neuron` and appends a copy of generation `generation` to the same
// layer. The copy starts from the drifted parameters (or the reverted ones
// with SplitInit::reverted). Its outgoing edges obey the generation rule;
// allowed edges are randomly initialized except edges into neurons that
// existed at snapshot time and into other tasks' output nodes, which start
// at exactly 0.
NeuronTag split_neuron(PlasticNetwork& network, const NeuronTag& neuron, int generation,
                       const Snapshot& snapshot, SplitInit init = SplitInit::drifted);

// Adds one filler neuron of `generation` to every hidden layer that has none.
std::vector<NeuronTag> ensure_support_path(PlasticNetwork& network, int generation,
                                           const Snapshot& snapshot);

SplitReport splitting_round(PlasticNetwork& network, const Snapshot& snapshot,
                            const DriftSchedule& schedule, int task,
                            SplitInit init = SplitInit::drifted);

// Adds the output node for `task`, fully connected to the last hidden layer.
std::size_t grow_output(PlasticNetwork& network, int task);

// Freezes every trainable weight and bias with |value| < threshold.
std::size_t freeze_small_weights(PlasticNetwork& network, double magnitude_threshold);

// Only generation-`generation` neurons (incoming and allowed outgoing edges)
// and the incoming edges of `task`'s output node stay trainable.
void set_structural_freeze(PlasticNetwork& network, int generation, int task);
void set_full_trainability(PlasticNetwork& network);

// Task whose output node has the largest pre-sigmoid value; ties go to the
// smallest task index.
int predict(const PlasticNetwork& network, std::span<const double> input);
std::vector<int> predict_batch(const PlasticNetwork& network, const Matrix& batch);

struct MaskReport {
    std::vector<std::string> violations;
    bool ok() const noexcept { return violations.empty(); }
};

MaskReport check_masks(const PlasticNetwork& network);

}  // namespace pss

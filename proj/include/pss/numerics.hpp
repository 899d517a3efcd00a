#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pss/matrix.hpp"

namespace pss {

enum class Activation { leaky_relu, identity };

inline constexpr double kDefaultLeakySlope = 0.01;

// Dense layer with two masks. A zero in `connectivity` is a structural zero:
// the weight is pinned at exactly 0.0. A zero in `trainable` freezes the
// weight (its gradient is forced to zero). connectivity == 0 implies
// trainable == 0. Mask entries are 0.0 or 1.0.
struct MaskedLayer {
    Matrix weights;  // fan_out x fan_in
    std::vector<double> bias;
    Matrix connectivity;
    Matrix trainable;
    std::vector<double> bias_trainable;
    Activation activation = Activation::leaky_relu;
    double slope = kDefaultLeakySlope;

    // All-zero weights, fully connected and fully trainable.
    static MaskedLayer dense(std::size_t fan_out, std::size_t fan_in, Activation activation,
                             double slope = kDefaultLeakySlope);

    std::size_t fan_in() const noexcept { return weights.cols(); }
    std::size_t fan_out() const noexcept { return weights.rows(); }

    void append_neuron(std::span<const double> incoming, double bias_value,
                       std::span<const double> connectivity_row,
                       std::span<const double> trainable_row, bool bias_is_trainable);
    void append_input(std::span<const double> column, std::span<const double> connectivity_col,
                      std::span<const double> trainable_col);

    // Throws DimensionError / NumericalError when shapes or mask invariants break.
    void validate() const;
};

double activate(Activation act, double slope, double pre) noexcept;
double activation_derivative(Activation act, double slope, double pre) noexcept;
double sigmoid(double x) noexcept;
double softplus(double x) noexcept;

struct ForwardTrace {
    Matrix input;
    std::vector<Matrix> pre;   // per layer, batch x fan_out
    std::vector<Matrix> post;  // per layer, batch x fan_out

    const Matrix& output() const { return post.back(); }
};

ForwardTrace forward(std::span<const MaskedLayer> layers, const Matrix& batch);

struct LayerGradients {
    Matrix weights;
    std::vector<double> bias;
};
using Gradients = std::vector<LayerGradients>;

// Loss over the selected output nodes only: mean over the batch of the summed
// sigmoid cross-entropy of each selected logit. `targets` is batch x |selected|.
double truncated_loss(const Matrix& logits, const Matrix& targets,
                      std::span<const std::size_t> selected_outputs);

// Backpropagation with the loss gradient injected only at `selected_outputs`.
// Returned gradients are zero wherever the trainability mask is zero.
Gradients backward_truncated(std::span<const MaskedLayer> layers, const ForwardTrace& trace,
                             const Matrix& targets, std::span<const std::size_t> selected_outputs);

// Mean binary cross-entropy of sigmoid(logit) against 0/1 labels.
double bce_loss(std::span<const double> logits, std::span<const double> labels);

struct SgdParams {
    double learning_rate = 0.05;
    double momentum = 0.9;
};

// Heavy-ball momentum buffers, shaped like the layers they update.
struct Velocity {
    std::vector<LayerGradients> layers;

    // Grows/reshapes the buffers to match `net` (appended rows/cols start at 0,
    // existing entries keep their position) and clears frozen positions.
    void conform(std::span<const MaskedLayer> net);
    void reset(std::span<const MaskedLayer> net);
};

// v <- momentum * v + g;  w <- w - lr * v, applied only where trainable.
void sgd_step(std::span<MaskedLayer> layers, const Gradients& gradients, const SgdParams& params,
              Velocity& velocity);

// Zero-mean normal initialization with std sqrt(2 / fan_in), restricted to
// connected positions.
double he_stddev(std::size_t fan_in) noexcept;
void init_he(MaskedLayer& layer, std::mt19937_64& rng);

struct GradcheckOptions {
    double structural_zero_fraction = 0.0;
    double frozen_fraction = 0.0;
    std::size_t batch_size = 2;
    double step = 1e-5;
    double tolerance = 1e-5;
    // Empty means: draw a random non-empty subset of the outputs.
    std::vector<std::size_t> selected_outputs;
    // Perturbs the analytic gradient; used to confirm the checker can fail.
    bool inject_fault = false;
};

struct GradcheckReport {
    std::vector<std::size_t> dims;
    std::vector<std::size_t> selected_outputs;
    double max_relative_error = 0.0;
    std::size_t checked_positions = 0;
    std::size_t masked_positions = 0;
    std::size_t masked_nonzero = 0;  // masked positions with a nonzero gradient
    bool passed = false;
    std::string error;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline constexpr double kRelativeErrorFloor = 1e-4;
double relative_error(double analytic, double numeric) noexcept;

// `dims` = {inputs, hidden..., outputs}. Builds a random masked network and
// compares backward_truncated against central finite differences.
GradcheckReport gradcheck(std::span<const std::size_t> dims, std::uint64_t seed,
                          const GradcheckOptions& options = {});

}  // namespace pss

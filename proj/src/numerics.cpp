#include "pss/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pss {

namespace {

bool on(double mask) noexcept { return mask != 0.0; }

void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

void check_selection(std::span<const std::size_t> selected, std::size_t outputs) {
    if (selected.empty()) throw DimensionError("selected_outputs must not be empty");
    std::set<std::size_t> seen;
    for (std::size_t s : selected) {
        if (s >= outputs) {
            throw DimensionError("selected output " + std::to_string(s) + " out of range (" +
                                 std::to_string(outputs) + " outputs)");
        }
        if (!seen.insert(s).second) throw DimensionError("duplicate selected output");
    }
}

}  // namespace

MaskedLayer MaskedLayer::dense(std::size_t fan_out, std::size_t fan_in, Activation activation,
                               double slope) {
    MaskedLayer layer;
    layer.weights = Matrix(fan_out, fan_in, 0.0);
    layer.bias.assign(fan_out, 0.0);
    layer.connectivity = Matrix(fan_out, fan_in, 1.0);
    layer.trainable = Matrix(fan_out, fan_in, 1.0);
    layer.bias_trainable.assign(fan_out, 1.0);
    layer.activation = activation;
    layer.slope = slope;
    return layer;
}

void MaskedLayer::append_neuron(std::span<const double> incoming, double bias_value,
                                std::span<const double> connectivity_row,
                                std::span<const double> trainable_row, bool bias_is_trainable) {
    weights.append_row(incoming);
    connectivity.append_row(connectivity_row);
    trainable.append_row(trainable_row);
    bias.push_back(bias_value);
    bias_trainable.push_back(bias_is_trainable ? 1.0 : 0.0);
}

void MaskedLayer::append_input(std::span<const double> column,
                               std::span<const double> connectivity_col,
                               std::span<const double> trainable_col) {
    weights.append_col(column);
    connectivity.append_col(connectivity_col);
    trainable.append_col(trainable_col);
}

void MaskedLayer::validate() const {
    const std::size_t r = weights.rows();
    const std::size_t c = weights.cols();
    if (connectivity.rows() != r || connectivity.cols() != c || trainable.rows() != r ||
        trainable.cols() != c || bias.size() != r || bias_trainable.size() != r) {
        throw DimensionError("masked layer component shapes disagree");
    }
    if (!weights.all_finite()) throw NumericalError("non-finite weight");
    for (double b : bias) {
        if (!std::isfinite(b)) throw NumericalError("non-finite bias");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double conn = connectivity.values()[i];
        const double tr = trainable.values()[i];
        if ((conn != 0.0 && conn != 1.0) || (tr != 0.0 && tr != 1.0)) {
            throw DimensionError("mask entries must be 0 or 1");
        }
        if (!on(conn) && weights.values()[i] != 0.0) {
            throw NumericalError("structural zero holds a nonzero weight");
        }
        if (!on(conn) && on(tr)) throw DimensionError("structural zero marked trainable");
    }
}

double activate(Activation act, double slope, double pre) noexcept {
    if (act == Activation::identity) return pre;
    return pre > 0.0 ? pre : slope * pre;
}

double activation_derivative(Activation act, double slope, double pre) noexcept {
    if (act == Activation::identity) return 1.0;
    return pre > 0.0 ? 1.0 : slope;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

ForwardTrace forward(std::span<const MaskedLayer> layers, const Matrix& batch) {
    if (layers.empty()) throw DimensionError("forward: no layers");
    if (batch.cols() != layers.front().fan_in()) {
        throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                             " columns, first layer expects " +
                             std::to_string(layers.front().fan_in()));
    }
    require_finite(batch, "input batch");

    ForwardTrace trace;
    trace.input = batch;
    trace.pre.reserve(layers.size());
    trace.post.reserve(layers.size());

    const Matrix* in = &trace.input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const MaskedLayer& layer = layers[l];
        if (in->cols() != layer.fan_in()) throw DimensionError("forward: layer shape mismatch");
        const std::size_t n = in->rows();
        Matrix pre(n, layer.fan_out());
        Matrix post(n, layer.fan_out());
        for (std::size_t i = 0; i < n; ++i) {
            auto x = in->row(i);
            for (std::size_t j = 0; j < layer.fan_out(); ++j) {
                const double z = dot(x, layer.weights.row(j)) + layer.bias[j];
                pre(i, j) = z;
                post(i, j) = activate(layer.activation, layer.slope, z);
            }
        }
        require_finite(post, "layer activations");
        trace.pre.push_back(std::move(pre));
        trace.post.push_back(std::move(post));
        in = &trace.post.back();
    }
    return trace;
}

double truncated_loss(const Matrix& logits, const Matrix& targets,
                      std::span<const std::size_t> selected_outputs) {
    check_selection(selected_outputs, logits.cols());
    if (targets.rows() != logits.rows() || targets.cols() != selected_outputs.size()) {
        throw DimensionError("truncated_loss: targets must be batch x |selected|");
    }
    if (logits.rows() == 0) throw DimensionError("truncated_loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        for (std::size_t k = 0; k < selected_outputs.size(); ++k) {
            const double z = logits(i, selected_outputs[k]);
            const double y = targets(i, k);
            total += softplus(z) - y * z;
        }
    }
    return total / static_cast<double>(logits.rows());
}

Gradients backward_truncated(std::span<const MaskedLayer> layers, const ForwardTrace& trace,
                             const Matrix& targets, std::span<const std::size_t> selected_outputs) {
    if (layers.empty() || trace.pre.size() != layers.size() ||
        trace.post.size() != layers.size()) {
        throw DimensionError("backward: trace does not match network depth");
    }
    const Matrix& logits = trace.output();
    check_selection(selected_outputs, logits.cols());
    const std::size_t n = logits.rows();
    if (n == 0) throw DimensionError("backward: empty batch");
    if (targets.rows() != n || targets.cols() != selected_outputs.size()) {
        throw DimensionError("backward: targets must be batch x |selected|");
    }

    // dL/d(post) of the current layer; only selected output columns are nonzero.
    Matrix grad_post(n, logits.cols(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < selected_outputs.size(); ++k) {
            const std::size_t s = selected_outputs[k];
            grad_post(i, s) = (sigmoid(logits(i, s)) - targets(i, k)) * inv_n;
        }
    }

    Gradients grads(layers.size());
    for (std::size_t l = layers.size(); l-- > 0;) {
        const MaskedLayer& layer = layers[l];
        const Matrix& pre = trace.pre[l];
        const Matrix& prev = l == 0 ? trace.input : trace.post[l - 1];
        if (pre.cols() != layer.fan_out() || prev.cols() != layer.fan_in()) {
            throw DimensionError("backward: trace shape mismatch at layer " + std::to_string(l));
        }

        Matrix delta(n, layer.fan_out());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < layer.fan_out(); ++j) {
                delta(i, j) = grad_post(i, j) * activation_derivative(layer.activation, layer.slope,
                                                                      pre(i, j));
            }
        }

        LayerGradients& g = grads[l];
        g.weights = Matrix(layer.fan_out(), layer.fan_in(), 0.0);
        g.bias.assign(layer.fan_out(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto a = prev.row(i);
            for (std::size_t j = 0; j < layer.fan_out(); ++j) {
                const double d = delta(i, j);
                if (d == 0.0) continue;
                g.bias[j] += d;
                auto gw = g.weights.row(j);
                for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += d * a[k];
            }
        }
        for (std::size_t idx = 0; idx < g.weights.size(); ++idx) {
            if (!on(layer.trainable.values()[idx])) g.weights.values()[idx] = 0.0;
        }
        for (std::size_t j = 0; j < g.bias.size(); ++j) {
            if (!on(layer.bias_trainable[j])) g.bias[j] = 0.0;
        }

        if (l > 0) {
            Matrix next(n, layer.fan_in(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                auto out = next.row(i);
                for (std::size_t j = 0; j < layer.fan_out(); ++j) {
                    const double d = delta(i, j);
                    if (d == 0.0) continue;
                    auto w = layer.weights.row(j);
                    for (std::size_t k = 0; k < out.size(); ++k) out[k] += d * w[k];
                }
            }
            grad_post = std::move(next);
        }
    }
    for (const auto& g : grads) {
        require_finite(g.weights, "weight gradients");
    }
    return grads;
}

double bce_loss(std::span<const double> logits, std::span<const double> labels) {
    if (logits.size() != labels.size()) {
        throw DimensionError("bce_loss: " + std::to_string(logits.size()) + " logits vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (logits.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0) throw DimensionError("bce_loss: labels must be 0/1");
        total += softplus(logits[i]) - labels[i] * logits[i];
    }
    return total / static_cast<double>(logits.size());
}

void Velocity::conform(std::span<const MaskedLayer> net) {
    layers.resize(net.size());
    for (std::size_t l = 0; l < net.size(); ++l) {
        const MaskedLayer& layer = net[l];
        LayerGradients& v = layers[l];
        if (v.weights.rows() != layer.fan_out() || v.weights.cols() != layer.fan_in()) {
            Matrix grown(layer.fan_out(), layer.fan_in(), 0.0);
            const std::size_t r = std::min(v.weights.rows(), grown.rows());
            const std::size_t c = std::min(v.weights.cols(), grown.cols());
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t k = 0; k < c; ++k) grown(i, k) = v.weights(i, k);
            }
            v.weights = std::move(grown);
        }
        v.bias.resize(layer.fan_out(), 0.0);
        for (std::size_t idx = 0; idx < v.weights.size(); ++idx) {
            if (!on(layer.trainable.values()[idx])) v.weights.values()[idx] = 0.0;
        }
        for (std::size_t j = 0; j < v.bias.size(); ++j) {
            if (!on(layer.bias_trainable[j])) v.bias[j] = 0.0;
        }
    }
}

void Velocity::reset(std::span<const MaskedLayer> net) {
    layers.clear();
    conform(net);
}

void sgd_step(std::span<MaskedLayer> layers, const Gradients& gradients, const SgdParams& params,
              Velocity& velocity) {
    if (gradients.size() != layers.size()) throw DimensionError("sgd_step: gradient depth mismatch");
    velocity.conform(layers);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        MaskedLayer& layer = layers[l];
        const LayerGradients& g = gradients[l];
        LayerGradients& v = velocity.layers[l];
        if (g.weights.rows() != layer.fan_out() || g.weights.cols() != layer.fan_in() ||
            g.bias.size() != layer.fan_out()) {
            throw DimensionError("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        }
        auto w = layer.weights.values();
        auto gw = g.weights.values();
        auto vw = v.weights.values();
        auto mask = layer.trainable.values();
        for (std::size_t idx = 0; idx < w.size(); ++idx) {
            if (!on(mask[idx])) {
                vw[idx] = 0.0;
                continue;
            }
            vw[idx] = params.momentum * vw[idx] + gw[idx];
            w[idx] -= params.learning_rate * vw[idx];
            if (!std::isfinite(w[idx])) throw NumericalError("sgd_step produced a non-finite weight");
        }
        for (std::size_t j = 0; j < layer.bias.size(); ++j) {
            if (!on(layer.bias_trainable[j])) {
                v.bias[j] = 0.0;
                continue;
            }
            v.bias[j] = params.momentum * v.bias[j] + g.bias[j];
            layer.bias[j] -= params.learning_rate * v.bias[j];
            if (!std::isfinite(layer.bias[j])) {
                throw NumericalError("sgd_step produced a non-finite bias");
            }
        }
    }
}

double he_stddev(std::size_t fan_in) noexcept {
    return std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
}

void init_he(MaskedLayer& layer, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, he_stddev(layer.fan_in()));
    auto w = layer.weights.values();
    auto conn = layer.connectivity.values();
    for (std::size_t idx = 0; idx < w.size(); ++idx) w[idx] = on(conn[idx]) ? normal(rng) : 0.0;
}

double relative_error(double analytic, double numeric) noexcept {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(std::span<const std::size_t> dims, std::uint64_t seed,
                          const GradcheckOptions& options) {
    GradcheckReport report;
    report.dims.assign(dims.begin(), dims.end());
    if (dims.size() < 2 || std::find(dims.begin(), dims.end(), 0u) != dims.end()) {
        report.error = "gradcheck needs at least two dims, each >= 1";
        return report;
    }
    if (options.batch_size == 0) {
        report.error = "gradcheck batch size must be >= 1";
        return report;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<MaskedLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const bool last = l + 2 == dims.size();
        MaskedLayer layer = MaskedLayer::dense(dims[l + 1], dims[l],
                                               last ? Activation::identity : Activation::leaky_relu);
        auto conn = layer.connectivity.values();
        auto tr = layer.trainable.values();
        for (std::size_t idx = 0; idx < conn.size(); ++idx) {
            if (unit(rng) < options.structural_zero_fraction) {
                conn[idx] = 0.0;
                tr[idx] = 0.0;
            } else if (unit(rng) < options.frozen_fraction) {
                tr[idx] = 0.0;
            }
        }
        for (double& bt : layer.bias_trainable) {
            if (!last && unit(rng) < options.frozen_fraction) bt = 0.0;
        }
        // Keep at least one live weight per layer so tiny nets still check something.
        if (std::find(tr.begin(), tr.end(), 1.0) == tr.end()) {
            conn[0] = 1.0;
            tr[0] = 1.0;
        }
        init_he(layer, rng);
        for (double& b : layer.bias) b = 0.5 * normal(rng);
        layers.push_back(std::move(layer));
    }

    const std::size_t outputs = dims.back();
    std::vector<std::size_t> selected = options.selected_outputs;
    if (selected.empty()) {
        for (std::size_t o = 0; o < outputs; ++o) {
            if (unit(rng) < 0.5) selected.push_back(o);
        }
        if (selected.empty()) {
            selected.push_back(std::uniform_int_distribution<std::size_t>(0, outputs - 1)(rng));
        }
    }
    report.selected_outputs = selected;

    Matrix batch(options.batch_size, dims.front());
    for (double& x : batch.values()) x = normal(rng);
    Matrix targets(options.batch_size, selected.size());
    for (double& y : targets.values()) y = unit(rng) < 0.5 ? 0.0 : 1.0;

    Gradients analytic;
    try {
        analytic = backward_truncated(layers, forward(layers, batch), targets, selected);
    } catch (const std::exception& e) {
        report.error = e.what();
        return report;
    }
    if (options.inject_fault) {
        for (auto& g : analytic) {
            for (double& v : g.weights.values()) v = v * 1.001 + 1e-3;
            for (double& v : g.bias) v = v * 1.001 + 1e-3;
        }
    }

    auto loss_at = [&](std::vector<MaskedLayer>& net) {
        return truncated_loss(forward(net, batch).output(), targets, selected);
    };
    const double h = options.step;
    auto probe = [&](double& param, double analytic_value, bool is_trainable) {
        if (!is_trainable) {
            ++report.masked_positions;
            if (analytic_value != 0.0) ++report.masked_nonzero;
            return;
        }
        const double saved = param;
        param = saved + h;
        const double up = loss_at(layers);
        param = saved - h;
        const double down = loss_at(layers);
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        report.max_relative_error =
            std::max(report.max_relative_error, relative_error(analytic_value, numeric));
        ++report.checked_positions;
    };

    for (std::size_t l = 0; l < layers.size(); ++l) {
        MaskedLayer& layer = layers[l];
        for (std::size_t idx = 0; idx < layer.weights.size(); ++idx) {
            probe(layer.weights.values()[idx], analytic[l].weights.values()[idx],
                  on(layer.trainable.values()[idx]));
        }
        for (std::size_t j = 0; j < layer.bias.size(); ++j) {
            probe(layer.bias[j], analytic[l].bias[j], on(layer.bias_trainable[j]));
        }
    }

    report.passed = report.checked_positions > 0 &&
                    report.max_relative_error < options.tolerance && report.masked_nonzero == 0;
    return report;
}

}  // namespace pss

#include "pss/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pss {

std::string to_string(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::hybrid: return "hybrid";
        case FreezePolicy::full_truncated: return "full_truncated";
        case FreezePolicy::pss_only: return "pss_only";
    }
    return "unknown";
}

std::string to_string(SplitInit s) { return s == SplitInit::drifted ? "drifted" : "reverted"; }

std::string to_string(FreezeScope s) {
    return s == FreezeScope::full_truncated ? "full_truncated" : "pss_only";
}

FreezePolicy parse_freeze_policy(const std::string& s) {
    if (s == "hybrid") return FreezePolicy::hybrid;
    if (s == "full_truncated") return FreezePolicy::full_truncated;
    if (s == "pss_only") return FreezePolicy::pss_only;
    throw std::invalid_argument("unknown freeze policy '" + s + "'");
}

SplitInit parse_split_init(const std::string& s) {
    if (s == "drifted") return SplitInit::drifted;
    if (s == "reverted") return SplitInit::reverted;
    throw std::invalid_argument("unknown split_init '" + s + "'");
}

void TrainerConfig::validate(std::size_t hidden_layers) const {
    if (epochs_per_task < 1) throw std::invalid_argument("epochs_per_task must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(magnitude_freeze >= 0.0)) throw std::invalid_argument("magnitude_freeze must be >= 0");
    if (drift_thresholds.size() != hidden_layers || drift_deltas.size() != hidden_layers) {
        throw std::invalid_argument("need one drift threshold and delta per hidden layer (" +
                                    std::to_string(hidden_layers) + ")");
    }
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        if (!(drift_thresholds[l] >= 0.0) || !(drift_deltas[l] >= 0.0)) {
            throw std::invalid_argument("drift thresholds and deltas must be >= 0");
        }
    }
}

nlohmann::json TrainerConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"momentum", momentum},
            {"batch_size", batch_size},
            {"epochs_per_task", epochs_per_task},
            {"drift_thresholds", drift_thresholds},
            {"drift_deltas", drift_deltas},
            {"split_init", to_string(split_init)},
            {"freeze_policy", to_string(freeze_policy)},
            {"magnitude_freeze", magnitude_freeze},
            {"splitting", splitting},
            {"shuffle", shuffle},
            {"seed", seed}};
}

namespace {

std::mt19937_64 shuffle_rng(std::uint64_t seed, int task) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task), 0x73687566u};
    return std::mt19937_64(seq);
}

void apply_scope_start(PlasticNetwork& network, int task, const Snapshot& snapshot,
                       const TrainerConfig& config) {
    switch (config.freeze_policy) {
        case FreezePolicy::pss_only:
            // Frozen neurons cannot drift, so under this policy the task's
            // structure is seeded up front instead of waiting for a split.
            ensure_support_path(network, task, snapshot);
            set_structural_freeze(network, task, task);
            break;
        case FreezePolicy::hybrid:
        case FreezePolicy::full_truncated:
            set_full_trainability(network);
            break;
    }
    if (config.magnitude_freeze > 0.0) freeze_small_weights(network, config.magnitude_freeze);
}

}  // namespace

TaskReport train_task(PlasticNetwork& network, const TaskDataset& task,
                      const TrainerConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    config.validate(network.hidden_count());
    if (network.output_of(task.task)) {
        throw PlasticityError("task " + std::to_string(task.task) + " was already trained");
    }
    if (task.size() == 0) throw DataError("task " + std::to_string(task.task) + " has no examples");
    if (task.inputs.cols() != network.input_dim()) {
        throw DimensionError("task inputs have " + std::to_string(task.inputs.cols()) +
                             " features, network expects " + std::to_string(network.input_dim()));
    }

    const int t = task.task;
    const std::size_t out = grow_output(network, t);
    const Snapshot snapshot = take_snapshot(network);
    DriftSchedule schedule(config.drift_thresholds, config.drift_deltas);
    schedule.reset();
    apply_scope_start(network, t, snapshot, config);

    Velocity velocity;
    velocity.reset(network.layers());
    const SgdParams sgd{config.learning_rate, config.momentum};
    const std::vector<std::size_t> selected{out};
    auto rng = shuffle_rng(config.seed, t);

    std::vector<std::size_t> order(task.size());
    std::iota(order.begin(), order.end(), 0);

    TaskReport report;
    report.task = t;
    for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
        EpochRecord record;
        record.scope = to_string(network.freeze_scope());
        if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);

        double total = 0.0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, order.size() - first);
            const std::span<const std::size_t> idx(order.data() + first, n);
            const Matrix batch = task.inputs.gather_rows(idx);
            Matrix targets(n, 1);
            for (std::size_t i = 0; i < n; ++i) targets(i, 0) = task.labels[idx[i]];

            const ForwardTrace trace = forward(network.layers(), batch);
            total += truncated_loss(trace.output(), targets, selected) * static_cast<double>(n);
            const Gradients grads = backward_truncated(network.layers(), trace, targets, selected);
            sgd_step(network.layers(), grads, sgd, velocity);
        }
        record.loss = total / static_cast<double>(order.size());

        if (config.splitting) {
            const SplitReport split = splitting_round(network, snapshot, schedule, t, config.split_init);
            record.thresholds = split.thresholds;
            record.splits = split.split_count();
            record.fillers = split.filler_count();
            if (record.splits > 0) {
                if (config.freeze_policy == FreezePolicy::hybrid &&
                    network.freeze_scope() == FreezeScope::full_truncated) {
                    set_structural_freeze(network, t, t);
                }
                if (config.magnitude_freeze > 0.0) freeze_small_weights(network, config.magnitude_freeze);
                velocity.conform(network.layers());
            }
        }
        schedule.escalate();
        report.epochs.push_back(std::move(record));
    }
    report.hidden_sizes = network.hidden_sizes();
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

RunReport run_lifelong(PlasticNetwork& network, const TaskStream& stream,
                       const TrainerConfig& config, const TaskCallback& on_task) {
    if (stream.task_count() == 0) throw DataError("task stream is empty");
    if (stream.test.size() != stream.task_count()) throw DataError("stream needs one test split per task");
    config.validate(network.hidden_count());

    RunReport report;
    report.mode = config.splitting ? "pss" : "baseline";
    report.planned_tasks = stream.task_count();
    report.seed = config.seed;
    report.config = config.to_json();

    const std::size_t classes = stream.task_count();
    for (std::size_t t = 0; t < stream.task_count(); ++t) {
        TaskReport tr = train_task(network, stream.train[t], config);
        report.task_ids.push_back(stream.train[t].task);

        std::vector<double> row;
        for (std::size_t j = 0; j <= t; ++j) row.push_back(task_accuracy(network, stream.test[j]));
        report.accuracy.push_back(std::move(row));

        const auto per_class = class_accuracies(network, stream.multiclass_test, classes);
        std::vector<double> class_row;
        for (std::size_t j = 0; j <= t; ++j) {
            class_row.push_back(per_class[static_cast<std::size_t>(stream.train[j].task)]);
        }
        report.class_accuracy.push_back(std::move(class_row));
        report.multiclass_accuracy.push_back(multiclass_accuracy(network, stream.multiclass_test));

        GrowthRecord g;
        g.task = stream.train[t].task;
        g.hidden_sizes = network.hidden_sizes();
        g.parameters = network.parameter_count();
        g.outputs = network.output_count();
        for (const auto& e : tr.epochs) {
            g.splits += e.splits;
            g.fillers += e.fillers;
        }
        report.growth.push_back(std::move(g));
        report.tasks.push_back(std::move(tr));
        if (on_task) on_task(report);
    }
    return report;
}

RunReport run_baseline_finetune(PlasticNetwork& network, const TaskStream& stream,
                                TrainerConfig config, const TaskCallback& on_task) {
    config.splitting = false;
    config.freeze_policy = FreezePolicy::full_truncated;
    config.magnitude_freeze = 0.0;
    return run_lifelong(network, stream, config, on_task);
}

}  // namespace pss

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pss/data.hpp"
#include "pss/plasticity.hpp"

namespace pss {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    double loss = 0.0;
    std::size_t splits = 0;
    std::size_t fillers = 0;
    std::vector<double> thresholds;  // thresholds the split check used
    std::string scope;               // freeze scope in effect while training

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TaskReport {
    int task = 0;
    std::vector<EpochRecord> epochs;
    std::vector<std::size_t> hidden_sizes;  // after the task
    double seconds = 0.0;                   // wall clock; not serialized

    friend bool operator==(const TaskReport& a, const TaskReport& b) {
        return a.task == b.task && a.epochs == b.epochs && a.hidden_sizes == b.hidden_sizes;
    }
};

struct GrowthRecord {
    int task = 0;
    std::vector<std::size_t> hidden_sizes;
    std::size_t parameters = 0;
    std::size_t outputs = 0;
    std::size_t splits = 0;
    std::size_t fillers = 0;

    friend bool operator==(const GrowthRecord&, const GrowthRecord&) = default;
};

// accuracy[t][j] (j <= t): binary accuracy on task j after training task t.
// class_accuracy[t][j]: fraction of class-j test images predicted as j
// (argmax over all outputs) after task t.
struct RunReport {
    std::string mode = "pss";
    std::size_t planned_tasks = 0;
    std::vector<int> task_ids;
    std::vector<std::vector<double>> accuracy;
    std::vector<std::vector<double>> class_accuracy;
    std::vector<double> multiclass_accuracy;
    std::vector<GrowthRecord> growth;
    std::vector<TaskReport> tasks;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;

    bool complete() const noexcept {
        return planned_tasks > 0 && accuracy.size() == planned_tasks;
    }

    friend bool operator==(const RunReport&, const RunReport&) = default;
};

// Fraction of examples where sigmoid(task output) >= 0.5 agrees with the label.
double task_accuracy(const PlasticNetwork& network, const TaskDataset& task);

// Fraction of images whose predicted task equals their class; classes
// without an output node always count as errors.
double multiclass_accuracy(const PlasticNetwork& network, const ImageDataset& test);

// Per-class argmax accuracy for classes 0..classes-1.
std::vector<double> class_accuracies(const PlasticNetwork& network, const ImageDataset& test,
                                     std::size_t classes);

// Mean of the final row of the accuracy matrix.
double average_accuracy(const RunReport& report);

// accuracy[j][j] - accuracy[T-1][j] for every task j.
std::vector<double> forgetting(const RunReport& report);
double mean_forgetting(const RunReport& report);

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);

enum class ExportFormat { csv, json };

// JSON: the full report. CSV: `path` holds one row per (boundary, task);
// `<stem>_growth.csv` next to it holds one row per task.
void export_report(const RunReport& report, ExportFormat format,
                   const std::filesystem::path& path);
std::filesystem::path growth_csv_path(const std::filesystem::path& accuracy_csv);

RunReport load_report_json(const std::filesystem::path& path);

struct AccuracyTable {
    std::vector<std::vector<double>> accuracy;
    std::vector<std::vector<double>> class_accuracy;
};
AccuracyTable load_accuracy_csv(const std::filesystem::path& path);

}  // namespace pss

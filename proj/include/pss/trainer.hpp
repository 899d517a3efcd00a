#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pss/data.hpp"
#include "pss/eval.hpp"
#include "pss/plasticity.hpp"

namespace pss {

// hybrid: train the whole network (output-truncated) until the first split
// of a task, then only that task's support structure for the rest of it.
enum class FreezePolicy { hybrid, full_truncated, pss_only };

std::string to_string(FreezePolicy p);
std::string to_string(SplitInit s);
std::string to_string(FreezeScope s);
FreezePolicy parse_freeze_policy(const std::string& s);
SplitInit parse_split_init(const std::string& s);

struct TrainerConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t epochs_per_task = 5;
    std::vector<double> drift_thresholds;  // per hidden layer
    std::vector<double> drift_deltas;      // per hidden layer, added every epoch
    SplitInit split_init = SplitInit::drifted;
    FreezePolicy freeze_policy = FreezePolicy::hybrid;
    double magnitude_freeze = 0.0;  // 0 disables the |w| < threshold freeze
    bool splitting = true;
    bool shuffle = true;
    std::uint64_t seed = 1;

    // Throws std::invalid_argument.
    void validate(std::size_t hidden_layers) const;
    nlohmann::json to_json() const;
};

TaskReport train_task(PlasticNetwork& network, const TaskDataset& task,
                      const TrainerConfig& config);

// Called after each task with the report so far.
using TaskCallback = std::function<void(const RunReport&)>;

RunReport run_lifelong(PlasticNetwork& network, const TaskStream& stream,
                       const TrainerConfig& config, const TaskCallback& on_task = {});

// Same loop with splitting, structural freezing and magnitude freezing off.
RunReport run_baseline_finetune(PlasticNetwork& network, const TaskStream& stream,
                                TrainerConfig config, const TaskCallback& on_task = {});

}  // namespace pss

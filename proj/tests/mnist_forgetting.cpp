// Two-task noisy-MNIST stream (tasks 0 and 1, 1,000 training images each):
// naive fine-tuning loses task-0 accuracy while learning task 1.
// Exits 77 when no MNIST files are available.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "pss/eval.hpp"
#include "pss/run_config.hpp"
#include "pss/trainer.hpp"

#ifndef PSS_SOURCE_DIR
#define PSS_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;

int main() {
    using namespace pss;
    fs::path dir;
    if (const char* env = std::getenv("PSS_DATA_DIR"); env != nullptr && *env != '\0') dir = env;
    for (const char* sub : {"data/mnist", "data/mnist-subset"}) {
        if (dir.empty() && fs::exists(fs::path(PSS_SOURCE_DIR) / sub / "train-images-idx3-ubyte")) {
            dir = fs::path(PSS_SOURCE_DIR) / sub;
        }
    }
    if (dir.empty()) {
        std::cout << "no MNIST files found; skipped\n";
        return 77;
    }

    int drops = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunConfig c = preset("mnist-variation");
        c.data_dir = dir.string();
        c.set_seed(seed);
        c.stream.max_positives_per_task = 500;
        const RunData data = load_run_data(c);
        TaskStream stream = build_task_stream(data.train, data.test, c.stream);
        stream.train.resize(2);
        stream.test.resize(2);

        PlasticNetwork net(data.train.features(), c.layers, c.seed(), c.leaky_slope);
        const RunReport r = run_baseline_finetune(net, stream, c.trainer);
        const double before = r.accuracy[0][0], after = r.accuracy[1][0];
        std::printf("seed %llu: task 0 accuracy %.4f after task 0, %.4f after task 1\n",
                    static_cast<unsigned long long>(seed), before, after);
        drops += after < before ? 1 : 0;
    }
    std::printf("task-0 accuracy dropped for %d of 3 seeds\n", drops);
    return drops == 3 ? 0 : 1;
}

#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pss/data.hpp"
#include "pss/eval.hpp"
#include "pss/model_io.hpp"
#include "pss/plasticity.hpp"
#include "pss/run_config.hpp"
#include "pss/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pss::cli {
namespace {

constexpr std::size_t kMnistFeatures = 784;

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

struct ConfigFlags {
    std::string config_file;
    std::string preset;
    std::string data_dir;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool baseline = false;
    std::vector<std::string> sets;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& f) {
    cmd.add_option("--config", f.config_file, "JSON config file (flat keys)");
    cmd.add_option("--preset", f.preset, "mnist | mnist-variation");
    cmd.add_option("--data-dir", f.data_dir, "directory with the MNIST IDX files (default $PSS_DATA_DIR)");
    cmd.add_option("--seed", f.seed, "seed for every random draw in the run");
    cmd.add_option("--out", f.out, "output directory");
    cmd.add_flag("--baseline", f.baseline, "naive fine-tuning instead of PSS");
    cmd.add_option("--set", f.sets, "override a config key: --set key=value");
}

RunConfig resolve_config(const ConfigFlags& f) {
    std::optional<std::string> preset_name;
    if (!f.preset.empty()) preset_name = f.preset;
    RunConfig c = f.config_file.empty() ? preset(preset_name.value_or("mnist"))
                                        : load_run_config(f.config_file, preset_name);
    for (const auto& s : f.sets) apply_override(c, s);
    if (!f.data_dir.empty()) c.data_dir = f.data_dir;
    if (f.seed) c.set_seed(*f.seed);
    if (!f.out.empty()) c.out_dir = f.out;
    if (f.baseline) c.baseline = true;
    c.validate();
    return c;
}

void print_final_row(std::ostream& out, const RunReport& r) {
    if (r.accuracy.empty()) return;
    const auto& last = r.accuracy.back();
    for (std::size_t j = 0; j < last.size(); ++j) {
        out << "  task " << r.task_ids[j] << ": accuracy " << fmt(last[j]) << "\n";
    }
}

int cmd_train(const ConfigFlags& flags, std::ostream& out) {
    const RunConfig config = resolve_config(flags);
    const RunData data = load_run_data(config);
    if (data.train.features() != kMnistFeatures) {
        throw DimensionError("training images have " + std::to_string(data.train.features()) +
                             " features, expected 784");
    }
    const TaskStream stream = build_task_stream(data.train, data.test, config.stream);
    PlasticNetwork network(data.train.features(), config.layers, config.seed(), config.leaky_slope);

    out << (config.baseline ? "baseline" : "pss") << " run on " << config.dataset << ": "
        << stream.task_count() << " tasks, layers";
    for (auto s : config.layers) out << " " << s;
    out << ", seed " << config.seed() << "\n";

    auto progress = [&out](const RunReport& r) {
        const auto& g = r.growth.back();
        out << "task " << g.task << " done: accuracy " << fmt(r.accuracy.back().back())
            << ", splits " << g.splits << ", hidden";
        for (auto s : g.hidden_sizes) out << " " << s;
        out << std::endl;
    };
    RunReport report = config.baseline
                           ? run_baseline_finetune(network, stream, config.trainer, progress)
                           : run_lifelong(network, stream, config.trainer, progress);
    report.config = config.to_json();

    const fs::path dir = config.out_dir;
    fs::create_directories(dir);
    export_report(report, ExportFormat::json, dir / "report.json");
    export_report(report, ExportFormat::csv, dir / "report.csv");
    write_text(dir / "topology.json", topology_json(network).dump(2) + "\n");
    write_text(dir / "config.json", config.to_json().dump(2) + "\n");
    save_model(network, dir / "model.pssnet", config.to_json());

    out << "final accuracies:\n";
    print_final_row(out, report);
    out << "average accuracy " << fmt(average_accuracy(report)) << ", mean forgetting "
        << fmt(mean_forgetting(report)) << ", multiclass accuracy "
        << fmt(report.multiclass_accuracy.back()) << "\n";
    out << "wrote " << (dir / "report.json").string() << "\n";
    return kOk;
}

struct EvalFlags {
    std::string model;
    std::string data_dir;
    std::string dataset;
    std::string csv;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
    LoadedModel loaded = load_model(f.model);
    const PlasticNetwork& net = loaded.network;
    RunConfig config = preset("mnist");
    if (loaded.metadata.is_object() && !loaded.metadata.empty()) {
        json meta = loaded.metadata;
        meta.erase("out");
        apply_overrides(config, meta);
    }
    if (!f.data_dir.empty()) config.data_dir = f.data_dir;
    if (!f.dataset.empty()) config.dataset = f.dataset;
    config.validate();

    const RunData data = load_run_data(config);
    if (data.test.features() != net.input_dim()) {
        throw DimensionError("dimension mismatch: data has " + std::to_string(data.test.features()) +
                             " features, model expects " + std::to_string(net.input_dim()));
    }
    const TaskStream stream = build_task_stream(data.train, data.test, config.stream);
    const auto per_class = class_accuracies(net, stream.multiclass_test, stream.task_count());

    std::ostringstream csv;
    csv << "task,accuracy,class_accuracy\n";
    for (const auto& [task, pos] : net.outputs()) {
        (void)pos;
        if (task < 0 || static_cast<std::size_t>(task) >= stream.task_count()) {
            throw DataError("model has an output for task " + std::to_string(task) +
                            " that the data does not define");
        }
        const double acc = task_accuracy(net, stream.test[static_cast<std::size_t>(task)]);
        const double cls = per_class[static_cast<std::size_t>(task)];
        out << "task " << task << ": accuracy " << fmt(acc, "%.17g") << ", class accuracy "
            << fmt(cls, "%.17g") << "\n";
        csv << task << "," << fmt(acc, "%.17g") << "," << fmt(cls, "%.17g") << "\n";
    }
    out << "multiclass accuracy " << fmt(multiclass_accuracy(net, stream.multiclass_test), "%.17g")
        << "\n";
    if (!f.csv.empty()) write_text(f.csv, csv.str());
    return kOk;
}

struct InspectFlags {
    std::string model;
    std::string preset;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_inspect(const InspectFlags& f, std::ostream& out) {
    std::optional<PlasticNetwork> fresh;
    std::optional<LoadedModel> loaded;
    if (!f.model.empty()) {
        loaded.emplace(load_model(f.model));
    } else if (!f.preset.empty()) {
        const RunConfig c = preset(f.preset);
        fresh.emplace(kMnistFeatures, c.layers, f.seed, c.leaky_slope);
    } else {
        throw ConfigError("inspect needs --model or --preset");
    }
    const PlasticNetwork& net = loaded ? loaded->network : *fresh;
    const json topo = topology_json(net);

    out << "inputs " << net.input_dim() << ", hidden neurons " << net.hidden_neuron_count()
        << ", parameters " << net.parameter_count() << "\n";
    for (const auto& layer : topo["hidden_layers"]) {
        out << "layer " << layer["index"].get<std::size_t>() << ": " << layer["size"].get<std::size_t>()
            << " neurons, mask density " << fmt(layer["mask_density"].get<double>())
            << ", newer->older density " << fmt(layer["newer_to_older_density"].get<double>())
            << ", by generation";
        for (const auto& [g, n] : layer["generation_counts"].items()) {
            out << " g" << g << "=" << n.get<std::size_t>();
        }
        out << "\n";
    }
    out << "outputs " << net.output_count() << ":";
    for (const auto& [task, pos] : net.outputs()) out << " task" << task << "->" << pos;
    out << "\n";

    const MaskReport masks = check_masks(net);
    out << "mask check: " << (masks.ok() ? "ok" : std::to_string(masks.violations.size()) + " violations")
        << "\n";
    if (f.out.empty()) {
        out << topo.dump(2) << "\n";
    } else {
        write_text(f.out, topo.dump(2) + "\n");
    }
    return kOk;
}

struct GradcheckFlags {
    std::uint64_t seed = 1;
    std::vector<std::size_t> dims{10, 8, 6, 4};
    double structural_zeros = 0.3;
    double frozen = 0.2;
    bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out) {
    GradcheckOptions opts;
    opts.structural_zero_fraction = f.structural_zeros;
    opts.frozen_fraction = f.frozen;
    opts.inject_fault = f.inject_fault;
    const GradcheckReport r = gradcheck(f.dims, f.seed, opts);
    out << "dims";
    for (auto d : r.dims) out << " " << d;
    out << ", selected outputs";
    for (auto s : r.selected_outputs) out << " " << s;
    out << "\nchecked " << r.checked_positions << " positions, " << r.masked_positions
        << " masked (" << r.masked_nonzero << " nonzero), max relative error "
        << fmt(r.max_relative_error, "%.3e") << "\n";
    if (!r.error.empty()) out << "error: " << r.error << "\n";
    out << (r.passed ? "PASS" : "FAIL") << "\n";
    return r.passed ? kOk : kCheckFailed;
}

struct ExportFlags {
    std::string report;
    std::string format = "csv";
    std::string out;
};

int cmd_export(const ExportFlags& f, std::ostream& out) {
    const RunReport report = load_report_json(f.report);
    ExportFormat format;
    if (f.format == "csv") format = ExportFormat::csv;
    else if (f.format == "json") format = ExportFormat::json;
    else throw ConfigError("--format must be csv or json");
    export_report(report, format, f.out);
    out << "wrote " << f.out;
    if (format == ExportFormat::csv) out << " and " << growth_csv_path(f.out).string();
    out << "\n";
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Plastic support structure networks for lifelong learning", "pss"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    auto* train = app.add_subcommand("train", "train on the task stream and write reports");
    add_config_flags(*train, train_flags);

    EvalFlags eval_flags;
    auto* eval = app.add_subcommand("eval", "evaluate a saved model");
    eval->add_option("--model", eval_flags.model, "model file")->required();
    eval->add_option("--data-dir", eval_flags.data_dir, "directory with the MNIST IDX files");
    eval->add_option("--dataset", eval_flags.dataset, "mnist | mnist_variation (default: as trained)");
    eval->add_option("--csv", eval_flags.csv, "write per-task accuracies to this CSV");

    InspectFlags inspect_flags;
    auto* inspect = app.add_subcommand("inspect", "show network structure");
    inspect->add_option("--model", inspect_flags.model, "model file");
    inspect->add_option("--preset", inspect_flags.preset, "inspect an untrained preset network");
    inspect->add_option("--seed", inspect_flags.seed, "seed for the untrained network");
    inspect->add_option("--out", inspect_flags.out, "write the JSON topology dump here");

    GradcheckFlags gc_flags;
    auto* gc = app.add_subcommand("gradcheck", "compare backprop with finite differences");
    gc->add_option("--seed", gc_flags.seed, "seed");
    gc->add_option("--dims", gc_flags.dims, "layer sizes, input first")->delimiter(',');
    gc->add_option("--structural-zeros", gc_flags.structural_zeros, "fraction of masked edges");
    gc->add_option("--frozen", gc_flags.frozen, "fraction of frozen parameters");
    gc->add_flag("--inject-fault", gc_flags.inject_fault)->group("");

    ExportFlags export_flags;
    auto* exp = app.add_subcommand("export-metrics", "convert a JSON report to CSV or JSON");
    exp->add_option("--report", export_flags.report, "report.json from a run")->required();
    exp->add_option("--format", export_flags.format, "csv | json");
    exp->add_option("--out", export_flags.out, "output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*train) return cmd_train(train_flags, out);
        if (*eval) return cmd_eval(eval_flags, out);
        if (*inspect) return cmd_inspect(inspect_flags, out);
        if (*gc) return cmd_gradcheck(gc_flags, out);
        if (*exp) return cmd_export(export_flags, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return kDataError;
    } catch (const ModelError& e) {
        err << "model error: " << e.what() << "\n";
        return kDataError;
    } catch (const EvalError& e) {
        err << "report error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumericalError;
    } catch (const fs::filesystem_error& e) {
        err << "file error: " << e.what() << "\n";
        return kDataError;
    }
    return kConfigError;
}

}  // namespace pss::cli

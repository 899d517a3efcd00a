#include "pss/eval.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pss {

namespace {

constexpr std::size_t kEvalChunk = 1024;

template <typename Fn>
void for_each_logit_row(const PlasticNetwork& network, const Matrix& inputs, Fn&& fn) {
    for (std::size_t first = 0; first < inputs.rows(); first += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, inputs.rows() - first);
        const Matrix out = network.logits(inputs.slice_rows(first, n));
        for (std::size_t i = 0; i < n; ++i) fn(first + i, out.row(i));
    }
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double task_accuracy(const PlasticNetwork& network, const TaskDataset& task) {
    const auto pos = network.output_of(task.task);
    if (!pos) throw EvalError("task " + std::to_string(task.task) + " has no output node");
    if (task.size() == 0) throw EvalError("task " + std::to_string(task.task) + " has no examples");
    std::size_t correct = 0;
    for_each_logit_row(network, task.inputs, [&](std::size_t i, std::span<const double> z) {
        const double predicted = sigmoid(z[*pos]) >= 0.5 ? 1.0 : 0.0;
        if (predicted == task.labels[i]) ++correct;
    });
    return static_cast<double>(correct) / static_cast<double>(task.size());
}

double multiclass_accuracy(const PlasticNetwork& network, const ImageDataset& test) {
    if (test.size() == 0) throw EvalError("multiclass accuracy of an empty dataset");
    const std::vector<int> predicted = predict_batch(network, test.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) correct += predicted[i] == test.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<double> class_accuracies(const PlasticNetwork& network, const ImageDataset& test,
                                     std::size_t classes) {
    if (test.size() == 0) throw EvalError("class accuracy of an empty dataset");
    const std::vector<int> predicted = predict_batch(network, test.images);
    std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto c = static_cast<std::size_t>(test.labels[i]);
        if (c >= classes) continue;
        ++totals[c];
        if (predicted[i] == test.labels[i]) ++hits[c];
    }
    std::vector<double> out(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        if (totals[c] > 0) out[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    }
    return out;
}

double average_accuracy(const RunReport& report) {
    if (!report.complete()) throw EvalError("average accuracy needs a complete run");
    const auto& last = report.accuracy.back();
    if (last.size() != report.planned_tasks) throw EvalError("malformed final accuracy row");
    return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

std::vector<double> forgetting(const RunReport& report) {
    if (!report.complete()) throw EvalError("forgetting needs a complete run");
    const auto& last = report.accuracy.back();
    std::vector<double> out;
    for (std::size_t j = 0; j < report.accuracy.size(); ++j) {
        if (report.accuracy[j].size() != j + 1 || last.size() <= j) {
            throw EvalError("accuracy matrix is not lower-triangular");
        }
        out.push_back(report.accuracy[j][j] - last[j]);
    }
    return out;
}

double mean_forgetting(const RunReport& report) {
    const auto f = forgetting(report);
    return std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

nlohmann::json to_json(const RunReport& report) {
    using nlohmann::json;
    json doc;
    doc["format"] = "pss-run-report";
    doc["version"] = 1;
    doc["mode"] = report.mode;
    doc["planned_tasks"] = report.planned_tasks;
    doc["task_ids"] = report.task_ids;
    doc["seed"] = report.seed;
    doc["accuracy"] = report.accuracy;
    doc["class_accuracy"] = report.class_accuracy;
    doc["multiclass_accuracy"] = report.multiclass_accuracy;
    json growth = json::array();
    for (const auto& g : report.growth) {
        growth.push_back({{"task", g.task},
                          {"hidden_sizes", g.hidden_sizes},
                          {"parameters", g.parameters},
                          {"outputs", g.outputs},
                          {"splits", g.splits},
                          {"fillers", g.fillers}});
    }
    doc["growth"] = growth;
    json tasks = json::array();
    for (const auto& t : report.tasks) {
        json epochs = json::array();
        for (const auto& e : t.epochs) {
            epochs.push_back({{"loss", e.loss},
                              {"splits", e.splits},
                              {"fillers", e.fillers},
                              {"thresholds", e.thresholds},
                              {"scope", e.scope}});
        }
        tasks.push_back({{"task", t.task}, {"hidden_sizes", t.hidden_sizes}, {"epochs", epochs}});
    }
    doc["tasks"] = tasks;
    doc["config"] = report.config;
    if (report.complete()) {
        doc["summary"] = {{"average_accuracy", average_accuracy(report)},
                          {"mean_forgetting", mean_forgetting(report)},
                          {"final_multiclass_accuracy", report.multiclass_accuracy.back()}};
    }
    return doc;
}

RunReport report_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "pss-run-report") throw EvalError("not a run report");
        RunReport r;
        r.mode = doc.at("mode").get<std::string>();
        r.planned_tasks = doc.at("planned_tasks").get<std::size_t>();
        r.task_ids = doc.at("task_ids").get<std::vector<int>>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.accuracy = doc.at("accuracy").get<std::vector<std::vector<double>>>();
        r.class_accuracy = doc.at("class_accuracy").get<std::vector<std::vector<double>>>();
        r.multiclass_accuracy = doc.at("multiclass_accuracy").get<std::vector<double>>();
        for (const auto& g : doc.at("growth")) {
            r.growth.push_back({g.at("task").get<int>(),
                                g.at("hidden_sizes").get<std::vector<std::size_t>>(),
                                g.at("parameters").get<std::size_t>(), g.at("outputs").get<std::size_t>(),
                                g.at("splits").get<std::size_t>(), g.at("fillers").get<std::size_t>()});
        }
        for (const auto& t : doc.at("tasks")) {
            TaskReport tr;
            tr.task = t.at("task").get<int>();
            tr.hidden_sizes = t.at("hidden_sizes").get<std::vector<std::size_t>>();
            for (const auto& e : t.at("epochs")) {
                tr.epochs.push_back({e.at("loss").get<double>(), e.at("splits").get<std::size_t>(),
                                     e.at("fillers").get<std::size_t>(),
                                     e.at("thresholds").get<std::vector<double>>(),
                                     e.at("scope").get<std::string>()});
            }
            r.tasks.push_back(std::move(tr));
        }
        r.config = doc.at("config");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw EvalError(std::string("malformed run report: ") + e.what());
    }
}

std::filesystem::path growth_csv_path(const std::filesystem::path& accuracy_csv) {
    auto p = accuracy_csv;
    p.replace_filename(accuracy_csv.stem().string() + "_growth.csv");
    return p;
}

void export_report(const RunReport& report, ExportFormat format,
                   const std::filesystem::path& path) {
    if (format == ExportFormat::json) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw EvalError("cannot write " + path.string());
        out << to_json(report).dump(2) << '\n';
        if (!out) throw EvalError("write failed: " + path.string());
        return;
    }

    std::ofstream acc(path, std::ios::binary);
    if (!acc) throw EvalError("cannot write " + path.string());
    acc << "boundary,task,accuracy,class_accuracy\n";
    for (std::size_t t = 0; t < report.accuracy.size(); ++t) {
        for (std::size_t j = 0; j < report.accuracy[t].size(); ++j) {
            const double cls = t < report.class_accuracy.size() && j < report.class_accuracy[t].size()
                                   ? report.class_accuracy[t][j]
                                   : 0.0;
            acc << t << ',' << j << ',' << fmt_double(report.accuracy[t][j]) << ','
                << fmt_double(cls) << '\n';
        }
    }
    if (!acc) throw EvalError("write failed: " + path.string());

    const auto gpath = growth_csv_path(path);
    std::ofstream growth(gpath, std::ios::binary);
    if (!growth) throw EvalError("cannot write " + gpath.string());
    const std::size_t layers = report.growth.empty() ? 0 : report.growth.front().hidden_sizes.size();
    growth << "task,outputs,parameters,splits,fillers,multiclass_accuracy";
    for (std::size_t l = 0; l < layers; ++l) growth << ",layer" << l;
    growth << '\n';
    for (std::size_t t = 0; t < report.growth.size(); ++t) {
        const auto& g = report.growth[t];
        const double mc = t < report.multiclass_accuracy.size() ? report.multiclass_accuracy[t] : 0.0;
        growth << g.task << ',' << g.outputs << ',' << g.parameters << ',' << g.splits << ','
               << g.fillers << ',' << fmt_double(mc);
        for (std::size_t s : g.hidden_sizes) growth << ',' << s;
        growth << '\n';
    }
    if (!growth) throw EvalError("write failed: " + gpath.string());
}

RunReport load_report_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EvalError("cannot open " + path.string());
    try {
        return report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw EvalError(path.string() + ": " + e.what());
    }
}

AccuracyTable load_accuracy_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "boundary,task,accuracy,class_accuracy") {
        throw EvalError(path.string() + ": unexpected header");
    }
    AccuracyTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell[4];
        for (auto& c : cell) {
            if (!std::getline(row, c, ',')) throw EvalError(path.string() + ": short row");
        }
        const auto t = std::stoul(cell[0]);
        const auto j = std::stoul(cell[1]);
        if (t >= table.accuracy.size()) {
            table.accuracy.resize(t + 1);
            table.class_accuracy.resize(t + 1);
        }
        if (j != table.accuracy[t].size()) throw EvalError(path.string() + ": rows out of order");
        table.accuracy[t].push_back(std::stod(cell[2]));
        table.class_accuracy[t].push_back(std::stod(cell[3]));
    }
    return table;
}

}  // namespace pss

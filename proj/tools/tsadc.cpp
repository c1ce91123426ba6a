// Command-line experiment harness.
//
//   tsadc generate  --out runs/a [--config c.txt --seed 7]
//   tsadc train     --out runs/a [--config c.txt --seed 7 --variant 12]
//   tsadc detect    --out runs/a [--config c.txt --seed 7 --variant 12]
//   tsadc eval      --out runs/a
//   tsadc sweep     --out runs/a --axis masking-strategy [--values randm,bom]
//
// `train` writes model.ckpt, loss_curve.csv and config_resolved.txt into the
// output directory; `detect` loads that checkpoint and adds scores.csv and
// metrics.txt; `eval` recomputes the metrics from scores.csv alone as an
// artifact integrity check. All commands are deterministic in (config, seed).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tsadc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tsadc;

namespace {

constexpr const char* kUsage =
    "usage: tsadc <command> [flags]\n"
    "\n"
    "commands:\n"
    "  generate   synthesize the configured dataset into <out>/data.*.tsdc\n"
    "  train      train a model; writes model.ckpt, loss_curve.csv, config_resolved.txt\n"
    "  detect     score the test split with a trained checkpoint; writes scores.csv, metrics.txt\n"
    "  eval       recompute metrics from an existing scores.csv\n"
    "  sweep      retrain across one axis; writes sweep.csv\n"
    "\n"
    "flags:\n"
    "  --config <path>   key=value experiment config (defaults apply when omitted)\n"
    "  --seed <u64>      override the config seed\n"
    "  --out <dir>       artifact directory (default: out)\n"
    "  --variant <v>     score variant: 1, 2 or 12\n"
    "  --axis <name>     sweep axis: masking-strategy | anomaly-types-n | anomaly-level\n"
    "  --values <list>   comma-separated sweep values (axis default when omitted)\n";

struct CliArgs {
    std::string command;
    std::string config_path;
    std::string out_dir = "out";
    std::string axis = "masking-strategy";
    std::string values;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
};

CliArgs parse_args(int argc, char** argv) {
    if (argc < 2) throw ConfigError("missing command\n" + std::string(kUsage));
    CliArgs args;
    args.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string flag = argv[i];
        auto value = [&]() -> std::string {
            if (i + 1 >= argc) throw ConfigError("flag " + flag + " needs a value");
            return argv[++i];
        };
        if (flag == "--config")
            args.config_path = value();
        else if (flag == "--out")
            args.out_dir = value();
        else if (flag == "--seed")
            args.seed = detail_config::parse_u64(value(), "--seed");
        else if (flag == "--variant")
            args.variant = value();
        else if (flag == "--axis")
            args.axis = value();
        else if (flag == "--values")
            args.values = value();
        else
            throw ConfigError("unknown flag '" + flag + "'\n" + std::string(kUsage));
    }
    return args;
}

ExperimentConfig resolve_config(const CliArgs& args) {
    ExperimentConfig cfg =
        args.config_path.empty() ? ExperimentConfig{} : parse_config_file(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.variant) cfg.variant = *args.variant;
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing", 0);
    os << content;
    if (!os) throw FormatError("write failure on '" + path + "'", 0);
}

std::string checkpoint_path(const CliArgs& args) { return args.out_dir + "/model.ckpt"; }

void write_config_snapshot(const ExperimentConfig& cfg, const CliArgs& args) {
    std::ostringstream os;
    write_config(cfg, os);
    write_text(args.out_dir + "/config_resolved.txt", os.str());
}

void print_split(const char* name, const Dataset& ds) {
    const ContaminationReport rep = contamination_report(ds);
    std::cout << name << ": " << rep.total << " observations, " << rep.abnormal << " abnormal ("
              << rep.rate * 100.0 << "%)\n";
}

int cmd_generate(const CliArgs& args, const ExperimentConfig& cfg) {
    const SyntheticData data = generate_synthetic(cfg.synthetic_config(), cfg.seed);
    fs::create_directories(args.out_dir);
    const std::string prefix = args.out_dir + "/data";
    save_dataset(data.train, split_path(prefix, SplitTag::Train));
    save_dataset(data.valid, split_path(prefix, SplitTag::Valid));
    save_dataset(data.test, split_path(prefix, SplitTag::Test));
    print_split("train", data.train);
    print_split("valid", data.valid);
    print_split("test", data.test);
    std::cout << "wrote " << prefix << ".{train,valid,test}.tsdc\n"
              << "point configs at them with: dataset.path = " << prefix << "\n";
    return 0;
}

int cmd_train(const CliArgs& args, const ExperimentConfig& cfg) {
    const SplitData data = load_experiment_data(cfg);
    Model model = Model::make(cfg, data.train.K);
    const TrainResult result = train_model(model, data.train, data.valid, cfg);

    fs::create_directories(args.out_dir);
    save_checkpoint(model.params(), checkpoint_path(args));
    std::ostringstream curve;
    write_loss_curve(result, curve);
    write_text(args.out_dir + "/loss_curve.csv", curve.str());
    write_config_snapshot(cfg, args);

    std::cout << "trained " << result.curve.size() << "/" << cfg.epochs << " epochs"
              << (result.stopped_early ? " (stopped early)" : "") << "\n"
              << "best validation loss " << result.best_valid << " at epoch " << result.best_epoch
              << "\n"
              << "wrote " << checkpoint_path(args) << "\n";
    return 0;
}

int cmd_detect(const CliArgs& args, const ExperimentConfig& cfg) {
    const SplitData data = load_experiment_data(cfg);
    Model model = Model::make(cfg, data.train.K);
    NamedParams params = model.params();
    load_checkpoint(params, checkpoint_path(args));

    const ScoreReport report = detect(model, cfg, data.valid, data.test);

    fs::create_directories(args.out_dir);
    std::ostringstream csv, summary;
    write_score_csv(report, csv);
    write_metrics_summary(report, summary);
    write_text(args.out_dir + "/scores.csv", csv.str());
    write_text(args.out_dir + "/metrics.txt", summary.str());
    write_config_snapshot(cfg, args);

    std::cout << "variant " << cfg.variant << ": tau=" << report.tau
              << " f1=" << report.summary.f1 << " recall=" << report.summary.recall
              << " aupr=" << report.summary.aupr << "\n"
              << "wrote " << args.out_dir << "/scores.csv\n";
    return 0;
}

// Recomputes every metric from the score CSV alone, so a tampered or stale
// artifact is caught without rerunning the model.
int cmd_eval(const CliArgs& args) {
    const std::string path = args.out_dir + "/scores.csv";
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "' for reading", 0);
    std::string line;
    if (!std::getline(is, line) || line != "observation_id,s1,s2,s,label,prediction")
        throw FormatError("unexpected score CSV header in '" + path + "'", 0);

    std::vector<double> scores;
    std::vector<int> labels, predictions;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (fields.size() != 6)
            throw FormatError("score CSV line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected 6", 0);
        scores.push_back(detail_config::parse_real(fields[3], "s"));
        labels.push_back(int(detail_config::parse_size(fields[4], "label")));
        predictions.push_back(int(detail_config::parse_size(fields[5], "prediction")));
    }
    if (scores.empty()) throw FormatError("score CSV '" + path + "' has no rows", 0);

    std::size_t tp = 0, fp = 0, fn = 0, positives = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        positives += std::size_t(labels[i] == 1);
        if (predictions[i] == 1 && labels[i] == 1) ++tp;
        if (predictions[i] == 1 && labels[i] == 0) ++fp;
        if (predictions[i] == 0 && labels[i] == 1) ++fn;
    }
    const double recall = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
    const double precision = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double f1 = (precision + recall) == 0.0
                          ? 0.0
                          : 2.0 * precision * recall / (precision + recall);

    std::cout << "n=" << scores.size() << "\n"
              << "prevalence=" << double(positives) / double(scores.size()) << "\n"
              << "f1=" << f1 << "\n"
              << "recall=" << recall << "\n"
              << "aupr=" << average_precision(scores, labels) << "\n";
    return 0;
}

int cmd_sweep(const CliArgs& args, const ExperimentConfig& cfg) {
    const SweepAxis axis = sweep_axis_from_string(args.axis);
    std::vector<std::string> values;
    if (!args.values.empty()) {
        std::istringstream is(args.values);
        std::string v;
        while (std::getline(is, v, ',')) values.push_back(v);
    } else {
        switch (axis) {
            case SweepAxis::MaskStrategy: values = {"randm", "randbm", "bom"}; break;
            case SweepAxis::AnomalyTypesN: values = {"1", "2", "3", "4", "5"}; break;
            case SweepAxis::AnomalyLevel: values = {"0", "0.1", "0.2", "0.3", "0.4"}; break;
        }
    }

    const std::vector<SweepRow> rows = sweep(cfg, axis, values);
    fs::create_directories(args.out_dir);
    std::ostringstream csv;
    write_sweep_csv(rows, csv);
    write_text(args.out_dir + "/sweep.csv", csv.str());

    for (const SweepRow& r : rows)
        std::cout << args.axis << "=" << r.value << " f1=" << r.f1 << " recall=" << r.recall
                  << " aupr=" << r.aupr << "\n";
    std::cout << "wrote " << args.out_dir << "/sweep.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
            std::cout << kUsage;
            return 0;
        }
        const CliArgs args = parse_args(argc, argv);
        if (args.command == "eval") return cmd_eval(args);
        const ExperimentConfig cfg = resolve_config(args);
        if (args.command == "generate") return cmd_generate(args, cfg);
        if (args.command == "train") return cmd_train(args, cfg);
        if (args.command == "detect") return cmd_detect(args, cfg);
        if (args.command == "sweep") return cmd_sweep(args, cfg);
        throw ConfigError("unknown command '" + args.command + "'\n" + std::string(kUsage));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

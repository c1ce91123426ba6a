// End-to-end experiment pipeline: the jointly trained model (noise network +
// dependency graph), the epoch loop with early stopping on validation loss,
// post-training detection with validation-searched thresholds, and the
// sensitivity sweeps. Everything is a pure function of (config, seed).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tsadc/checkpoint.hpp"
#include "tsadc/common.hpp"
#include "tsadc/config.hpp"
#include "tsadc/data.hpp"
#include "tsadc/diffusion.hpp"
#include "tsadc/graph.hpp"
#include "tsadc/masking.hpp"
#include "tsadc/rng.hpp"
#include "tsadc/scoring.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

// Seed-stream tags so every consumer of randomness draws from its own lane.
namespace seed_lane {
constexpr std::uint64_t kModelInit = 10;
constexpr std::uint64_t kTraining = 11;
constexpr std::uint64_t kValidationDraws = 12;
constexpr std::uint64_t kScoring = 13;
}  // namespace seed_lane

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct Model {
    NoiseSchedule sched;
    EpsilonNet net;
    GraphModel graph;

    static Model make(const ExperimentConfig& cfg, std::size_t K, Rng& rng) {
        cfg.validate();
        Model m;
        m.sched = build_schedule(cfg.diffusion_T);
        m.net = EpsilonNet::make(cfg.epsilon_config(K), rng);
        m.graph = GraphModel::make(cfg.graph_config(), rng);
        return m;
    }

    static Model make(const ExperimentConfig& cfg, std::size_t K) {
        Rng rng(mix_seed(cfg.seed, seed_lane::kModelInit));
        return make(cfg, K, rng);
    }

    NamedParams params() const {
        NamedParams out;
        net.collect_params(out, "net");
        graph.collect_params(out, "graph");
        return out;
    }

    std::vector<Tensor> trainables() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : params()) out.push_back(t);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochPoint {
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochPoint> curve;  // one entry per completed epoch
    std::size_t best_epoch = 0;     // 1-based epoch of the lowest validation loss
    double best_valid = std::numeric_limits<double>::infinity();
    bool stopped_early = false;
};

namespace detail_pipeline {

// One observation's contribution to the joint objective. The clean estimate
// feeding the graph module is computed without gradients: the noise loss is
// the only path training the noise network, and the graph module learns from
// the estimate as data.
inline Tensor observation_loss(const Model& model, const Tensor& x, const MaskSpec& spec, Rng& rng,
                               KernelCache* cache) {
    const std::size_t K = x.shape()[0], L = x.shape()[1];
    Mask m = make_mask(spec, K, L, rng);
    Condition cond = make_condition(x, m);
    Tensor stacked = cond.stacked();

    const std::size_t t = 1 + rng.uniform_index(model.sched.T);
    Tensor eps = Tensor::randn({K, L}, rng);
    Tensor x_t = forward_diffuse(cond.x_masked, t, eps, model.sched);
    Tensor eps_hat = model.net.apply(x_t, t, stacked);
    Tensor l_noise = noise_loss(eps, eps_hat, m);

    Tensor x0_hat;
    {
        NoGradGuard no_grad;
        Tensor eps_T = Tensor::randn({K, L}, rng);
        Tensor x_T = forward_diffuse(cond.x_masked, model.sched.T, eps_T, model.sched);
        Tensor eps_hat_T = model.net.apply(x_T, model.sched.T, stacked, cache);
        x0_hat = one_shot_x0(x_T, eps_hat_T, model.sched);
    }
    for (double v : x0_hat.values())
        if (!std::isfinite(v)) throw NumericError("clean estimate is not finite");
    GraphOutput g = model.graph.forward(x0_hat);
    return total_loss(l_noise, g.reg, g.recon);
}

// Pre-drawn randomness for one validation observation, reused every epoch so
// validation losses are comparable across epochs.
struct FrozenDraw {
    Mask mask;
    std::size_t t = 1;
    std::vector<double> eps;    // noise for the loss target
    std::vector<double> eps_T;  // noise for the clean-estimate pass
};

inline std::vector<FrozenDraw> freeze_validation_draws(const Dataset& valid, const MaskSpec& spec,
                                                       std::size_t T, std::uint64_t seed) {
    Rng rng(mix_seed(seed, seed_lane::kValidationDraws));
    std::vector<FrozenDraw> draws;
    draws.reserve(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) {
        FrozenDraw d;
        d.mask = make_mask(spec, valid.K, valid.L, rng);
        d.t = 1 + rng.uniform_index(T);
        d.eps.resize(valid.K * valid.L);
        d.eps_T.resize(valid.K * valid.L);
        for (double& v : d.eps) v = rng.normal();
        for (double& v : d.eps_T) v = rng.normal();
        draws.push_back(std::move(d));
    }
    return draws;
}

inline double validation_loss(const Model& model, const Dataset& valid,
                              const std::vector<FrozenDraw>& draws, KernelCache* cache) {
    NoGradGuard no_grad;
    double total = 0.0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        const FrozenDraw& d = draws[i];
        Tensor x = valid.tensor_of(i);
        Condition cond = make_condition(x, d.mask);
        Tensor stacked = cond.stacked();

        Tensor eps({valid.K, valid.L}, d.eps);
        Tensor x_t = forward_diffuse(cond.x_masked, d.t, eps, model.sched);
        Tensor eps_hat = model.net.apply(x_t, d.t, stacked, cache);
        Tensor l_noise = noise_loss(eps, eps_hat, d.mask);

        Tensor eps_T({valid.K, valid.L}, d.eps_T);
        Tensor x_T = forward_diffuse(cond.x_masked, model.sched.T, eps_T, model.sched);
        Tensor x0_hat = one_shot_x0(x_T, model.net.apply(x_T, model.sched.T, stacked, cache),
                                    model.sched);
        GraphOutput g = model.graph.forward(x0_hat, cache);
        total += total_loss(l_noise, g.reg, g.recon).item();
    }
    return total / double(valid.size());
}

inline std::vector<std::vector<double>> snapshot_values(const NamedParams& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t.values());
    return out;
}

inline void restore_values(NamedParams& params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].second.mutable_values() = snap[i];
}

}  // namespace detail_pipeline

// Trains the model in place. Per epoch: shuffled minibatches, one Adam step
// per batch on the joint loss, then the frozen-draw validation loss; stops
// once validation fails to improve for `patience` consecutive epochs and
// restores the best-validation parameters. Labels are never read here.
inline TrainResult train_model(Model& model, const Dataset& train_ds, const Dataset& valid_ds,
                               const ExperimentConfig& cfg) {
    cfg.validate();
    if (train_ds.size() == 0 || valid_ds.size() == 0)
        throw ContractError("training needs nonempty train and validation splits");
    if (train_ds.K != valid_ds.K || train_ds.L != valid_ds.L)
        throw ShapeError("train split is (" + std::to_string(train_ds.K) + "," +
                         std::to_string(train_ds.L) + ") but validation split is (" +
                         std::to_string(valid_ds.K) + "," + std::to_string(valid_ds.L) + ")");
    cfg.mask.validate(train_ds.L);

    Rng train_rng(mix_seed(cfg.seed, seed_lane::kTraining));
    const std::vector<detail_pipeline::FrozenDraw> frozen =
        detail_pipeline::freeze_validation_draws(valid_ds, cfg.mask, model.sched.T, cfg.seed);

    NamedParams named = model.params();
    std::vector<Tensor> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(t);

    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    KernelCache cache;

    TrainResult result;
    std::vector<std::vector<double>> best = detail_pipeline::snapshot_values(named);
    std::size_t epochs_without_improvement = 0;

    std::vector<std::size_t> order(train_ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates with the training stream keeps runs reproducible.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[train_rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++batch_index) {
            const std::size_t end = std::min(start + cfg.batch, order.size());
            Tensor batch_loss;
            try {
                for (std::size_t i = start; i < end; ++i) {
                    Tensor l = detail_pipeline::observation_loss(
                        model, train_ds.tensor_of(order[i]), cfg.mask, train_rng, &cache);
                    epoch_loss += l.item();
                    batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
                }
                batch_loss = mul_scalar(batch_loss, 1.0 / double(end - start));
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index + 1) + ": " + e.what());
            }
            opt.zero_grad(params);
            backward(batch_loss);
            opt.step(params);
            cache.clear();  // parameter update invalidates cached kernels
        }

        EpochPoint point;
        point.train_loss = epoch_loss / double(train_ds.size());
        point.valid_loss = detail_pipeline::validation_loss(model, valid_ds, frozen, &cache);
        result.curve.push_back(point);

        if (point.valid_loss < result.best_valid) {
            result.best_valid = point.valid_loss;
            result.best_epoch = epoch;
            best = detail_pipeline::snapshot_values(named);
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
            if (epochs_without_improvement >= cfg.patience) {
                result.stopped_early = true;
                break;
            }
        }
    }

    detail_pipeline::restore_values(named, best);
    return result;
}

inline void write_loss_curve(const TrainResult& r, std::ostream& os) {
    os << "epoch,train_loss,valid_loss\n";
    for (std::size_t i = 0; i < r.curve.size(); ++i)
        os << (i + 1) << ',' << detail_scoring::fmt_double(r.curve[i].train_loss) << ','
           << detail_scoring::fmt_double(r.curve[i].valid_loss) << '\n';
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

// Per-observation raw anomaly evidence: masked-imputation error s1 (averaged
// over repeated mask draws) and whole-window reconstruction error s2 on the
// raw observation.
struct RawScores {
    std::vector<std::uint64_t> ids;
    std::vector<double> s1, s2;
    std::vector<int> labels;  // collapsed to normal/abnormal

    std::size_t size() const { return s1.size(); }
};

inline RawScores raw_scores(const Model& model, const ExperimentConfig& cfg, const Dataset& ds,
                            Rng& rng) {
    cfg.validate();
    NoGradGuard no_grad;
    KernelCache cache;
    RawScores out;
    out.ids.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor x = ds.tensor_of(i);
        const std::vector<Tensor> repeats(cfg.score_mask_draws, x);
        DecontaminateResult dec = decontaminate_batch(repeats, cfg.mask, model.net, model.sched,
                                                      rng, DiffusionMode::Test, &cache);
        double s1 = 0.0;
        for (std::size_t d = 0; d < dec.x0.size(); ++d)
            s1 += score_s1(x, dec.x0[d], dec.masks[d]);
        s1 /= double(dec.x0.size());

        GraphOutput g = model.graph.forward(x, &cache);
        out.ids.push_back(ds.observations[i].id);
        out.s1.push_back(s1);
        out.s2.push_back(score_s2(x, g.x_hat));
        out.labels.push_back(ds.observations[i].abnormal() ? 1 : 0);
    }
    return out;
}

// Combines raw evidence under the given weights, searches the decision
// threshold on the validation split, and evaluates the test split at it.
inline ScoreReport make_report(const RawScores& valid, const RawScores& test,
                               const ScoreWeights& w) {
    w.validate();
    std::vector<double> vs(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) vs[i] = combine(valid.s1[i], valid.s2[i], w);
    ScoreReport report;
    report.tau = threshold_search(vs, valid.labels);

    std::vector<double> ts(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        ts[i] = combine(test.s1[i], test.s2[i], w);
        ScoreRow row;
        row.id = test.ids[i];
        row.s1 = test.s1[i];
        row.s2 = test.s2[i];
        row.s = ts[i];
        row.label = test.labels[i];
        row.prediction = ts[i] > report.tau ? 1 : 0;
        report.rows.push_back(row);
    }
    report.summary = metrics(ts, test.labels, report.tau);
    return report;
}

inline ScoreReport detect(const Model& model, const ExperimentConfig& cfg, const Dataset& valid_ds,
                          const Dataset& test_ds) {
    Rng valid_rng(mix_seed(cfg.seed, seed_lane::kScoring, 1));
    Rng test_rng(mix_seed(cfg.seed, seed_lane::kScoring, 2));
    const RawScores valid = raw_scores(model, cfg, valid_ds, valid_rng);
    const RawScores test = raw_scores(model, cfg, test_ds, test_rng);
    return make_report(valid, test, cfg.score_weights());
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

struct SplitData {
    Dataset train, valid, test;
};

inline std::string split_path(const std::string& prefix, SplitTag tag) {
    return prefix + "." + to_string(tag) + ".tsdc";
}

// Either loads the three splits stored under `dataset.path` (written by the
// generate subcommand) or synthesizes them from the preset.
inline SplitData load_experiment_data(const ExperimentConfig& cfg) {
    SplitData out;
    if (!cfg.dataset_path.empty()) {
        out.train = load_dataset(split_path(cfg.dataset_path, SplitTag::Train));
        out.valid = load_dataset(split_path(cfg.dataset_path, SplitTag::Valid));
        out.test = load_dataset(split_path(cfg.dataset_path, SplitTag::Test));
        return out;
    }
    SyntheticData data = generate_synthetic(cfg.synthetic_config(), cfg.seed);
    out.train = std::move(data.train);
    out.valid = std::move(data.valid);
    out.test = std::move(data.test);
    return out;
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { MaskStrategy, AnomalyTypesN, AnomalyLevel };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "masking-strategy") return SweepAxis::MaskStrategy;
    if (s == "anomaly-types-n") return SweepAxis::AnomalyTypesN;
    if (s == "anomaly-level") return SweepAxis::AnomalyLevel;
    throw ConfigError("unknown sweep axis '" + s +
                      "' (expected masking-strategy|anomaly-types-n|anomaly-level)");
}

struct SweepRow {
    std::string value;
    double f1 = 0.0, recall = 0.0, aupr = 0.0;
};

// One full train + detect cycle for a sweep point.
inline SweepRow sweep_point(const ExperimentConfig& cfg, const SplitData& data,
                            const std::string& value) {
    Model model = Model::make(cfg, data.train.K);
    train_model(model, data.train, data.valid, cfg);
    const ScoreReport report = detect(model, cfg, data.valid, data.test);
    SweepRow row;
    row.value = value;
    row.f1 = report.summary.f1;
    row.recall = report.summary.recall;
    row.aupr = report.summary.aupr;
    return row;
}

// Retrains per axis value. The dataset axes regenerate only the train/valid
// contamination; the test split is taken from the base config so metric
// movements are attributable to training conditions alone.
inline std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                   const std::vector<std::string>& values) {
    cfg.validate();
    if (values.empty()) throw ConfigError("sweep needs at least one axis value");
    if (!cfg.dataset_path.empty() && axis != SweepAxis::MaskStrategy)
        throw ConfigError("dataset sweeps regenerate synthetic data; they cannot run on a "
                          "stored dataset");

    const SplitData base = load_experiment_data(cfg);
    std::vector<SweepRow> rows;
    rows.reserve(values.size());
    for (const std::string& value : values) {
        ExperimentConfig point = cfg;
        SplitData data;
        switch (axis) {
            case SweepAxis::MaskStrategy: {
                point.mask.strategy = mask_strategy_from_string(value);
                data = base;
                break;
            }
            case SweepAxis::AnomalyTypesN: {
                SyntheticConfig scfg = cfg.synthetic_config();
                const std::size_t n = detail_config::parse_size(value, "anomaly-types-n");
                if (n == 0 || n > scfg.anomaly_types.size())
                    throw ConfigError("anomaly-types-n value " + value + " outside [1," +
                                      std::to_string(scfg.anomaly_types.size()) + "]");
                scfg.anomaly_types.resize(n);
                SyntheticData gen = generate_synthetic(scfg, cfg.seed);
                data.train = std::move(gen.train);
                data.valid = std::move(gen.valid);
                data.test = base.test;
                break;
            }
            case SweepAxis::AnomalyLevel: {
                SyntheticConfig scfg = cfg.synthetic_config();
                const double level = detail_config::parse_real(value, "anomaly-level");
                if (level < 0.0 || level >= 1.0)
                    throw ConfigError("anomaly-level value " + value + " outside [0,1)");
                scfg.rate_train = level;
                scfg.rate_valid = level;
                SyntheticData gen = generate_synthetic(scfg, cfg.seed);
                data.train = std::move(gen.train);
                data.valid = std::move(gen.valid);
                data.test = base.test;
                break;
            }
        }
        rows.push_back(sweep_point(point, data, value));
    }
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os) {
    os << "value,f1,recall,aupr\n";
    for (const SweepRow& r : rows)
        os << r.value << ',' << detail_scoring::fmt_double(r.f1) << ','
           << detail_scoring::fmt_double(r.recall) << ',' << detail_scoring::fmt_double(r.aupr)
           << '\n';
}

}  // namespace tsadc

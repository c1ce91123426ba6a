// Dataset container, binary/CSV serialization, and deterministic synthetic
// multivariate-signal generation with controlled contamination.
//
// Binary container layout (little-endian):
//   magic "TSDC" | version u32 | flags u32 | N u32 | K u32 | L u32
//   N*K*L float32 values in [observation][variable][time] order
//   N label bytes (0 = normal, 1..255 = anomaly type id)
// The low two bits of `flags` carry the split tag (0 train, 1 valid, 2 test,
// 3 unspecified).
//
// Values are stored as float32 on disk and widened to double in memory; the
// generator quantizes through float32 at creation time so save->load
// round-trips are bit-exact.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/rng.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

enum class SplitTag : std::uint32_t { Train = 0, Valid = 1, Test = 2, Unspecified = 3 };

inline std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::Train: return "train";
        case SplitTag::Valid: return "valid";
        case SplitTag::Test: return "test";
        case SplitTag::Unspecified: return "unspecified";
    }
    throw ContractError("unknown split tag");
}

enum class AnomalyType : std::uint8_t {
    Spike = 1,
    Dropout = 2,
    FrequencyShift = 3,
    PhaseDesync = 4,
    AmplitudeDrift = 5,
};

inline std::string to_string(AnomalyType t) {
    switch (t) {
        case AnomalyType::Spike: return "spike";
        case AnomalyType::Dropout: return "dropout";
        case AnomalyType::FrequencyShift: return "frequency-shift";
        case AnomalyType::PhaseDesync: return "phase-desync";
        case AnomalyType::AmplitudeDrift: return "amplitude-drift";
    }
    throw ContractError("unknown anomaly type");
}

inline AnomalyType anomaly_type_from_string(const std::string& s) {
    if (s == "spike") return AnomalyType::Spike;
    if (s == "dropout") return AnomalyType::Dropout;
    if (s == "frequency-shift") return AnomalyType::FrequencyShift;
    if (s == "phase-desync") return AnomalyType::PhaseDesync;
    if (s == "amplitude-drift") return AnomalyType::AmplitudeDrift;
    throw ConfigError("unknown anomaly type '" + s + "'");
}

struct Observation {
    std::uint64_t id = 0;        // unique across generated splits; loader assigns file-local ids
    std::vector<double> values;  // K*L, [variable][time]
    std::uint8_t label = 0;      // 0 normal, otherwise anomaly type id

    bool abnormal() const { return label != 0; }
};

struct Dataset {
    std::size_t K = 0, L = 0;
    SplitTag split = SplitTag::Unspecified;
    std::string rate_tag;  // informational sampling-rate note, not persisted
    std::vector<Observation> observations;

    std::size_t size() const { return observations.size(); }

    Tensor tensor_of(std::size_t i) const {
        if (i >= observations.size()) throw ContractError("observation index out of range");
        return Tensor({K, L}, observations[i].values);
    }

    void validate() const {
        for (const auto& o : observations)
            if (o.values.size() != K * L)
                throw ShapeError("observation " + std::to_string(o.id) + " has " +
                                 std::to_string(o.values.size()) + " values, expected " +
                                 std::to_string(K * L));
    }
};

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct SyntheticConfig {
    std::size_t n_train = 512, n_valid = 128, n_test = 256;
    std::size_t K = 4, L = 128;
    double rate_train = 0.2, rate_valid = 0.2, rate_test = 0.4;
    std::vector<AnomalyType> anomaly_types{
        AnomalyType::Spike, AnomalyType::Dropout, AnomalyType::FrequencyShift,
        AnomalyType::PhaseDesync, AnomalyType::AmplitudeDrift,
    };
    std::uint64_t base_signal_seed = 0;

    void validate() const {
        if (K == 0 || L == 0) throw ConfigError("K and L must be positive");
        if (n_train == 0 || n_valid == 0 || n_test == 0)
            throw ConfigError("all split sizes must be positive");
        for (double r : {rate_train, rate_valid, rate_test})
            if (r < 0.0 || r >= 1.0)
                throw ConfigError("contamination rate must lie in [0,1)");
        if ((rate_train > 0.0 || rate_valid > 0.0 || rate_test > 0.0) && anomaly_types.empty())
            throw ConfigError("anomaly type set must be nonempty when a contamination rate > 0");
    }

    // Small multivariate windows that train in minutes.
    static SyntheticConfig desk_preset() { return SyntheticConfig{}; }

    // Mirrors the ICBEB electrocardiogram benchmark dimensions: 12 leads,
    // 6000-step windows, 910/82/222 observations at 20.0%/20.7%/59.9%
    // contamination.
    static SyntheticConfig icbeb_preset() {
        SyntheticConfig cfg;
        cfg.n_train = 910;
        cfg.n_valid = 82;
        cfg.n_test = 222;
        cfg.K = 12;
        cfg.L = 6000;
        cfg.rate_train = 0.200;
        cfg.rate_valid = 0.207;
        cfg.rate_test = 0.599;
        return cfg;
    }
};

struct SyntheticData {
    Dataset train, valid, test;
};

namespace detail {

// Per-dataset signal family: each variable carries its own sinusoid plus a
// weighted shared latent sinusoid, so variables are genuinely coupled.
struct SignalFamily {
    std::vector<double> freq;     // cycles per window, per variable
    std::vector<double> phase;    // per variable
    std::vector<double> couple;   // latent weight per variable
    double latent_freq = 0.0;
    double latent_phase = 0.0;

    static SignalFamily make(std::size_t K, std::uint64_t base_signal_seed) {
        Rng rng(mix_seed(base_signal_seed, 0x5f6e7a8b9cadbecfULL));
        SignalFamily f;
        f.freq.resize(K);
        f.phase.resize(K);
        f.couple.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            f.freq[k] = rng.uniform(2.0, 6.0);
            f.phase[k] = rng.uniform(0.0, 6.283185307179586);
            f.couple[k] = rng.uniform(0.5, 1.0);
        }
        f.latent_freq = rng.uniform(1.0, 3.0);
        f.latent_phase = rng.uniform(0.0, 6.283185307179586);
        return f;
    }
};

struct AnomalyPlan {
    AnomalyType type;
    std::size_t w0 = 0, wlen = 0;  // affected window [w0, w0+wlen)
};

inline std::vector<double> synthesize_observation(const SignalFamily& fam, std::size_t K,
                                                  std::size_t L, Rng& rng,
                                                  const AnomalyPlan* plan) {
    constexpr double two_pi = 6.283185307179586;
    const double theta = rng.uniform(0.0, two_pi);  // shared per-observation phase
    std::vector<double> amp(K), jitter(K);
    for (std::size_t k = 0; k < K; ++k) {
        amp[k] = rng.uniform(0.9, 1.1);
        jitter[k] = rng.normal(0.0, 0.05);
    }

    // Anomaly controls, only consulted when plan != nullptr.
    const bool freq_shift = plan && plan->type == AnomalyType::FrequencyShift;
    const bool desync = plan && plan->type == AnomalyType::PhaseDesync;
    std::vector<double> desync_jump(K, 0.0);
    if (desync)
        for (std::size_t k = 0; k < K; ++k) desync_jump[k] = rng.uniform(1.5707963, 4.7123890);

    // Phase-continuous synthesis: per-step phase increments let the
    // frequency-shift anomaly avoid artificial jump discontinuities.
    std::vector<double> x(K * L);
    const double freq_mult = 2.5;
    for (std::size_t k = 0; k < K; ++k) {
        double phi = fam.phase[k] + theta + jitter[k];
        double psi = fam.latent_phase + theta;
        for (std::size_t l = 0; l < L; ++l) {
            const bool in_window = plan && l >= plan->w0 && l < plan->w0 + plan->wlen;
            double own_phi = phi;
            if (desync && in_window) own_phi += desync_jump[k];
            double v = amp[k] * std::sin(own_phi) + fam.couple[k] * std::sin(psi);
            v += rng.normal(0.0, 0.05);
            if (plan && in_window) {
                if (plan->type == AnomalyType::Dropout) v *= 0.05;
                if (plan->type == AnomalyType::AmplitudeDrift) {
                    const double t = double(l - plan->w0) / double(plan->wlen);
                    v *= 1.0 + 1.5 * t;
                }
            }
            x[k * L + l] = v;
            const double mult = (freq_shift && in_window) ? freq_mult : 1.0;
            phi += two_pi * fam.freq[k] / double(L) * mult;
            psi += two_pi * fam.latent_freq / double(L) * mult;
        }
    }

    if (plan && plan->type == AnomalyType::Spike) {
        // Sparse large-amplitude impulses inside the window, every variable.
        for (std::size_t k = 0; k < K; ++k) {
            std::size_t placed = 0;
            for (std::size_t l = plan->w0; l < plan->w0 + plan->wlen; ++l)
                if (rng.uniform() < 0.15) {
                    x[k * L + l] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(2.5, 3.5);
                    ++placed;
                }
            if (placed == 0) {
                const std::size_t l = plan->w0 + rng.uniform_index(plan->wlen);
                x[k * L + l] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(2.5, 3.5);
            }
        }
    }

    // Quantize through the on-disk width so round-trips are bit-exact.
    for (double& v : x) v = double(float(v));
    return x;
}

inline Dataset generate_split(const SyntheticConfig& cfg, const SignalFamily& fam, SplitTag split,
                              std::size_t n, double rate, Rng& rng, std::uint64_t& next_id) {
    Dataset ds;
    ds.K = cfg.K;
    ds.L = cfg.L;
    ds.split = split;
    ds.rate_tag = "synthetic";
    ds.observations.resize(n);

    std::size_t abnormal = std::size_t(std::lround(rate * double(n)));
    if (rate > 0.0 && abnormal == 0) {
        std::cerr << "warning: contamination rate " << rate << " rounds to zero abnormal "
                  << "observations out of " << n << "; forcing one\n";
        abnormal = 1;
    }
    if (abnormal > n) abnormal = n;

    // Choose which observations are abnormal (partial Fisher-Yates sample).
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<std::uint8_t> labels(n, 0);
    for (std::size_t j = 0; j < abnormal; ++j) {
        const std::size_t pick = j + rng.uniform_index(n - j);
        std::swap(order[j], order[pick]);
        labels[order[j]] =
            std::uint8_t(cfg.anomaly_types[rng.uniform_index(cfg.anomaly_types.size())]);
    }

    for (std::size_t i = 0; i < n; ++i) {
        Observation& o = ds.observations[i];
        o.id = next_id++;
        o.label = labels[i];
        Rng obs_rng = rng.fork();
        if (o.label == 0) {
            o.values = synthesize_observation(fam, cfg.K, cfg.L, obs_rng, nullptr);
        } else {
            AnomalyPlan plan;
            plan.type = AnomalyType(o.label);
            plan.wlen = std::size_t(std::lround(obs_rng.uniform(0.10, 0.40) * double(cfg.L)));
            if (plan.wlen == 0) plan.wlen = 1;
            plan.w0 = obs_rng.uniform_index(cfg.L - plan.wlen + 1);
            o.values = synthesize_observation(fam, cfg.K, cfg.L, obs_rng, &plan);
        }
    }
    return ds;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const detail::SignalFamily fam = detail::SignalFamily::make(cfg.K, cfg.base_signal_seed);
    std::uint64_t next_id = 0;
    SyntheticData out;
    Rng train_rng(mix_seed(seed, 1));
    Rng valid_rng(mix_seed(seed, 2));
    Rng test_rng(mix_seed(seed, 3));
    out.train = detail::generate_split(cfg, fam, SplitTag::Train, cfg.n_train, cfg.rate_train,
                                       train_rng, next_id);
    out.valid = detail::generate_split(cfg, fam, SplitTag::Valid, cfg.n_valid, cfg.rate_valid,
                                       valid_rng, next_id);
    out.test = detail::generate_split(cfg, fam, SplitTag::Test, cfg.n_test, cfg.rate_test,
                                      test_rng, next_id);
    return out;
}

// ---------------------------------------------------------------------------
// Binary container I/O
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kMagic[4] = {'T', 'S', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

// Reader that tracks its byte offset so failures can be located precisely.
struct TrackedReader {
    std::istream& is;
    std::size_t offset = 0;

    void read(void* dst, std::size_t n, const char* what) {
        is.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(is.gcount()) != n)
            throw FormatError(std::string("truncated while reading ") + what, offset);
        offset += n;
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }
};

}  // namespace detail

inline void save_dataset(const Dataset& ds, std::ostream& os) {
    ds.validate();
    os.write(detail::kMagic, 4);
    detail::put_u32(os, detail::kVersion);
    detail::put_u32(os, std::uint32_t(ds.split) & 0x3u);
    detail::put_u32(os, std::uint32_t(ds.size()));
    detail::put_u32(os, std::uint32_t(ds.K));
    detail::put_u32(os, std::uint32_t(ds.L));
    for (const auto& o : ds.observations)
        for (double v : o.values) detail::put_f32(os, float(v));
    for (const auto& o : ds.observations) os.put(char(o.label));
    if (!os) throw FormatError("write failure while saving dataset", 0);
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for writing", 0);
    save_dataset(ds, f);
}

inline Dataset load_dataset(std::istream& is) {
    detail::TrackedReader r{is};
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, detail::kMagic, 4) != 0)
        throw FormatError("bad magic (expected \"TSDC\")", 0);
    const std::uint32_t version = r.u32("version");
    if (version != detail::kVersion)
        throw FormatError("unsupported container version " + std::to_string(version), 4);
    const std::uint32_t flags = r.u32("flags");
    const std::uint32_t n = r.u32("observation count");
    const std::uint32_t k = r.u32("variable count");
    const std::uint32_t l = r.u32("window length");
    if (k == 0 || l == 0) throw FormatError("zero variable count or window length", 16);

    Dataset ds;
    ds.K = k;
    ds.L = l;
    ds.split = SplitTag(flags & 0x3u);
    ds.observations.resize(n);
    std::vector<unsigned char> buf(std::size_t(k) * l * 4);
    for (std::uint32_t i = 0; i < n; ++i) {
        Observation& o = ds.observations[i];
        o.id = i;
        o.values.resize(std::size_t(k) * l);
        r.read(buf.data(), buf.size(), "observation values");
        for (std::size_t j = 0; j < o.values.size(); ++j) {
            const std::uint32_t bits = std::uint32_t(buf[j * 4]) |
                                       (std::uint32_t(buf[j * 4 + 1]) << 8) |
                                       (std::uint32_t(buf[j * 4 + 2]) << 16) |
                                       (std::uint32_t(buf[j * 4 + 3]) << 24);
            o.values[j] = double(std::bit_cast<float>(bits));
        }
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char b;
        r.read(&b, 1, "observation label");
        ds.observations[i].label = b;
    }
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after dataset payload", r.offset);
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for reading", 0);
    return load_dataset(f);
}

// ---------------------------------------------------------------------------
// CSV export: one row per (observation, variable); sidecar label file
// ---------------------------------------------------------------------------

inline std::string csv_label_path(const std::string& csv_path) {
    const std::string suffix = ".csv";
    if (csv_path.size() > suffix.size() &&
        csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return csv_path.substr(0, csv_path.size() - suffix.size()) + "_labels.csv";
    return csv_path + "_labels.csv";
}

inline void export_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open '" + path + "' for writing", 0);
    f << "obs,var";
    for (std::size_t l = 0; l < ds.L; ++l) f << ",t" << l;
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Observation& o = ds.observations[i];
        for (std::size_t k = 0; k < ds.K; ++k) {
            f << i << "," << k;
            for (std::size_t l = 0; l < ds.L; ++l) {
                std::snprintf(buf, sizeof buf, "%.9g", o.values[k * ds.L + l]);
                f << "," << buf;
            }
            f << "\n";
        }
    }
    std::ofstream lf(csv_label_path(path));
    if (!lf) throw FormatError("cannot open '" + csv_label_path(path) + "' for writing", 0);
    lf << "obs,label\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
        lf << i << "," << int(ds.observations[i].label) << "\n";
}

// ---------------------------------------------------------------------------
// Contamination bookkeeping
// ---------------------------------------------------------------------------

struct ContaminationReport {
    std::size_t total = 0;
    std::size_t abnormal = 0;
    double rate = 0.0;
    std::map<std::uint8_t, std::size_t> per_type;
};

inline ContaminationReport contamination_report(const Dataset& ds) {
    ContaminationReport rep;
    rep.total = ds.size();
    for (const auto& o : ds.observations)
        if (o.label != 0) {
            ++rep.abnormal;
            ++rep.per_type[o.label];
        }
    rep.rate = rep.total == 0 ? 0.0 : double(rep.abnormal) / double(rep.total);
    return rep;
}

}  // namespace tsadc

// Flat key=value experiment configuration with dotted section keys.
// Every field has a default, `#` starts a comment, and unknown keys are
// rejected so a stale config cannot silently drift from the code. The writer
// emits a canonical snapshot that parses back to the identical struct.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "tsadc/common.hpp"
#include "tsadc/data.hpp"
#include "tsadc/diffusion.hpp"
#include "tsadc/graph.hpp"
#include "tsadc/masking.hpp"
#include "tsadc/scoring.hpp"

namespace tsadc {

struct ExperimentConfig {
    // dataset
    std::string dataset_preset = "desk";  // desk | icbeb
    std::string dataset_path;             // optional container path; overrides the preset
    std::uint64_t seed = 7;
    std::string variant = "12";           // 1 | 2 | 12 (which scores enter s)

    // training
    std::size_t epochs = 30;
    std::size_t batch = 16;
    std::size_t patience = 5;
    double lr = 1e-3;

    // masking
    MaskSpec mask;  // strategy bom, r = 16

    // diffusion
    std::size_t diffusion_T = 50;
    std::size_t diffusion_blocks = 4;
    std::size_t diffusion_channels = 64;

    // shared S4 settings (noise network state size; temporal encoder stack)
    std::size_t s4_state_size = 32;
    std::size_t s4_layers = 2;
    std::size_t s4_width = 32;

    // graph
    std::size_t graph_g = 16;
    std::size_t graph_delta = 3;
    double graph_zeta = 0.5;
    double graph_xi1 = 0.1, graph_xi2 = 0.1, graph_xi3 = 0.1;
    std::size_t graph_gin_layers = 2;
    std::size_t graph_embed_dim = 32;

    // scoring
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    std::size_t score_mask_draws = 3;

    void validate() const {
        if (dataset_preset != "desk" && dataset_preset != "icbeb")
            throw ConfigError("unknown dataset preset '" + dataset_preset + "'");
        if (variant != "1" && variant != "2" && variant != "12")
            throw ConfigError("variant must be one of 1, 2, 12; got '" + variant + "'");
        if (epochs == 0 || batch == 0)
            throw ConfigError("epochs and batch size must be positive");
        if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
        if (mask.r == 0) throw ConfigError("mask.r must be positive");
        if (diffusion_T == 0 || diffusion_blocks == 0 || diffusion_channels == 0)
            throw ConfigError("diffusion dimensions must be positive");
        if (s4_state_size == 0 || s4_layers == 0 || s4_width == 0)
            throw ConfigError("s4 dimensions must be positive");
        if (score_mask_draws == 0) throw ConfigError("score.mask_draws must be positive");
        ScoreWeights{lambda1, lambda2}.validate();
        if (graph_zeta < 0.0 || graph_zeta >= 1.0)
            throw ConfigError("graph.zeta must lie in [0,1)");
    }

    SyntheticConfig synthetic_config() const {
        if (dataset_preset == "icbeb") return SyntheticConfig::icbeb_preset();
        return SyntheticConfig::desk_preset();
    }

    EpsilonNetConfig epsilon_config(std::size_t K) const {
        EpsilonNetConfig cfg;
        cfg.K = K;
        cfg.T = diffusion_T;
        cfg.blocks = diffusion_blocks;
        cfg.channels = diffusion_channels;
        cfg.s4_state = s4_state_size;
        return cfg;
    }

    GraphConfig graph_config() const {
        GraphConfig cfg;
        cfg.embed_dim = graph_embed_dim;
        cfg.g = graph_g;
        cfg.delta = graph_delta;
        cfg.zeta = graph_zeta;
        cfg.xi1 = graph_xi1;
        cfg.xi2 = graph_xi2;
        cfg.xi3 = graph_xi3;
        cfg.gin_layers = graph_gin_layers;
        cfg.s4_layers = s4_layers;
        cfg.s4_width = s4_width;
        cfg.s4_state = s4_state_size;
        return cfg;
    }

    ScoreWeights score_weights() const {
        ScoreWeights w{lambda1, lambda2};
        if (variant == "1") w.lambda2 = 0.0;
        if (variant == "2") w.lambda1 = 0.0;
        return w;
    }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-')
            throw ConfigError("key '" + key + "' needs a nonnegative integer, got '" + v + "'");
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return std::size_t(x);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs an integer, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    return std::uint64_t(parse_size(v, key));
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs a real number, got '" + v + "'");
    }
}

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"dataset.preset", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.dataset_preset = v;
         }},
        {"dataset.path", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.dataset_path = v;
         }},
        {"seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.seed = parse_u64(v, k);
         }},
        {"variant", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.variant = v;
         }},
        {"train.epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.epochs = parse_size(v, k);
         }},
        {"train.batch", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.batch = parse_size(v, k);
         }},
        {"train.patience", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.patience = parse_size(v, k);
         }},
        {"train.lr", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.lr = parse_real(v, k);
         }},
        {"mask.strategy", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.mask.strategy = mask_strategy_from_string(v);
         }},
        {"mask.r", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.mask.r = parse_size(v, k);
         }},
        {"diffusion.T", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.diffusion_T = parse_size(v, k);
         }},
        {"diffusion.blocks", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.diffusion_blocks = parse_size(v, k);
         }},
        {"diffusion.channels", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.diffusion_channels = parse_size(v, k);
         }},
        {"s4.state_size", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.s4_state_size = parse_size(v, k);
         }},
        {"s4.layers", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.s4_layers = parse_size(v, k);
         }},
        {"s4.width", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.s4_width = parse_size(v, k);
         }},
        {"graph.g", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_g = parse_size(v, k);
         }},
        {"graph.delta", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_delta = parse_size(v, k);
         }},
        {"graph.zeta", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_zeta = parse_real(v, k);
         }},
        {"graph.xi1", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_xi1 = parse_real(v, k);
         }},
        {"graph.xi2", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_xi2 = parse_real(v, k);
         }},
        {"graph.xi3", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_xi3 = parse_real(v, k);
         }},
        {"graph.gin_layers", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_gin_layers = parse_size(v, k);
         }},
        {"graph.embed_dim", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.graph_embed_dim = parse_size(v, k);
         }},
        {"score.lambda1", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.lambda1 = parse_real(v, k);
         }},
        {"score.lambda2", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.lambda2 = parse_real(v, k);
         }},
        {"score.mask_draws", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.score_mask_draws = parse_size(v, k);
         }},
    };
    return table;
}

}  // namespace detail_config

inline ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail_config::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + " is not 'key = value': '" +
                              line + "'");
        const std::string key = detail_config::trim(line.substr(0, eq));
        const std::string value = detail_config::trim(line.substr(eq + 1));
        auto it = detail_config::setters().find(key);
        if (it == detail_config::setters().end())
            throw ConfigError("unknown config key '" + key + "'");
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(is);
}

// Canonical snapshot; parsing it back reproduces the struct exactly.
inline void write_config(const ExperimentConfig& c, std::ostream& os) {
    using detail_config::fmt_real;
    os << "dataset.preset = " << c.dataset_preset << '\n';
    os << "dataset.path = " << c.dataset_path << '\n';
    os << "seed = " << c.seed << '\n';
    os << "variant = " << c.variant << '\n';
    os << "train.epochs = " << c.epochs << '\n';
    os << "train.batch = " << c.batch << '\n';
    os << "train.patience = " << c.patience << '\n';
    os << "train.lr = " << fmt_real(c.lr) << '\n';
    os << "mask.strategy = " << to_string(c.mask.strategy) << '\n';
    os << "mask.r = " << c.mask.r << '\n';
    os << "diffusion.T = " << c.diffusion_T << '\n';
    os << "diffusion.blocks = " << c.diffusion_blocks << '\n';
    os << "diffusion.channels = " << c.diffusion_channels << '\n';
    os << "s4.state_size = " << c.s4_state_size << '\n';
    os << "s4.layers = " << c.s4_layers << '\n';
    os << "s4.width = " << c.s4_width << '\n';
    os << "graph.g = " << c.graph_g << '\n';
    os << "graph.delta = " << c.graph_delta << '\n';
    os << "graph.zeta = " << fmt_real(c.graph_zeta) << '\n';
    os << "graph.xi1 = " << fmt_real(c.graph_xi1) << '\n';
    os << "graph.xi2 = " << fmt_real(c.graph_xi2) << '\n';
    os << "graph.xi3 = " << fmt_real(c.graph_xi3) << '\n';
    os << "graph.gin_layers = " << c.graph_gin_layers << '\n';
    os << "graph.embed_dim = " << c.graph_embed_dim << '\n';
    os << "score.lambda1 = " << fmt_real(c.lambda1) << '\n';
    os << "score.lambda2 = " << fmt_real(c.lambda2) << '\n';
    os << "score.mask_draws = " << c.score_mask_draws << '\n';
}

inline std::string config_to_string(const ExperimentConfig& c) {
    std::ostringstream os;
    write_config(c, os);
    return os.str();
}

}  // namespace tsadc

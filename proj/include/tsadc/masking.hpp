// Binary masks over K-variable, L-step windows. A mask entry of 0 marks a
// value to hide; three strategies control where the zeros go:
//   RandM  — r positions per variable, sampled independently without
//            replacement (scattered point masking)
//   RandBM — one aligned width-r segment per variable, chosen independently
//   BoM    — one aligned width-r segment shared by every variable
// Segment modes partition L into floor(L/r) full segments; a tail of
// L mod r trailing steps is never masked.

#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/rng.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

enum class MaskStrategy { RandM, RandBM, BoM };

inline std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::RandM: return "randm";
        case MaskStrategy::RandBM: return "randbm";
        case MaskStrategy::BoM: return "bom";
    }
    throw ContractError("unknown mask strategy");
}

inline MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "randm") return MaskStrategy::RandM;
    if (s == "randbm") return MaskStrategy::RandBM;
    if (s == "bom") return MaskStrategy::BoM;
    throw ConfigError("unknown mask strategy '" + s + "' (expected randm|randbm|bom)");
}

struct MaskSpec {
    MaskStrategy strategy = MaskStrategy::BoM;
    std::size_t r = 16;  // time stamps masked per variable

    void validate(std::size_t L) const {
        if (r == 0) throw ConfigError("mask width r must be positive");
        if (strategy == MaskStrategy::RandM) {
            if (r > L)
                throw ConfigError("mask width r=" + std::to_string(r) + " exceeds window length " +
                                  std::to_string(L));
        } else {
            if (L / r == 0)
                throw ConfigError("segment width r=" + std::to_string(r) +
                                  " leaves no full segment in window length " + std::to_string(L));
        }
    }
};

struct Mask {
    std::size_t K = 0, L = 0;
    std::vector<double> v;  // K*L entries over {0,1}; 0 = masked
    MaskSpec spec;

    Tensor tensor() const { return Tensor({K, L}, v); }

    std::size_t zero_count() const {
        std::size_t n = 0;
        for (double x : v)
            if (x == 0.0) ++n;
        return n;
    }
};

inline Mask make_mask(const MaskSpec& spec, std::size_t K, std::size_t L, Rng& rng) {
    spec.validate(L);
    Mask m;
    m.K = K;
    m.L = L;
    m.spec = spec;
    m.v.assign(K * L, 1.0);

    switch (spec.strategy) {
        case MaskStrategy::RandM: {
            std::vector<std::size_t> idx(L);
            for (std::size_t k = 0; k < K; ++k) {
                std::iota(idx.begin(), idx.end(), 0);
                // Partial Fisher-Yates: the first r entries become the sample.
                for (std::size_t j = 0; j < spec.r; ++j) {
                    const std::size_t pick = j + rng.uniform_index(L - j);
                    std::swap(idx[j], idx[pick]);
                    m.v[k * L + idx[j]] = 0.0;
                }
            }
            break;
        }
        case MaskStrategy::RandBM: {
            const std::size_t segments = L / spec.r;
            for (std::size_t k = 0; k < K; ++k) {
                const std::size_t s = rng.uniform_index(segments);
                for (std::size_t j = 0; j < spec.r; ++j) m.v[k * L + s * spec.r + j] = 0.0;
            }
            break;
        }
        case MaskStrategy::BoM: {
            const std::size_t segments = L / spec.r;
            const std::size_t s = rng.uniform_index(segments);
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t j = 0; j < spec.r; ++j) m.v[k * L + s * spec.r + j] = 0.0;
            break;
        }
    }
    return m;
}

// Pointwise product: kept entries pass through, masked entries become exactly 0.
inline std::vector<double> apply_mask(const std::vector<double>& x, const Mask& m) {
    if (x.size() != m.v.size())
        throw ShapeError("mask covers " + std::to_string(m.v.size()) + " values, observation has " +
                         std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = m.v[i] == 0.0 ? 0.0 : x[i];
    return out;
}

inline Tensor apply_mask(const Tensor& x, const Mask& m) {
    if (x.shape() != Shape{m.K, m.L})
        throw ShapeError("mask shape {" + std::to_string(m.K) + "," + std::to_string(m.L) +
                         "} does not match tensor " + shape_str(x.shape()));
    return mul(x, m.tensor());
}

}  // namespace tsadc

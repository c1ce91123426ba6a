// Conditional denoising diffusion over masked multivariate windows.
//
// Training treats the masked observation x^u = x .* v as the clean signal
// x^0, forward-diffuses it in closed form,
//   x^t = sqrt(abar_t) x^0 + sqrt(1 - abar_t) eps,
// and trains a noise predictor eps_theta(x^t, t, c) conditioned on the kept
// values and the mask, with the squared error restricted to masked entries.
// At training time the clean estimate is recovered in one shot from step T;
// at test time the full reverse chain
//   x^{t-1} = (x^t - beta_t / sqrt(1-abar_t) eps_hat) / sqrt(alpha_t)
//             + sqrt(bbeta_t) z
// runs from T down to 1 with z = 0 on the final step.
//
// The noise predictor is a stack of residual blocks; each block adds a
// projected step embedding, applies an S4 layer, injects the projected
// condition, and applies a second S4 layer.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/masking.hpp"
#include "tsadc/rng.hpp"
#include "tsadc/s4.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    std::size_t T = 0;
    // Index i holds the value for diffusion step t = i+1.
    std::vector<double> beta, alpha, alpha_bar, beta_bar;

    double beta_at(std::size_t t) const { return beta[check(t)]; }
    double alpha_at(std::size_t t) const { return alpha[check(t)]; }
    double alpha_bar_at(std::size_t t) const { return alpha_bar[check(t)]; }
    double beta_bar_at(std::size_t t) const { return beta_bar[check(t)]; }

private:
    std::size_t check(std::size_t t) const {
        if (t < 1 || t > T)
            throw ContractError("diffusion step " + std::to_string(t) + " outside [1," +
                                std::to_string(T) + "]");
        return t - 1;
    }
};

// Linear beta ramp from 1e-4 to 0.02 with the standard derived arrays and
// bbeta_1 = beta_1.
inline NoiseSchedule build_schedule(std::size_t T) {
    if (T == 0) throw ConfigError("diffusion step count T must be at least 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.beta_bar.resize(T);
    const double b0 = 1e-4, b1 = 0.02;
    for (std::size_t i = 0; i < T; ++i)
        s.beta[i] = T == 1 ? b0 : b0 + double(i) * (b1 - b0) / double(T - 1);
    if (T > 1) s.beta[T - 1] = b1;  // interpolation can round the endpoint off
    double running = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
        if (i == 0)
            s.beta_bar[i] = s.beta[i];
        else
            s.beta_bar[i] = (1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Closed-form forward process and its inversions
// ---------------------------------------------------------------------------

inline Tensor forward_diffuse(const Tensor& x0, std::size_t t, const Tensor& eps,
                              const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw ShapeError("noise shape " + shape_str(eps.shape()) + " does not match data shape " +
                         shape_str(x0.shape()));
    const double ab = sched.alpha_bar_at(t);
    return add(mul_scalar(x0, std::sqrt(ab)), mul_scalar(eps, std::sqrt(1.0 - ab)));
}

// Squared noise error on masked entries only, divided by the masked count.
inline Tensor noise_loss(const Tensor& eps, const Tensor& eps_hat, const Mask& mask) {
    if (eps.shape() != eps_hat.shape())
        throw ShapeError("noise prediction shape " + shape_str(eps_hat.shape()) +
                         " does not match noise shape " + shape_str(eps.shape()));
    const std::size_t masked = mask.zero_count();
    if (masked == 0) throw ContractError("noise loss needs at least one masked entry");
    std::vector<double> w(mask.v.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 - mask.v[i];
    Tensor weights({mask.K, mask.L}, std::move(w));
    Tensor d = mul(sub(eps, eps_hat), weights);
    return mul_scalar(sum_all(square(d)), 1.0 / double(masked));
}

// One-shot inversion from step T: x0_hat = (x_T - sqrt(1-abar_T) eps_hat) / sqrt(abar_T).
inline Tensor one_shot_x0(const Tensor& x_T, const Tensor& eps_hat, const NoiseSchedule& sched) {
    const double ab = sched.alpha_bar_at(sched.T);
    Tensor num = sub(x_T, mul_scalar(eps_hat, std::sqrt(1.0 - ab)));
    return mul_scalar(num, 1.0 / std::sqrt(ab));
}

// ---------------------------------------------------------------------------
// Condition: kept values + mask as a two-channel context
// ---------------------------------------------------------------------------

struct Condition {
    Tensor x_masked;  // (K, L), zero on masked entries
    Tensor mask;      // (K, L) over {0,1}

    void validate() const {
        if (x_masked.shape() != mask.shape())
            throw ShapeError("condition channels disagree: " + shape_str(x_masked.shape()) +
                             " vs " + shape_str(mask.shape()));
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask.values()[i] == 0.0 && x_masked.values()[i] != 0.0)
                throw ContractError("condition kept-values channel must be zero where masked");
    }

    // (2K, L) stack consumed by the network.
    Tensor stacked() const { return concat({x_masked, mask}, 0); }
};

inline Condition make_condition(const Tensor& x, const Mask& m) {
    Condition c;
    c.x_masked = apply_mask(x.detach(), m);
    c.mask = m.tensor();
    return c;
}

// ---------------------------------------------------------------------------
// Noise-prediction network
// ---------------------------------------------------------------------------

struct EpsilonNetConfig {
    std::size_t K = 4;           // variables
    std::size_t T = 50;          // diffusion steps (for embedding range only)
    std::size_t blocks = 4;      // residual blocks
    std::size_t channels = 64;   // residual width W
    std::size_t s4_state = 32;   // H_s inside each S4 layer
    std::size_t temb_dim = 128;  // sinusoidal step-embedding size

    void validate() const {
        if (K == 0 || T == 0 || blocks == 0 || channels == 0 || s4_state == 0)
            throw ConfigError("noise network dimensions must be positive");
        if (temb_dim % 2 != 0) throw ConfigError("step embedding size must be even");
    }
};

// Fixed sinusoidal features of the diffusion step, transformer-style.
inline Tensor step_embedding_features(std::size_t t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> f(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * double(i) / double(half > 1 ? half - 1 : 1));
        f[i] = std::sin(double(t) * freq);
        f[half + i] = std::cos(double(t) * freq);
    }
    return Tensor({dim, 1}, std::move(f));
}

struct EpsilonNet {
    struct Block {
        Tensor proj_t;  // (W, W) applied to the step embedding
        Tensor proj_c;  // (W, 2K) applied to the stacked condition
        S4Layer s4_a, s4_b;
    };

    EpsilonNetConfig cfg;
    Tensor in_proj, in_bias;    // (W, K), (W, 1)
    Tensor temb_fc1, temb_b1;   // (W, temb_dim), (W, 1)
    Tensor temb_fc2, temb_b2;   // (W, W), (W, 1)
    std::vector<Block> blocks;
    Tensor out_proj, out_bias;  // (K, W), (K, 1); zero-initialized so the
                                // untrained net predicts zero noise

    static EpsilonNet make(const EpsilonNetConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t w = cfg.channels, k = cfg.K;
        EpsilonNet net;
        net.cfg = cfg;
        net.in_proj = Tensor::randn({w, k}, rng, 1.0 / std::sqrt(double(k))).set_requires_grad(true);
        net.in_bias = Tensor::zeros({w, 1}).set_requires_grad(true);
        net.temb_fc1 = Tensor::randn({w, cfg.temb_dim}, rng, 1.0 / std::sqrt(double(cfg.temb_dim)))
                           .set_requires_grad(true);
        net.temb_b1 = Tensor::zeros({w, 1}).set_requires_grad(true);
        net.temb_fc2 =
            Tensor::randn({w, w}, rng, 1.0 / std::sqrt(double(w))).set_requires_grad(true);
        net.temb_b2 = Tensor::zeros({w, 1}).set_requires_grad(true);
        net.blocks.resize(cfg.blocks);
        for (auto& b : net.blocks) {
            b.proj_t = Tensor::randn({w, w}, rng, 1.0 / std::sqrt(double(w))).set_requires_grad(true);
            b.proj_c = Tensor::randn({w, 2 * k}, rng, 1.0 / std::sqrt(double(2 * k)))
                           .set_requires_grad(true);
            b.s4_a = S4Layer::make(w, cfg.s4_state, rng);
            b.s4_b = S4Layer::make(w, cfg.s4_state, rng);
        }
        net.out_proj = Tensor::zeros({k, w}).set_requires_grad(true);
        net.out_bias = Tensor::zeros({k, 1}).set_requires_grad(true);
        return net;
    }

    // x_t: (K, L); cond: the (2K, L) stacked condition. Returns (K, L).
    Tensor apply(const Tensor& x_t, std::size_t t, const Tensor& cond,
                 KernelCache* cache = nullptr) const {
        if (x_t.rank() != 2 || x_t.shape()[0] != cfg.K)
            throw ShapeError("noise net input " + shape_str(x_t.shape()) + " does not match K=" +
                             std::to_string(cfg.K));
        if (cond.rank() != 2 || cond.shape()[0] != 2 * cfg.K || cond.shape()[1] != x_t.shape()[1])
            throw ShapeError("condition " + shape_str(cond.shape()) + " does not match input " +
                             shape_str(x_t.shape()));
        if (t < 1 || t > cfg.T)
            throw ContractError("diffusion step " + std::to_string(t) + " outside [1," +
                                std::to_string(cfg.T) + "]");

        Tensor feat = step_embedding_features(t, cfg.temb_dim);
        Tensor temb = add(matmul(temb_fc2, silu(add(matmul(temb_fc1, feat), temb_b1))), temb_b2);

        Tensor h = add(matmul(in_proj, x_t), in_bias);  // (W, L)
        for (const Block& b : blocks) {
            Tensor u = add(h, matmul(b.proj_t, temb));  // step embedding, broadcast over L
            u = b.s4_a.apply(u, cache);
            u = add(u, matmul(b.proj_c, cond));         // condition injection
            u = b.s4_b.apply(u, cache);
            h = add(h, u);
        }
        return add(matmul(out_proj, h), out_bias);
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix) const {
        out.emplace_back(prefix + ".in_proj", in_proj);
        out.emplace_back(prefix + ".in_bias", in_bias);
        out.emplace_back(prefix + ".temb_fc1", temb_fc1);
        out.emplace_back(prefix + ".temb_b1", temb_b1);
        out.emplace_back(prefix + ".temb_fc2", temb_fc2);
        out.emplace_back(prefix + ".temb_b2", temb_b2);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string bp = prefix + ".block" + std::to_string(i);
            out.emplace_back(bp + ".proj_t", blocks[i].proj_t);
            out.emplace_back(bp + ".proj_c", blocks[i].proj_c);
            blocks[i].s4_a.collect_params(out, bp + ".s4_a");
            blocks[i].s4_b.collect_params(out, bp + ".s4_b");
        }
        out.emplace_back(prefix + ".out_proj", out_proj);
        out.emplace_back(prefix + ".out_bias", out_bias);
    }
};

// ---------------------------------------------------------------------------
// Reverse sampling
// ---------------------------------------------------------------------------

// Full chain from x_T down to x_0. Noise z is drawn for every step except the
// last, whose posterior is taken at its mean.
inline Tensor reverse_sample(const Tensor& x_T, const EpsilonNet& net, const Condition& cond,
                             const NoiseSchedule& sched, Rng& rng, KernelCache* cache = nullptr) {
    Tensor stacked = cond.stacked();
    Tensor x = x_T;
    for (std::size_t t = sched.T; t >= 1; --t) {
        Tensor eps_hat = net.apply(x, t, stacked, cache);
        const double a = sched.alpha_at(t);
        const double ab = sched.alpha_bar_at(t);
        const double coeff = sched.beta_at(t) / std::sqrt(1.0 - ab);
        Tensor mu = mul_scalar(sub(x, mul_scalar(eps_hat, coeff)), 1.0 / std::sqrt(a));
        if (t > 1) {
            Tensor z = Tensor::randn(mu.shape(), rng);
            x = add(mu, mul_scalar(z, std::sqrt(sched.beta_bar_at(t))));
        } else {
            x = mu;
        }
        for (double v : x.values())
            if (!std::isfinite(v))
                throw NumericError("reverse sampling diverged at step " + std::to_string(t));
    }
    return x;
}

// ---------------------------------------------------------------------------
// Batch decontamination
// ---------------------------------------------------------------------------

enum class DiffusionMode { Train, Test };

struct DecontaminateResult {
    std::vector<Tensor> x0;    // decontaminated estimate per observation
    std::vector<Mask> masks;   // mask drawn for each observation
};

// Train mode: one-shot inversion at step T. Test mode: full reverse chain
// started from standard normal on masked entries and forward-diffused kept
// values elsewhere.
inline DecontaminateResult decontaminate_batch(const std::vector<Tensor>& batch,
                                               const MaskSpec& spec, const EpsilonNet& net,
                                               const NoiseSchedule& sched, Rng& rng,
                                               DiffusionMode mode, KernelCache* cache = nullptr) {
    DecontaminateResult out;
    out.x0.reserve(batch.size());
    out.masks.reserve(batch.size());
    for (const Tensor& x : batch) {
        if (x.rank() != 2) throw ShapeError("observations must be rank-2 (K, L)");
        const std::size_t K = x.shape()[0], L = x.shape()[1];
        Mask m = make_mask(spec, K, L, rng);
        Condition cond = make_condition(x, m);
        Tensor eps = Tensor::randn({K, L}, rng);
        Tensor x_T = forward_diffuse(cond.x_masked, sched.T, eps, sched);
        if (mode == DiffusionMode::Train) {
            Tensor eps_hat = net.apply(x_T, sched.T, cond.stacked(), cache);
            out.x0.push_back(one_shot_x0(x_T, eps_hat, sched));
        } else {
            // Replace masked entries with pure standard normal draws.
            std::vector<double> seeded = x_T.values();
            for (std::size_t i = 0; i < seeded.size(); ++i)
                if (m.v[i] == 0.0) seeded[i] = rng.normal();
            out.x0.push_back(
                reverse_sample(Tensor({K, L}, std::move(seeded)), net, cond, sched, rng, cache));
        }
        out.masks.push_back(std::move(m));
    }
    return out;
}

}  // namespace tsadc

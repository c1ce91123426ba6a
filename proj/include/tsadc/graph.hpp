// Variable dependency modeling: a time-then-graph stack. Each variable's
// series is embedded by shared S4 layers, the embedding is averaged over
// short non-overlapping intervals to form per-interval node features, an
// adjacency is learned per interval as a blend of row-softmax attention and a
// fixed cosine nearest-neighbor graph, GIN message passing mixes variables
// within each interval, and a linear head maps the mixed features back to a
// reconstruction of the input window.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/rng.hpp"
#include "tsadc/s4.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

struct GraphConfig {
    std::size_t embed_dim = 32;  // U, per-variable feature width
    std::size_t g = 16;          // interval length; L must divide into these
    std::size_t delta = 3;       // cosine neighbors kept per node
    double zeta = 0.5;           // blend weight on the cosine graph
    double xi1 = 0.1;            // smoothness weight
    double xi2 = 0.1;            // sparsity weight
    double xi3 = 0.1;            // connectivity weight
    std::size_t gin_layers = 2;
    std::size_t gin_hidden = 64;
    std::size_t s4_layers = 2;   // temporal encoder depth
    std::size_t s4_width = 32;   // temporal encoder channel count
    std::size_t s4_state = 32;

    void validate(std::size_t K, std::size_t L) const {
        if (embed_dim == 0 || g == 0 || gin_layers == 0 || gin_hidden == 0 || s4_layers == 0 ||
            s4_width == 0 || s4_state == 0)
            throw ConfigError("graph model dimensions must be positive");
        if (zeta < 0.0 || zeta >= 1.0) throw ConfigError("blend weight zeta must lie in [0,1)");
        if (L % g != 0)
            throw ConfigError("interval length " + std::to_string(g) +
                              " does not divide window length " + std::to_string(L));
        if (delta == 0 || delta > K - 1)
            throw ConfigError("neighbor count delta must lie in [1," + std::to_string(K - 1) +
                              "]");
    }
};

// ---------------------------------------------------------------------------
// Temporal embedding: shared S4 stack applied to each variable independently
// ---------------------------------------------------------------------------

struct TemporalEmbedding {
    std::vector<Tensor> rows;  // K tensors, each (L, U) time-major

    std::size_t vars() const { return rows.size(); }
    std::size_t length() const { return rows.empty() ? 0 : rows[0].shape()[0]; }
    std::size_t width() const { return rows.empty() ? 0 : rows[0].shape()[1]; }
};

struct TemporalEncoder {
    std::size_t width = 0;  // internal S4 channel count
    Tensor lift, lift_b;    // (width, 1) scalar series lift
    std::vector<S4Layer> layers;
    Tensor out_mix, out_b;  // (U, width), (U, 1) final mixing down to U

    static TemporalEncoder make(std::size_t embed_dim, std::size_t s4_width, std::size_t depth,
                                std::size_t state, Rng& rng) {
        if (embed_dim == 0 || s4_width == 0 || depth == 0)
            throw ConfigError("encoder dimensions must be positive");
        TemporalEncoder enc;
        enc.width = s4_width;
        enc.lift = Tensor::randn({s4_width, 1}, rng).set_requires_grad(true);
        enc.lift_b = Tensor::zeros({s4_width, 1}).set_requires_grad(true);
        for (std::size_t i = 0; i < depth; ++i)
            enc.layers.push_back(S4Layer::make(s4_width, state, rng));
        enc.out_mix = Tensor::randn({embed_dim, s4_width}, rng, 1.0 / std::sqrt(double(s4_width)))
                          .set_requires_grad(true);
        enc.out_b = Tensor::zeros({embed_dim, 1}).set_requires_grad(true);
        return enc;
    }

    // x: (K, L). Every variable runs through the same stack.
    TemporalEmbedding apply(const Tensor& x, KernelCache* cache = nullptr) const {
        if (x.rank() != 2) throw ShapeError("temporal encoder expects a (K, L) window");
        TemporalEmbedding emb;
        const std::size_t K = x.shape()[0];
        emb.rows.reserve(K);
        for (std::size_t k = 0; k < K; ++k) {
            Tensor h = add(matmul(lift, slice(x, 0, k, 1)), lift_b);  // (width, L)
            for (const S4Layer& layer : layers) h = layer.apply(h, cache);
            h = add(matmul(out_mix, h), out_b);  // (U, L)
            emb.rows.push_back(transpose(h));    // (L, U)
        }
        return emb;
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix) const {
        out.emplace_back(prefix + ".lift", lift);
        out.emplace_back(prefix + ".lift_b", lift_b);
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].collect_params(out, prefix + ".s4_" + std::to_string(i));
        out.emplace_back(prefix + ".out_mix", out_mix);
        out.emplace_back(prefix + ".out_b", out_b);
    }
};

// ---------------------------------------------------------------------------
// Interval node embeddings and adjacency learning
// ---------------------------------------------------------------------------

// Mean of the temporal embedding over each g-long interval: d = L/g tensors
// of shape (K, U).
inline std::vector<Tensor> interval_embed(const TemporalEmbedding& emb, std::size_t g) {
    if (emb.rows.empty()) throw ContractError("temporal embedding has no variables");
    const std::size_t L = emb.length();
    if (g == 0 || L % g != 0)
        throw ConfigError("interval length " + std::to_string(g) +
                          " does not divide embedding length " + std::to_string(L));
    const std::size_t d = L / g;
    std::vector<Tensor> out;
    out.reserve(d);
    for (std::size_t m = 0; m < d; ++m) {
        std::vector<Tensor> per_var;
        per_var.reserve(emb.rows.size());
        for (const Tensor& row : emb.rows)
            per_var.push_back(mean_axis(slice(row, 0, m * g, g), 0));  // (U)
        out.push_back(stack0(per_var));  // (K, U)
    }
    return out;
}

// Row-softmax self-attention over node embeddings: A = softmax(Q R^T / sqrt(U)).
inline Tensor attention_adjacency(const Tensor& e, const Tensor& wq, const Tensor& wr) {
    if (e.rank() != 2) throw ShapeError("node embeddings must be (K, U)");
    const std::size_t U = e.shape()[1];
    if (wq.shape() != Shape{U, U} || wr.shape() != Shape{U, U})
        throw ShapeError("attention projections must be square (U, U)");
    Tensor q = matmul(e, wq);
    Tensor r = matmul(e, wr);
    Tensor logits = mul_scalar(matmul(q, transpose(r)), 1.0 / std::sqrt(double(U)));
    return softmax_rows(logits);
}

// Fixed cosine-similarity graph: per row keep the delta highest off-diagonal
// similarities (ties to the lower index), zero the rest, clamp kept values to
// [0,1]. Built outside the autodiff graph; it guides rather than trains.
inline Tensor knn_adjacency(const Tensor& e, std::size_t delta) {
    if (e.rank() != 2) throw ShapeError("node embeddings must be (K, U)");
    const std::size_t K = e.shape()[0], U = e.shape()[1];
    if (delta == 0 || delta > K - 1)
        throw ContractError("neighbor count " + std::to_string(delta) + " must lie in [1," +
                            std::to_string(K - 1) + "]");
    const std::vector<double>& v = e.values();
    std::vector<double> norm(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t u = 0; u < U; ++u) s += v[k * U + u] * v[k * U + u];
        norm[k] = std::sqrt(s);
    }
    std::vector<double> a(K * K, 0.0);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < K; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < K; ++j) {
            if (j == i) continue;
            double cosine = 0.0;
            if (norm[i] > 0.0 && norm[j] > 0.0) {
                double dot = 0.0;
                for (std::size_t u = 0; u < U; ++u) dot += v[i * U + u] * v[j * U + u];
                cosine = dot / (norm[i] * norm[j]);
            }
            cand.emplace_back(cosine, j);
        }
        std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        for (std::size_t r = 0; r < delta; ++r)
            a[i * K + cand[r].second] = std::clamp(cand[r].first, 0.0, 1.0);
    }
    return Tensor({K, K}, std::move(a));
}

inline Tensor blend_adjacency(const Tensor& a_prime, const Tensor& a, double zeta) {
    if (zeta < 0.0 || zeta >= 1.0) throw ConfigError("blend weight zeta must lie in [0,1)");
    if (a_prime.shape() != a.shape())
        throw ShapeError("adjacency shapes disagree: " + shape_str(a_prime.shape()) + " vs " +
                         shape_str(a.shape()));
    return add(mul_scalar(a_prime, zeta), mul_scalar(a, 1.0 - zeta));
}

// ---------------------------------------------------------------------------
// Graph regularization
// ---------------------------------------------------------------------------

// Mean over intervals of
//   xi1/K^2 tr(E^T (D - A) E)  +  xi2/K^2 ||A||_F^2  -  xi3/K 1^T log(A 1),
// with the log guarded against zero row sums.
inline Tensor graph_reg_loss(const std::vector<Tensor>& embeds, const std::vector<Tensor>& adjs,
                             double xi1, double xi2, double xi3) {
    if (embeds.empty() || embeds.size() != adjs.size())
        throw ContractError("regularizer needs matching nonempty embedding/adjacency lists");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t m = 0; m < embeds.size(); ++m) {
        const Tensor& e = embeds[m];
        const Tensor& a = adjs[m];
        const std::size_t K = e.shape()[0];
        if (a.shape() != Shape{K, K})
            throw ShapeError("adjacency " + shape_str(a.shape()) + " does not match " +
                             std::to_string(K) + " nodes");
        Tensor rowsum = matmul(a, Tensor::ones({K, 1}));                   // degrees, (K, 1)
        Tensor lap_e = sub(mul(e, rowsum), matmul(a, e));                  // (D - A) E
        Tensor smooth = mul_scalar(sum_all(mul(e, lap_e)), xi1 / double(K * K));
        Tensor sparse = mul_scalar(sum_all(square(a)), xi2 / double(K * K));
        Tensor connect =
            mul_scalar(sum_all(log(add_scalar(rowsum, 1e-12))), -xi3 / double(K));
        total = add(total, add(add(smooth, sparse), connect));
    }
    return mul_scalar(total, 1.0 / double(embeds.size()));
}

// ---------------------------------------------------------------------------
// GIN message passing over interval slices
// ---------------------------------------------------------------------------

struct GinLayer {
    Tensor w1, b1;  // (U, hidden), (1, hidden)
    Tensor w2, b2;  // (hidden, U), (1, U)
    Tensor eps;     // learnable self-loop weight, scalar
};

struct GinStack {
    std::vector<GinLayer> layers;

    static GinStack make(std::size_t feat, std::size_t hidden, std::size_t depth, Rng& rng) {
        if (feat == 0 || hidden == 0 || depth == 0)
            throw ConfigError("GIN dimensions must be positive");
        GinStack s;
        s.layers.resize(depth);
        for (GinLayer& l : s.layers) {
            l.w1 = Tensor::randn({feat, hidden}, rng, 1.0 / std::sqrt(double(feat)))
                       .set_requires_grad(true);
            l.b1 = Tensor::zeros({1, hidden}).set_requires_grad(true);
            l.w2 = Tensor::randn({hidden, feat}, rng, 1.0 / std::sqrt(double(hidden)))
                       .set_requires_grad(true);
            l.b2 = Tensor::zeros({1, feat}).set_requires_grad(true);
            l.eps = Tensor::zeros({1}).set_requires_grad(true);
        }
        return s;
    }

    // h: (K, g, U) interval slice; adj: (K, K) shared across the g stamps.
    // Each stamp updates h_v <- MLP((1 + eps) h_v + sum_u adj[v,u] h_u).
    Tensor apply(const Tensor& h, const Tensor& adj) const {
        if (h.rank() != 3) throw ShapeError("GIN expects a (K, g, U) slice");
        const std::size_t K = h.shape()[0], g = h.shape()[1], U = h.shape()[2];
        if (adj.shape() != Shape{K, K})
            throw ShapeError("adjacency " + shape_str(adj.shape()) + " does not match " +
                             std::to_string(K) + " nodes");
        // Flattening to (K, g*U) lets one matmul aggregate every stamp at once.
        Tensor x = reshape(h, {K, g * U});
        for (const GinLayer& l : layers) {
            if (l.w1.shape()[0] != U)
                throw ShapeError("GIN layer expects feature width " +
                                 std::to_string(l.w1.shape()[0]) + ", got " + std::to_string(U));
            Tensor pre = add(mul(x, add_scalar(l.eps, 1.0)), matmul(adj, x));
            Tensor y = reshape(pre, {K * g, U});
            y = relu(add(matmul(y, l.w1), l.b1));
            y = add(matmul(y, l.w2), l.b2);
            x = reshape(y, {K, g * U});
        }
        return reshape(x, {K, g, U});
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string lp = prefix + ".layer" + std::to_string(i);
            out.emplace_back(lp + ".w1", layers[i].w1);
            out.emplace_back(lp + ".b1", layers[i].b1);
            out.emplace_back(lp + ".w2", layers[i].w2);
            out.emplace_back(lp + ".b2", layers[i].b2);
            out.emplace_back(lp + ".eps", layers[i].eps);
        }
    }
};

// ---------------------------------------------------------------------------
// Reconstruction head and losses
// ---------------------------------------------------------------------------

// Concatenate interval node features along time and map U -> 1 per stamp.
inline Tensor reconstruct(const std::vector<Tensor>& zs, const Tensor& head_w,
                          const Tensor& head_b) {
    if (zs.empty()) throw ContractError("reconstruction needs at least one interval");
    Tensor z = zs.size() == 1 ? zs[0] : concat(zs, 1);  // (K, L, U)
    const std::size_t K = z.shape()[0], L = z.shape()[1], U = z.shape()[2];
    if (head_w.shape() != Shape{U, 1}) throw ShapeError("head weights must be (U, 1)");
    Tensor flat = add(matmul(z, head_w), head_b);  // (K, L, 1)
    return reshape(flat, {K, L});
}

inline Tensor recon_loss(const Tensor& target, const Tensor& recon) {
    if (target.shape() != recon.shape())
        throw ShapeError("reconstruction " + shape_str(recon.shape()) + " does not match target " +
                         shape_str(target.shape()));
    return mean_all(square(sub(target, recon)));
}

// Unweighted sum of the three training losses; rejects non-finite components.
inline Tensor total_loss(const Tensor& noise, const Tensor& graph, const Tensor& recon) {
    if (!std::isfinite(noise.item())) throw NumericError("noise loss is not finite");
    if (!std::isfinite(graph.item())) throw NumericError("graph regularization loss is not finite");
    if (!std::isfinite(recon.item())) throw NumericError("reconstruction loss is not finite");
    return add(add(noise, graph), recon);
}

// ---------------------------------------------------------------------------
// Full module
// ---------------------------------------------------------------------------

struct GraphOutput {
    Tensor x_hat;                   // (K, L) reconstruction
    std::vector<Tensor> adjacency;  // blended (K, K) per interval
    Tensor reg;                     // graph regularization loss
    Tensor recon;                   // reconstruction loss
};

struct GraphModel {
    GraphConfig cfg;
    TemporalEncoder encoder;
    Tensor wq, wr;          // attention projections
    GinStack gin;
    Tensor head_w, head_b;  // (U, 1), scalar

    static GraphModel make(const GraphConfig& cfg, Rng& rng) {
        GraphModel m;
        m.cfg = cfg;
        m.encoder =
            TemporalEncoder::make(cfg.embed_dim, cfg.s4_width, cfg.s4_layers, cfg.s4_state, rng);
        const double scale = 1.0 / std::sqrt(double(cfg.embed_dim));
        m.wq = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, scale).set_requires_grad(true);
        m.wr = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, scale).set_requires_grad(true);
        m.gin = GinStack::make(cfg.embed_dim, cfg.gin_hidden, cfg.gin_layers, rng);
        m.head_w = Tensor::randn({cfg.embed_dim, 1}, rng, scale).set_requires_grad(true);
        m.head_b = Tensor::zeros({1}).set_requires_grad(true);
        return m;
    }

    // x: (K, L) clean estimate in training, raw observation in scoring.
    GraphOutput forward(const Tensor& x, KernelCache* cache = nullptr) const {
        if (x.rank() != 2) throw ShapeError("graph model expects a (K, L) window");
        const std::size_t K = x.shape()[0], L = x.shape()[1];
        cfg.validate(K, L);
        TemporalEmbedding emb = encoder.apply(x, cache);
        std::vector<Tensor> embeds = interval_embed(emb, cfg.g);

        GraphOutput out;
        out.adjacency.reserve(embeds.size());
        for (const Tensor& e : embeds) {
            Tensor attn = attention_adjacency(e, wq, wr);
            Tensor guide;
            {
                NoGradGuard no_grad;
                guide = knn_adjacency(e.detach(), cfg.delta);
            }
            out.adjacency.push_back(blend_adjacency(guide, attn, cfg.zeta));
        }
        out.reg = graph_reg_loss(embeds, out.adjacency, cfg.xi1, cfg.xi2, cfg.xi3);

        std::vector<Tensor> zs;
        zs.reserve(embeds.size());
        for (std::size_t m = 0; m < embeds.size(); ++m) {
            std::vector<Tensor> per_var;
            per_var.reserve(K);
            for (std::size_t k = 0; k < K; ++k)
                per_var.push_back(slice(emb.rows[k], 0, m * cfg.g, cfg.g));  // (g, U)
            Tensor h = stack0(per_var);                                      // (K, g, U)
            zs.push_back(gin.apply(h, out.adjacency[m]));
        }
        out.x_hat = reconstruct(zs, head_w, head_b);
        out.recon = recon_loss(x, out.x_hat);
        return out;
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix) const {
        encoder.collect_params(out, prefix + ".encoder");
        out.emplace_back(prefix + ".wq", wq);
        out.emplace_back(prefix + ".wr", wr);
        gin.collect_params(out, prefix + ".gin");
        out.emplace_back(prefix + ".head_w", head_w);
        out.emplace_back(prefix + ".head_b", head_b);
    }
};

}  // namespace tsadc

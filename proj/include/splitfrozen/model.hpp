#pragma once

// Toy layered model with a frozen base and an explicitly decomposed backward
// pass. Layers are residual blocks (optionally single-head attention followed
// by) Linear -> GELU -> Linear, wide enough to exercise the split-learning
// protocol while keeping finite-difference gradient checks cheap.
//
// Backward is split ZB-style:
//   B-phase  propagates input gradients and records, per adapted projection,
//            the (input, upstream) pair needed later; no weight is touched.
//   W-phase  computes adapter/head gradients from the recorded pairs and
//            applies the optimizer step, consuming the contexts.
//
// Every row of a batch is processed independently (attention attends within
// a row reshaped to tokens), so re-batching rows never changes their values.
// That property is what makes pooled server-side training bit-identical to a
// centralized run.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/lora.hpp"
#include "splitfrozen/tensor.hpp"

namespace splitfrozen {

struct ToyConfig {
    std::uint32_t depth = 4;
    std::uint32_t width = 16;
    std::uint32_t num_classes = 4;
    std::uint64_t seed = 0;
    bool attention = false;
    std::uint32_t attn_tokens = 4;  // rows reshape to (attn_tokens x width/attn_tokens)

    void validate() const {
        if (depth < 1 || width < 1 || num_classes < 2)
            throw std::invalid_argument("ToyConfig: need depth >= 1, width >= 1, classes >= 2");
        if (attention && (attn_tokens < 2 || width % attn_tokens != 0))
            throw std::invalid_argument("ToyConfig: width must be divisible by attn_tokens >= 2");
    }
};

enum class ProjTarget : std::uint32_t {
    kAttnQ = 0, kAttnK = 1, kAttnV = 2, kAttnO = 3, kFc1 = 4, kFc2 = 5,
};
constexpr std::size_t kNumProjTargets = 6;

inline const char* proj_target_name(ProjTarget t) {
    switch (t) {
        case ProjTarget::kAttnQ: return "attn_q";
        case ProjTarget::kAttnK: return "attn_k";
        case ProjTarget::kAttnV: return "attn_v";
        case ProjTarget::kAttnO: return "attn_o";
        case ProjTarget::kFc1: return "fc1";
        case ProjTarget::kFc2: return "fc2";
    }
    return "?";
}

struct LayerCache {
    bool valid = false;
    Tensor2D attn_in;    // n x d (attention variant only)
    Tensor2D r_all;      // (n*s) x t token view of attn_in
    Tensor2D q, k, v;    // (n*s) x t
    Tensor2D p;          // (n*s) x s, softmax rows
    Tensor2D z;          // (n*s) x t
    Tensor2D mlp_in;     // n x d
    Tensor2D pre_gelu;   // n x d
    Tensor2D post_gelu;  // n x d
};

struct ToyLayer {
    std::uint32_t layer_index = 0;
    // Frozen base weights, all (out x in).
    Tensor2D w_fc1, w_fc2;
    Tensor2D w_q, w_k, w_v, w_o;  // attention variant only
    std::array<std::optional<LoRAAdapter>, kNumProjTargets> adapters;
    LayerCache cache;
};

struct ToyModel {
    ToyConfig config;
    std::vector<ToyLayer> layers;
    Tensor2D head_w;  // classes x width, trainable, zero-init
    Tensor2D head_b;  // 1 x classes, trainable
    std::uint32_t trainable_start = 0;  // adapters live on layers >= this
};

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline Tensor2D reshape(const Tensor2D& t, std::size_t rows, std::size_t cols) {
    detail::require(t.size() == rows * cols, "reshape: size mismatch");
    return Tensor2D(rows, cols, t.values());
}

// Deterministic construction: weights are drawn layer by layer in a fixed
// order ([q k v o] fc1 fc2), stddev 1/sqrt(fan_in). The head starts at zero
// so an untrained model emits uniform logits.
inline ToyModel make_toy_model(const ToyConfig& cfg) {
    cfg.validate();
    ToyModel m;
    m.config = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.width;
    for (std::uint32_t i = 0; i < cfg.depth; ++i) {
        ToyLayer layer;
        layer.layer_index = i;
        if (cfg.attention) {
            const std::size_t t = cfg.width / cfg.attn_tokens;
            const double sd = 1.0 / std::sqrt(static_cast<double>(t));
            layer.w_q = gaussian_tensor(t, t, sd, rng);
            layer.w_k = gaussian_tensor(t, t, sd, rng);
            layer.w_v = gaussian_tensor(t, t, sd, rng);
            layer.w_o = gaussian_tensor(t, t, sd, rng);
        }
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        layer.w_fc1 = gaussian_tensor(d, d, sd, rng);
        layer.w_fc2 = gaussian_tensor(d, d, sd, rng);
        m.layers.push_back(std::move(layer));
    }
    m.head_w = Tensor2D(cfg.num_classes, d);
    m.head_b = Tensor2D(1, cfg.num_classes);
    m.trainable_start = cfg.depth;  // nothing trainable until adapters attach
    return m;
}

// Attaches fresh adapters to every projection of layers >= from_layer (or of
// the subset in layer_filter) and marks those layers as the trainable suffix.
// Base weights stay frozen; a fresh adapter changes nothing until trained.
inline void attach_adapters(ToyModel& m, std::uint32_t from_layer, std::uint32_t rank,
                            std::uint64_t seed, double scale_alpha = -1.0,
                            const std::vector<std::uint32_t>& layer_filter = {}) {
    if (from_layer > m.config.depth)
        throw std::invalid_argument("attach_adapters: from_layer beyond depth");
    const std::size_t d = m.config.width;
    for (std::uint32_t i = from_layer; i < m.config.depth; ++i) {
        if (!layer_filter.empty() &&
            std::find(layer_filter.begin(), layer_filter.end(), i) == layer_filter.end())
            continue;
        ToyLayer& layer = m.layers[i];
        auto attach = [&](ProjTarget target, std::size_t d_in, std::size_t d_out) {
            const std::uint64_t sub =
                derive_seed(seed, static_cast<std::uint64_t>(i) * kNumProjTargets +
                                      static_cast<std::uint64_t>(target));
            layer.adapters[static_cast<std::size_t>(target)] = adapter_init(
                rank, d_in, d_out, sub,
                "layer" + std::to_string(i) + "." + proj_target_name(target), scale_alpha);
        };
        if (m.config.attention) {
            const std::size_t t = m.config.width / m.config.attn_tokens;
            attach(ProjTarget::kAttnQ, t, t);
            attach(ProjTarget::kAttnK, t, t);
            attach(ProjTarget::kAttnV, t, t);
            attach(ProjTarget::kAttnO, t, t);
        }
        attach(ProjTarget::kFc1, d, d);
        attach(ProjTarget::kFc2, d, d);
    }
    m.trainable_start = from_layer;
}

namespace detail {

inline Tensor2D project(const Tensor2D& x, const Tensor2D& w,
                        const std::optional<LoRAAdapter>& adapter) {
    Tensor2D y = matmul_nt(x, w);
    if (adapter) add_inplace(y, adapter_forward(*adapter, x));
    return y;
}

inline Tensor2D project_input_grad(const Tensor2D& upstream, const Tensor2D& w,
                                   const std::optional<LoRAAdapter>& adapter) {
    Tensor2D dx = matmul(upstream, w);
    if (adapter) add_inplace(dx, adapter_input_grad(*adapter, upstream));
    return dx;
}

// One layer forward. `cache` may be null (device mode: nothing retained).
inline Tensor2D layer_forward(const ToyLayer& layer, const ToyConfig& cfg, const Tensor2D& x,
                              LayerCache* cache) {
    Tensor2D mlp_in = x;
    if (cfg.attention) {
        const std::size_t s = cfg.attn_tokens;
        const std::size_t t = cfg.width / s;
        const std::size_t n = x.rows();
        const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(t));
        Tensor2D r_all = reshape(x, n * s, t);
        Tensor2D q = project(r_all, layer.w_q, layer.adapters[0]);
        Tensor2D k = project(r_all, layer.w_k, layer.adapters[1]);
        Tensor2D v = project(r_all, layer.w_v, layer.adapters[2]);
        Tensor2D p(n * s, s);
        Tensor2D z(n * s, t);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = i * s;
            for (std::size_t a = 0; a < s; ++a) {
                double row_max = -std::numeric_limits<double>::infinity();
                std::vector<double> scores(s);
                for (std::size_t b = 0; b < s; ++b) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < t; ++c)
                        acc += q.at(base + a, c) * k.at(base + b, c);
                    scores[b] = acc * inv_sqrt_t;
                    row_max = std::max(row_max, scores[b]);
                }
                double denom = 0.0;
                for (std::size_t b = 0; b < s; ++b) denom += std::exp(scores[b] - row_max);
                for (std::size_t b = 0; b < s; ++b)
                    p.at(base + a, b) = std::exp(scores[b] - row_max) / denom;
                for (std::size_t c = 0; c < t; ++c) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < s; ++b)
                        acc += p.at(base + a, b) * v.at(base + b, c);
                    z.at(base + a, c) = acc;
                }
            }
        }
        Tensor2D o = project(z, layer.w_o, layer.adapters[3]);
        mlp_in = add(x, reshape(o, n, cfg.width));
        if (cache) {
            cache->attn_in = x;
            cache->r_all = std::move(r_all);
            cache->q = std::move(q);
            cache->k = std::move(k);
            cache->v = std::move(v);
            cache->p = std::move(p);
            cache->z = std::move(z);
        }
    }
    Tensor2D pre = project(mlp_in, layer.w_fc1, layer.adapters[4]);
    Tensor2D post(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) post.data()[i] = gelu(pre.data()[i]);
    Tensor2D out = project(post, layer.w_fc2, layer.adapters[5]);
    add_inplace(out, mlp_in);
    if (cache) {
        cache->mlp_in = std::move(mlp_in);
        cache->pre_gelu = std::move(pre);
        cache->post_gelu = std::move(post);
        cache->valid = true;
    }
    return out;
}

}  // namespace detail

// Activations after layers [from_layer, to_layer). Read-only overload: device
// mode, nothing retained, safe to call concurrently on a shared model.
inline Tensor2D forward_prefix(const ToyModel& m, const Tensor2D& input,
                               std::uint32_t from_layer, std::uint32_t to_layer) {
    if (from_layer > to_layer || to_layer > m.config.depth)
        throw std::invalid_argument("forward_prefix: bad layer range [" +
                                    std::to_string(from_layer) + ", " +
                                    std::to_string(to_layer) + ") for depth " +
                                    std::to_string(m.config.depth));
    if (input.cols() != m.config.width)
        throw std::invalid_argument("forward_prefix: layer " + std::to_string(from_layer) +
                                    " expects width " + std::to_string(m.config.width) +
                                    ", input has " + std::to_string(input.cols()));
    Tensor2D h = input;
    for (std::uint32_t i = from_layer; i < to_layer; ++i)
        h = detail::layer_forward(m.layers[i], m.config, h, nullptr);
    return h;
}

// Caching overload: server mode, retains what the B-phase will need.
inline Tensor2D forward_prefix(ToyModel& m, const Tensor2D& input, std::uint32_t from_layer,
                               std::uint32_t to_layer, bool cache) {
    if (!cache) return forward_prefix(static_cast<const ToyModel&>(m), input, from_layer, to_layer);
    if (from_layer > to_layer || to_layer > m.config.depth)
        throw std::invalid_argument("forward_prefix: bad layer range [" +
                                    std::to_string(from_layer) + ", " +
                                    std::to_string(to_layer) + ") for depth " +
                                    std::to_string(m.config.depth));
    if (input.cols() != m.config.width)
        throw std::invalid_argument("forward_prefix: layer " + std::to_string(from_layer) +
                                    " expects width " + std::to_string(m.config.width) +
                                    ", input has " + std::to_string(input.cols()));
    Tensor2D h = input;
    for (std::uint32_t i = from_layer; i < to_layer; ++i)
        h = detail::layer_forward(m.layers[i], m.config, h, &m.layers[i].cache);
    return h;
}

inline Tensor2D head_forward(const ToyModel& m, const Tensor2D& h) {
    Tensor2D logits = matmul_nt(h, m.head_w);
    for (std::size_t r = 0; r < logits.rows(); ++r)
        for (std::size_t c = 0; c < logits.cols(); ++c) logits.at(r, c) += m.head_b.at(0, c);
    return logits;
}

struct LossGrad {
    double loss = 0.0;
    Tensor2D dlogits;
};

// Mean cross-entropy with log-sum-exp stabilization; gradient is already
// divided by the batch size.
inline LossGrad softmax_xent(const Tensor2D& logits, const std::vector<std::uint32_t>& labels) {
    detail::require(logits.rows() == labels.size(), "softmax_xent: label count mismatch");
    LossGrad out;
    out.dlogits = Tensor2D(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        detail::require(labels[r] < logits.cols(), "softmax_xent: label out of range");
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < logits.cols(); ++c)
            row_max = std::max(row_max, logits.at(r, c));
        double denom = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c)
            denom += std::exp(logits.at(r, c) - row_max);
        const double lse = row_max + std::log(denom);
        total += lse - logits.at(r, labels[r]);
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            const double softmax = std::exp(logits.at(r, c) - row_max) / denom;
            out.dlogits.at(r, c) = (softmax - (labels[r] == c ? 1.0 : 0.0)) * inv_n;
        }
    }
    out.loss = total * inv_n;
    return out;
}

// (input, upstream-gradient) pair recorded by the B-phase for one adapted
// projection; everything the W-phase needs to form the weight gradients.
struct WContext {
    std::uint32_t layer_index = 0;
    ProjTarget target = ProjTarget::kFc1;
    Tensor2D input;
    Tensor2D upstream;
};

struct BackwardContexts {
    std::vector<WContext> entries;
    bool has_head = false;
    Tensor2D head_input;    // h fed to the classifier
    Tensor2D head_dlogits;  // loss gradient at the logits
    bool consumed = false;
};

// Classifier backward: records the head context and returns the gradient
// flowing into the layer stack.
inline Tensor2D head_backward(const ToyModel& m, const Tensor2D& head_input,
                              const Tensor2D& dlogits, BackwardContexts& ctx) {
    ctx.has_head = true;
    ctx.head_input = head_input;
    ctx.head_dlogits = dlogits;
    return matmul(dlogits, m.head_w);
}

namespace detail {

inline void record(BackwardContexts& ctx, std::uint32_t layer, ProjTarget target,
                   const Tensor2D& input, const Tensor2D& upstream,
                   const std::optional<LoRAAdapter>& adapter) {
    if (!adapter) return;
    ctx.entries.push_back(WContext{layer, target, input, upstream});
}

}  // namespace detail

// B-phase: propagates loss gradients down through layers [to_layer,
// from_layer), consuming the forward caches. Frozen base weights get no
// gradient buffers; adapted projections get a recorded context instead.
inline Tensor2D backward_B(ToyModel& m, const Tensor2D& loss_grad, std::uint32_t from_layer,
                           std::uint32_t to_layer, BackwardContexts& ctx) {
    if (from_layer > to_layer || to_layer > m.config.depth)
        throw std::invalid_argument("backward_B: bad layer range");
    Tensor2D delta = loss_grad;
    for (std::uint32_t idx = to_layer; idx > from_layer; --idx) {
        ToyLayer& layer = m.layers[idx - 1];
        if (!layer.cache.valid)
            throw std::runtime_error("backward without forward: layer " +
                                     std::to_string(idx - 1) + " has no cached activations");
        LayerCache& cache = layer.cache;
        // MLP block: y = mlp_in + fc2(gelu(fc1(mlp_in)))
        const Tensor2D& d_out = delta;
        detail::record(ctx, layer.layer_index, ProjTarget::kFc2, cache.post_gelu, d_out,
                       layer.adapters[5]);
        Tensor2D d_post = detail::project_input_grad(d_out, layer.w_fc2, layer.adapters[5]);
        Tensor2D d_pre(d_post.rows(), d_post.cols());
        for (std::size_t i = 0; i < d_post.size(); ++i)
            d_pre.data()[i] = d_post.data()[i] * gelu_derivative(cache.pre_gelu.data()[i]);
        detail::record(ctx, layer.layer_index, ProjTarget::kFc1, cache.mlp_in, d_pre,
                       layer.adapters[4]);
        Tensor2D d_mlp_in = detail::project_input_grad(d_pre, layer.w_fc1, layer.adapters[4]);
        add_inplace(d_mlp_in, d_out);  // residual
        if (!m.config.attention) {
            delta = std::move(d_mlp_in);
        } else {
            const std::size_t s = m.config.attn_tokens;
            const std::size_t t = m.config.width / s;
            const std::size_t n = d_mlp_in.rows();
            const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(t));
            Tensor2D d_o = reshape(d_mlp_in, n * s, t);
            detail::record(ctx, layer.layer_index, ProjTarget::kAttnO, cache.z, d_o,
                           layer.adapters[3]);
            Tensor2D d_z = detail::project_input_grad(d_o, layer.w_o, layer.adapters[3]);
            Tensor2D d_q(n * s, t), d_k(n * s, t), d_v(n * s, t);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = i * s;
                // dP = dZ V^T, dV = P^T dZ, then softmax backward and the
                // scaled score gradients.
                for (std::size_t a = 0; a < s; ++a) {
                    std::vector<double> dp(s, 0.0);
                    for (std::size_t b = 0; b < s; ++b) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < t; ++c)
                            acc += d_z.at(base + a, c) * cache.v.at(base + b, c);
                        dp[b] = acc;
                    }
                    double dot = 0.0;
                    for (std::size_t b = 0; b < s; ++b) dot += dp[b] * cache.p.at(base + a, b);
                    std::vector<double> ds(s, 0.0);
                    for (std::size_t b = 0; b < s; ++b)
                        ds[b] = cache.p.at(base + a, b) * (dp[b] - dot) * inv_sqrt_t;
                    for (std::size_t c = 0; c < t; ++c) {
                        double acc = 0.0;
                        for (std::size_t b = 0; b < s; ++b)
                            acc += ds[b] * cache.k.at(base + b, c);
                        d_q.at(base + a, c) = acc;
                    }
                    for (std::size_t b = 0; b < s; ++b)
                        for (std::size_t c = 0; c < t; ++c)
                            d_k.at(base + b, c) += ds[b] * cache.q.at(base + a, c);
                }
                for (std::size_t b = 0; b < s; ++b)
                    for (std::size_t c = 0; c < t; ++c) {
                        double acc = 0.0;
                        for (std::size_t a = 0; a < s; ++a)
                            acc += cache.p.at(base + a, b) * d_z.at(base + a, c);
                        d_v.at(base + b, c) = acc;
                    }
            }
            detail::record(ctx, layer.layer_index, ProjTarget::kAttnQ, cache.r_all, d_q,
                           layer.adapters[0]);
            detail::record(ctx, layer.layer_index, ProjTarget::kAttnK, cache.r_all, d_k,
                           layer.adapters[1]);
            detail::record(ctx, layer.layer_index, ProjTarget::kAttnV, cache.r_all, d_v,
                           layer.adapters[2]);
            Tensor2D d_r = detail::project_input_grad(d_q, layer.w_q, layer.adapters[0]);
            add_inplace(d_r, detail::project_input_grad(d_k, layer.w_k, layer.adapters[1]));
            add_inplace(d_r, detail::project_input_grad(d_v, layer.w_v, layer.adapters[2]));
            Tensor2D d_x = reshape(d_r, n, m.config.width);
            add_inplace(d_x, d_mlp_in);  // residual
            delta = std::move(d_x);
        }
        cache.valid = false;
    }
    return delta;
}

// W-phase: turns recorded contexts into adapter/head gradients and applies
// one optimizer step. Contexts are consumed; replaying them is an error.
inline void backward_W(ToyModel& m, BackwardContexts& ctx, OptimizerState& opt) {
    if (ctx.consumed)
        throw std::runtime_error("backward_W: contexts already applied");
    if (ctx.entries.empty() && !ctx.has_head)
        throw std::runtime_error("backward_W: no contexts recorded (W before B)");
    opt.begin_step();
    for (const WContext& entry : ctx.entries) {
        auto& slot = m.layers[entry.layer_index].adapters[static_cast<std::size_t>(entry.target)];
        if (!slot) throw std::runtime_error("backward_W: context for missing adapter");
        LoRAAdapter& adapter = *slot;
        const AdapterGrads grads = adapter_grads(adapter, entry.input, entry.upstream);
        const std::string key = adapter.target;
        opt.apply(key + ".down", adapter.down, grads.down);
        opt.apply(key + ".up", adapter.up, grads.up);
    }
    if (ctx.has_head) {
        Tensor2D grad_w = matmul_tn(ctx.head_dlogits, ctx.head_input);
        Tensor2D grad_b(1, m.head_b.cols());
        for (std::size_t r = 0; r < ctx.head_dlogits.rows(); ++r)
            for (std::size_t c = 0; c < ctx.head_dlogits.cols(); ++c)
                grad_b.at(0, c) += ctx.head_dlogits.at(r, c);
        opt.apply("head.w", m.head_w, grad_w);
        opt.apply("head.b", m.head_b, grad_b);
    }
    ctx.consumed = true;
}

// One full training step on a batch: frozen prefix (uncached), trainable
// suffix (cached), loss, B, W. Deterministic given model state and inputs.
inline double train_step(ToyModel& m, const Tensor2D& batch,
                         const std::vector<std::uint32_t>& labels, OptimizerState& opt) {
    const std::uint32_t split = std::min(m.trainable_start, m.config.depth);
    Tensor2D frozen_out = forward_prefix(static_cast<const ToyModel&>(m), batch, 0, split);
    Tensor2D h = forward_prefix(m, frozen_out, split, m.config.depth, true);
    Tensor2D logits = head_forward(m, h);
    LossGrad lg = softmax_xent(logits, labels);
    BackwardContexts ctx;
    Tensor2D dh = head_backward(m, h, lg.dlogits, ctx);
    backward_B(m, dh, split, m.config.depth, ctx);
    backward_W(m, ctx, opt);
    return lg.loss;
}

}  // namespace splitfrozen

#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check:
//   * straight-line layer forward with explicit loops (no caching machinery)
//   * a fused backward that computes gradients and applies SGD inline,
//     against which B-then-W must be bit-exact
//   * finite-difference gradients over every trainable parameter

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "splitfrozen/datapart.hpp"
#include "splitfrozen/model.hpp"

namespace sf_test {

using namespace splitfrozen;

// Independent forward for the MLP block variant: y = x + W2^T chain with the
// adapter contributions written out longhand.
inline Tensor2D straight_line_forward(const ToyModel& m, const Tensor2D& input,
                                      std::uint32_t from, std::uint32_t to) {
    const std::size_t d = m.config.width;
    Tensor2D h = input;
    for (std::uint32_t li = from; li < to; ++li) {
        const ToyLayer& layer = m.layers[li];
        Tensor2D out(h.rows(), d);
        for (std::size_t r = 0; r < h.rows(); ++r) {
            std::vector<double> pre(d, 0.0);
            for (std::size_t o = 0; o < d; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < d; ++i) acc += h.at(r, i) * layer.w_fc1.at(o, i);
                pre[o] = acc;
            }
            if (layer.adapters[4]) {
                const LoRAAdapter& a = *layer.adapters[4];
                std::vector<double> mid(a.rank, 0.0);
                for (std::uint32_t q = 0; q < a.rank; ++q) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d; ++i) acc += h.at(r, i) * a.down.at(q, i);
                    mid[q] = acc;
                }
                for (std::size_t o = 0; o < d; ++o) {
                    double acc = 0.0;
                    for (std::uint32_t q = 0; q < a.rank; ++q) acc += mid[q] * a.up.at(o, q);
                    pre[o] += a.scale() * acc;
                }
            }
            std::vector<double> post(d, 0.0);
            for (std::size_t o = 0; o < d; ++o)
                post[o] = 0.5 * pre[o] * (1.0 + std::erf(pre[o] / std::numbers::sqrt2));
            for (std::size_t o = 0; o < d; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < d; ++i) acc += post[i] * layer.w_fc2.at(o, i);
                out.at(r, o) = acc;
            }
            if (layer.adapters[5]) {
                const LoRAAdapter& a = *layer.adapters[5];
                std::vector<double> mid(a.rank, 0.0);
                for (std::uint32_t q = 0; q < a.rank; ++q) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d; ++i) acc += post[i] * a.down.at(q, i);
                    mid[q] = acc;
                }
                for (std::size_t o = 0; o < d; ++o) {
                    double acc = 0.0;
                    for (std::uint32_t q = 0; q < a.rank; ++q) acc += mid[q] * a.up.at(o, q);
                    out.at(r, o) += a.scale() * acc;
                }
            }
            for (std::size_t o = 0; o < d; ++o) out.at(r, o) += h.at(r, o);
        }
        h = std::move(out);
    }
    return h;
}

// Loss of the full model on a batch, forward only. Used as the functional for
// finite differences.
inline double eval_loss(const ToyModel& m, const Tensor2D& batch,
                        const std::vector<std::uint32_t>& labels) {
    Tensor2D h = forward_prefix(m, batch, 0, m.config.depth);
    Tensor2D logits = head_forward(m, h);
    return softmax_xent(logits, labels).loss;
}

// Analytic gradients for every trainable tensor, via the library's B-phase
// plus the same adapter-gradient algebra the W-phase uses (without updating).
struct NamedGrads {
    std::map<std::string, Tensor2D> grads;
};

inline NamedGrads collect_grads(ToyModel& m, const Tensor2D& batch,
                                const std::vector<std::uint32_t>& labels) {
    const std::uint32_t split = std::min(m.trainable_start, m.config.depth);
    Tensor2D frozen_out = forward_prefix(static_cast<const ToyModel&>(m), batch, 0, split);
    Tensor2D h = forward_prefix(m, frozen_out, split, m.config.depth, true);
    Tensor2D logits = head_forward(m, h);
    LossGrad lg = softmax_xent(logits, labels);
    BackwardContexts ctx;
    Tensor2D dh = head_backward(m, h, lg.dlogits, ctx);
    backward_B(m, dh, split, m.config.depth, ctx);

    NamedGrads out;
    for (const WContext& entry : ctx.entries) {
        const LoRAAdapter& a =
            *m.layers[entry.layer_index].adapters[static_cast<std::size_t>(entry.target)];
        AdapterGrads g = adapter_grads(a, entry.input, entry.upstream);
        out.grads[a.target + ".down"] = std::move(g.down);
        out.grads[a.target + ".up"] = std::move(g.up);
    }
    Tensor2D grad_w = matmul_tn(ctx.head_dlogits, ctx.head_input);
    Tensor2D grad_b(1, m.head_b.cols());
    for (std::size_t r = 0; r < ctx.head_dlogits.rows(); ++r)
        for (std::size_t c = 0; c < ctx.head_dlogits.cols(); ++c)
            grad_b.at(0, c) += ctx.head_dlogits.at(r, c);
    out.grads["head.w"] = std::move(grad_w);
    out.grads["head.b"] = std::move(grad_b);
    return out;
}

// Enumerates mutable references to every trainable parameter tensor.
inline std::vector<std::pair<std::string, Tensor2D*>> trainable_tensors(ToyModel& m) {
    std::vector<std::pair<std::string, Tensor2D*>> out;
    for (ToyLayer& layer : m.layers)
        for (auto& slot : layer.adapters)
            if (slot) {
                out.emplace_back(slot->target + ".down", &slot->down);
                out.emplace_back(slot->target + ".up", &slot->up);
            }
    out.emplace_back("head.w", &m.head_w);
    out.emplace_back("head.b", &m.head_b);
    return out;
}

// Central finite differences over every parameter of every trainable tensor.
// Returns the worst relative error against the analytic gradients.
inline double max_fd_relative_error(ToyModel& m, const Tensor2D& batch,
                                    const std::vector<std::uint32_t>& labels,
                                    double epsilon = 1e-5) {
    NamedGrads analytic = collect_grads(m, batch, labels);
    double worst = 0.0;
    for (auto& [name, tensor] : trainable_tensors(m)) {
        const Tensor2D& grad = analytic.grads.at(name);
        for (std::size_t i = 0; i < tensor->size(); ++i) {
            const double saved = tensor->data()[i];
            tensor->data()[i] = saved + epsilon;
            const double up = eval_loss(m, batch, labels);
            tensor->data()[i] = saved - epsilon;
            const double down = eval_loss(m, batch, labels);
            tensor->data()[i] = saved;
            const double fd = (up - down) / (2.0 * epsilon);
            const double an = grad.data()[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

// Monolithic fused backward: computes input gradients, adapter gradients and
// SGD updates in a single pass, written against the math rather than the
// library's B/W split. Returns the loss.
inline double fused_sgd_step(ToyModel& m, const Tensor2D& batch,
                             const std::vector<std::uint32_t>& labels, double lr) {
    const std::uint32_t split = std::min(m.trainable_start, m.config.depth);
    const std::uint32_t depth = m.config.depth;

    // Forward, retaining exactly what backward needs.
    Tensor2D frozen_out = forward_prefix(static_cast<const ToyModel&>(m), batch, 0, split);
    std::vector<LayerCache> caches(depth);
    Tensor2D h = frozen_out;
    for (std::uint32_t i = split; i < depth; ++i)
        h = splitfrozen::detail::layer_forward(m.layers[i], m.config, h, &caches[i]);
    Tensor2D logits = head_forward(m, h);
    LossGrad lg = softmax_xent(logits, labels);

    auto sgd = [lr](Tensor2D& param, const Tensor2D& grad) {
        for (std::size_t i = 0; i < param.size(); ++i)
            param.data()[i] -= lr * grad.data()[i];
    };

    // Head: gradient then immediate update; input gradient uses the
    // pre-update weights, as any single-pass backward would.
    Tensor2D delta = matmul(lg.dlogits, m.head_w);
    {
        Tensor2D grad_w = matmul_tn(lg.dlogits, h);
        Tensor2D grad_b(1, m.head_b.cols());
        for (std::size_t r = 0; r < lg.dlogits.rows(); ++r)
            for (std::size_t c = 0; c < lg.dlogits.cols(); ++c)
                grad_b.at(0, c) += lg.dlogits.at(r, c);
        sgd(m.head_w, grad_w);
        sgd(m.head_b, grad_b);
    }

    for (std::uint32_t idx = depth; idx > split; --idx) {
        ToyLayer& layer = m.layers[idx - 1];
        LayerCache& cache = caches[idx - 1];
        const Tensor2D d_out = delta;
        Tensor2D d_post = splitfrozen::detail::project_input_grad(d_out, layer.w_fc2,
                                                                  layer.adapters[5]);
        if (layer.adapters[5]) {
            AdapterGrads g = adapter_grads(*layer.adapters[5], cache.post_gelu, d_out);
            sgd(layer.adapters[5]->down, g.down);
            sgd(layer.adapters[5]->up, g.up);
        }
        Tensor2D d_pre(d_post.rows(), d_post.cols());
        for (std::size_t i = 0; i < d_post.size(); ++i)
            d_pre.data()[i] = d_post.data()[i] * gelu_derivative(cache.pre_gelu.data()[i]);
        Tensor2D d_mlp_in = splitfrozen::detail::project_input_grad(d_pre, layer.w_fc1,
                                                                    layer.adapters[4]);
        if (layer.adapters[4]) {
            AdapterGrads g = adapter_grads(*layer.adapters[4], cache.mlp_in, d_pre);
            sgd(layer.adapters[4]->down, g.down);
            sgd(layer.adapters[4]->up, g.up);
        }
        add_inplace(d_mlp_in, d_out);
        if (!m.config.attention) {
            delta = std::move(d_mlp_in);
            continue;
        }
        const std::size_t s = m.config.attn_tokens;
        const std::size_t t = m.config.width / s;
        const std::size_t n = d_mlp_in.rows();
        const double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(t));
        Tensor2D d_o = reshape(d_mlp_in, n * s, t);
        Tensor2D d_z = splitfrozen::detail::project_input_grad(d_o, layer.w_o, layer.adapters[3]);
        if (layer.adapters[3]) {
            AdapterGrads g = adapter_grads(*layer.adapters[3], cache.z, d_o);
            sgd(layer.adapters[3]->down, g.down);
            sgd(layer.adapters[3]->up, g.up);
        }
        Tensor2D d_q(n * s, t), d_k(n * s, t), d_v(n * s, t);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = i * s;
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
                    for (std::size_t b = 0; b < s; ++b) acc += ds[b] * cache.k.at(base + b, c);
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
        Tensor2D d_r = splitfrozen::detail::project_input_grad(d_q, layer.w_q, layer.adapters[0]);
        add_inplace(d_r, splitfrozen::detail::project_input_grad(d_k, layer.w_k, layer.adapters[1]));
        add_inplace(d_r, splitfrozen::detail::project_input_grad(d_v, layer.w_v, layer.adapters[2]));
        if (layer.adapters[0]) {
            AdapterGrads g = adapter_grads(*layer.adapters[0], cache.r_all, d_q);
            sgd(layer.adapters[0]->down, g.down);
            sgd(layer.adapters[0]->up, g.up);
        }
        if (layer.adapters[1]) {
            AdapterGrads g = adapter_grads(*layer.adapters[1], cache.r_all, d_k);
            sgd(layer.adapters[1]->down, g.down);
            sgd(layer.adapters[1]->up, g.up);
        }
        if (layer.adapters[2]) {
            AdapterGrads g = adapter_grads(*layer.adapters[2], cache.r_all, d_v);
            sgd(layer.adapters[2]->down, g.down);
            sgd(layer.adapters[2]->up, g.up);
        }
        Tensor2D d_x = reshape(d_r, n, m.config.width);
        add_inplace(d_x, d_mlp_in);
        delta = std::move(d_x);
    }
    return lg.loss;
}

// Randomizes adapter factors and head weights so gradient checks run at a
// non-degenerate point (fresh adapters have up = 0 and zero down-gradients).
inline void randomize_trainables(ToyModel& m, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, tensor] : trainable_tensors(m))
        for (std::size_t i = 0; i < tensor->size(); ++i)
            tensor->data()[i] = 0.3 * rng.next_gaussian();
}

// Snapshot of the frozen base weights for bit-identity checks.
inline std::vector<Tensor2D> snapshot_base_weights(const ToyModel& m) {
    std::vector<Tensor2D> out;
    for (const ToyLayer& layer : m.layers) {
        out.push_back(layer.w_fc1);
        out.push_back(layer.w_fc2);
        if (m.config.attention) {
            out.push_back(layer.w_q);
            out.push_back(layer.w_k);
            out.push_back(layer.w_v);
            out.push_back(layer.w_o);
        }
    }
    return out;
}

inline bool base_weights_bit_equal(const ToyModel& m, const std::vector<Tensor2D>& snapshot) {
    std::size_t i = 0;
    for (const ToyLayer& layer : m.layers) {
        if (!layer.w_fc1.bit_equal(snapshot[i++])) return false;
        if (!layer.w_fc2.bit_equal(snapshot[i++])) return false;
        if (m.config.attention) {
            if (!layer.w_q.bit_equal(snapshot[i++])) return false;
            if (!layer.w_k.bit_equal(snapshot[i++])) return false;
            if (!layer.w_v.bit_equal(snapshot[i++])) return false;
            if (!layer.w_o.bit_equal(snapshot[i++])) return false;
        }
    }
    return true;
}

// Seeded gaussian class blobs; linearly separable when the spread is large.
struct ToyDataset {
    Tensor2D x;
    std::vector<std::uint32_t> labels;
    std::vector<std::uint64_t> ids;
};

inline ToyDataset make_blobs(std::size_t samples, std::size_t width, std::uint32_t classes,
                             std::uint64_t seed, double center_spread = 2.0) {
    Rng rng(seed);
    Tensor2D centers(classes, width);
    for (std::size_t i = 0; i < centers.size(); ++i)
        centers.data()[i] = center_spread * rng.next_gaussian();
    ToyDataset ds;
    ds.x = Tensor2D(samples, width);
    ds.labels.resize(samples);
    ds.ids.resize(samples);
    for (std::size_t r = 0; r < samples; ++r) {
        const auto cls = static_cast<std::uint32_t>(rng.next_below(classes));
        ds.labels[r] = cls;
        ds.ids[r] = r;
        for (std::size_t c = 0; c < width; ++c)
            ds.x.at(r, c) = centers.at(cls, c) + 0.3 * rng.next_gaussian();
    }
    return ds;
}

// Plain frozen-prefix adapter training loop, no protocol machinery: the
// whole dataset lives in one place, each round is canonically shuffled and
// trained in pooled mini-batches. Distributed runs must reproduce this
// trajectory exactly, whatever the partition.
struct CentralizedRun {
    std::vector<std::vector<double>> round_losses;  // per round, per mini-batch
    ToyModel model;
};

inline CentralizedRun centralized_frozen_prefix_run(
    const ToyModel& pristine, const ToyDataset& data, std::uint32_t shared_start,
    std::uint32_t lora_rank, std::uint64_t adapter_seed, const TrainConfig& train,
    std::uint32_t pooled_batch, std::uint32_t rounds, std::uint64_t shuffle_seed_base) {
    CentralizedRun run;
    run.model = pristine;
    attach_adapters(run.model, shared_start, lora_rank, adapter_seed);
    OptimizerState opt(train);
    const std::size_t width = run.model.config.width;

    std::map<std::uint64_t, std::size_t> row_by_id;
    for (std::size_t i = 0; i < data.ids.size(); ++i) row_by_id[data.ids[i]] = i;

    for (std::uint32_t round = 0; round < rounds; ++round) {
        const auto order =
            pooled_shuffle_ids(data.ids, derive_seed(shuffle_seed_base, round));
        std::vector<double> losses;
        for (std::size_t start = 0; start < order.size(); start += pooled_batch) {
            const std::size_t count = std::min<std::size_t>(pooled_batch, order.size() - start);
            Tensor2D raw(count, width);
            std::vector<std::uint32_t> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = row_by_id.at(order[start + i]);
                raw.set_row(i, data.x, src);
                labels[i] = data.labels[src];
            }
            Tensor2D at_shared =
                forward_prefix(std::as_const(run.model), raw, 0, shared_start);
            Tensor2D h = forward_prefix(run.model, at_shared, shared_start,
                                        run.model.config.depth, true);
            Tensor2D logits = head_forward(run.model, h);
            LossGrad lg = softmax_xent(logits, labels);
            BackwardContexts ctx;
            Tensor2D dh = head_backward(run.model, h, lg.dlogits, ctx);
            backward_B(run.model, dh, shared_start, run.model.config.depth, ctx);
            backward_W(run.model, ctx, opt);
            losses.push_back(lg.loss);
        }
        run.round_losses.push_back(std::move(losses));
    }
    return run;
}

// Collects every adapter tensor plus the head, for elementwise comparisons.
inline std::vector<const Tensor2D*> trainable_tensor_views(const ToyModel& m) {
    std::vector<const Tensor2D*> out;
    for (const ToyLayer& layer : m.layers)
        for (const auto& slot : layer.adapters)
            if (slot) {
                out.push_back(&slot->down);
                out.push_back(&slot->up);
            }
    out.push_back(&m.head_w);
    out.push_back(&m.head_b);
    return out;
}

inline double max_trainable_diff(const ToyModel& a, const ToyModel& b) {
    const auto va = trainable_tensor_views(a);
    const auto vb = trainable_tensor_views(b);
    if (va.size() != vb.size()) return 1e300;
    double worst = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i)
        worst = std::max(worst, max_abs_diff(*va[i], *vb[i]));
    return worst;
}

}  // namespace sf_test

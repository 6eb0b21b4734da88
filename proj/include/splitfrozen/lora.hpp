#pragma once

// Low-rank adapter algebra. An adapted projection computes
//   y = x W^T + (alpha/R) (x A^T) B^T
// with A (down, R x d_in) Gaussian-initialized and B (up, d_out x R) zero,
// so a fresh adapter contributes exactly nothing to the forward pass.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/tensor.hpp"

namespace splitfrozen {

struct LoRAAdapter {
    Tensor2D down;  // A: rank x d_in
    Tensor2D up;    // B: d_out x rank
    std::uint32_t rank = 0;
    double scale_alpha = 0.0;
    std::string target;

    double scale() const { return scale_alpha / static_cast<double>(rank); }
    std::size_t parameter_count() const { return down.size() + up.size(); }
};

enum class Optimizer { kSgd, kAdamW };

struct TrainConfig {
    double learning_rate = 5e-5;
    Optimizer optimizer = Optimizer::kAdamW;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0.0)
            throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    }
};

// down ~ N(0, 1/rank), up = 0. alpha defaults to rank (scale factor 1) so
// rank sweeps stay comparable.
inline LoRAAdapter adapter_init(std::uint32_t rank, std::size_t d_in, std::size_t d_out,
                                std::uint64_t seed, const std::string& target = "",
                                double scale_alpha = -1.0) {
    if (rank < 1) throw std::invalid_argument("adapter_init: rank must be >= 1");
    LoRAAdapter a;
    a.rank = rank;
    a.scale_alpha = scale_alpha < 0.0 ? static_cast<double>(rank) : scale_alpha;
    a.target = target;
    Rng rng(seed);
    a.down = gaussian_tensor(rank, d_in, 1.0 / static_cast<double>(rank), rng);
    a.up = Tensor2D(d_out, rank);
    return a;
}

// (alpha/R) (x A^T) B^T
inline Tensor2D adapter_forward(const LoRAAdapter& a, const Tensor2D& x) {
    Tensor2D mid = matmul_nt(x, a.down);
    Tensor2D out = matmul_nt(mid, a.up);
    scale_inplace(out, a.scale());
    return out;
}

// Gradient of the adapter output w.r.t. the layer input, for the B-phase:
// d_x = (alpha/R) (upstream B) A.
inline Tensor2D adapter_input_grad(const LoRAAdapter& a, const Tensor2D& upstream) {
    Tensor2D mid = matmul(upstream, a.up);
    Tensor2D out = matmul(mid, a.down);
    scale_inplace(out, a.scale());
    return out;
}

struct AdapterGrads {
    Tensor2D down;  // same shape as adapter.down
    Tensor2D up;    // same shape as adapter.up
};

// Chain rule through both factors:
//   dB = (alpha/R) upstream^T (x A^T)
//   dA = (alpha/R) (upstream B)^T x
inline AdapterGrads adapter_grads(const LoRAAdapter& a, const Tensor2D& x,
                                  const Tensor2D& upstream) {
    AdapterGrads g;
    Tensor2D mid = matmul_nt(x, a.down);          // n x R
    g.up = matmul_tn(upstream, mid);              // d_out x R
    scale_inplace(g.up, a.scale());
    Tensor2D through_up = matmul(upstream, a.up); // n x R
    g.down = matmul_tn(through_up, x);            // R x d_in
    scale_inplace(g.down, a.scale());
    return g;
}

// base + (alpha/R) up . down. Not idempotent: merging twice double-counts the
// adapter, callers must merge into a pristine base.
inline Tensor2D merge(const LoRAAdapter& a, const Tensor2D& base) {
    detail::require(a.up.rows() == base.rows() && a.down.cols() == base.cols(),
                    "merge: adapter shapes do not match base " +
                    std::to_string(base.rows()) + "x" + std::to_string(base.cols()));
    Tensor2D delta = matmul(a.up, a.down);
    scale_inplace(delta, a.scale());
    return add(base, delta);
}

// Per-tensor optimizer slot. AdamW keeps both moment buffers; SGD ignores
// them (and is the mode used by the fused-vs-decomposed bit-exactness tests).
struct OptimizerSlot {
    Tensor2D m;
    Tensor2D v;
    bool initialized = false;
};

class OptimizerState {
public:
    explicit OptimizerState(TrainConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const TrainConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return step_; }

    void begin_step() { ++step_; }

    void apply(const std::string& key, Tensor2D& param, const Tensor2D& grad) {
        if (cfg_.optimizer == Optimizer::kSgd) {
            for (std::size_t i = 0; i < param.size(); ++i)
                param.data()[i] -= cfg_.learning_rate * grad.data()[i];
            return;
        }
        OptimizerSlot& slot = slots_[key];
        if (!slot.initialized) {
            slot.m = Tensor2D(param.rows(), param.cols());
            slot.v = Tensor2D(param.rows(), param.cols());
            slot.initialized = true;
        }
        const double b1 = cfg_.adam_beta1;
        const double b2 = cfg_.adam_beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad.data()[i];
            slot.m.data()[i] = b1 * slot.m.data()[i] + (1.0 - b1) * g;
            slot.v.data()[i] = b2 * slot.v.data()[i] + (1.0 - b2) * g * g;
            const double m_hat = slot.m.data()[i] / bias1;
            const double v_hat = slot.v.data()[i] / bias2;
            param.data()[i] -= cfg_.learning_rate *
                (m_hat / (std::sqrt(v_hat) + cfg_.adam_eps) + cfg_.weight_decay * param.data()[i]);
        }
    }

private:
    TrainConfig cfg_;
    std::uint64_t step_ = 0;
    std::map<std::string, OptimizerSlot> slots_;
};

}  // namespace splitfrozen

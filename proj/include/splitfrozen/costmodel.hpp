#pragma once

// Analytic cost model for transformer fine-tuning stages: FLOPs per layer for
// forward / decomposed backward / adapter math, activation bytes on the wire,
// and the time a stage takes on a given capacity.
//
// Conventions (stated in every emitted report):
//   * one multiply-add counts as 2 FLOPs
//   * LayerNorm, softmax, residual and embedding terms are excluded
//     (sub-percent against the matmul terms)
//   * low-rank adapters sit on the four attention projections (Q, K, V, O)
//
// Per layer, per sample of s tokens at width d:
//   projections   4 QKVO + 2 FFN (d->4d->d)  ->  s * 24 d^2
//   attention     scores QK^T + weighted sum ->  s * 4 d s
//   adapters      2R(d_in+d_out) per adapted projection, 4 projections

#include <cstdint>
#include <stdexcept>
#include <string>

namespace splitfrozen {

constexpr int kAdaptedProjectionsPerLayer = 4;  // Q, K, V, O

struct ModelProfile {
    std::string name;
    std::uint32_t num_layers = 0;
    std::uint32_t hidden_dim = 0;
    std::uint32_t num_heads = 0;
    std::uint32_t ffn_dim = 0;
    std::uint32_t vocab_size = 0;
    std::uint32_t bytes_per_activation_element = 4;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("ModelProfile: num_layers < 1");
        if (hidden_dim == 0 || num_heads == 0 || ffn_dim == 0 || vocab_size == 0 ||
            bytes_per_activation_element == 0)
            throw std::invalid_argument("ModelProfile: zero-valued field");
        if (hidden_dim % num_heads != 0)
            throw std::invalid_argument("ModelProfile: hidden_dim " + std::to_string(hidden_dim) +
                                        " not divisible by num_heads " + std::to_string(num_heads));
    }
};

struct DeviceProfile {
    std::uint32_t device_id = 0;
    double peak_flops = 0.0;
    std::uint32_t assigned_layers = 0;
};

struct ChannelProfile {
    double rate_bps = 0.0;
    double per_message_overhead_s = 0.0;

    void validate() const {
        if (rate_bps <= 0.0) throw std::invalid_argument("ChannelProfile: rate must be positive");
        if (per_message_overhead_s < 0.0)
            throw std::invalid_argument("ChannelProfile: negative overhead");
    }
};

struct ServerProfile {
    double peak_flops = 0.0;
    std::uint32_t max_shared_layer_start = 0;
};

struct WorkloadSpec {
    std::uint32_t batch_size = 72;
    std::uint32_t seq_len = 128;
    std::uint32_t lora_rank = 4;
    std::uint32_t rounds = 1;
};

struct BackwardFlops {
    double grad_compute = 0.0;      // B: input-gradient pass
    double weight_update_frozen = 0.0;  // always 0, base weights never get gradients
    double weight_update_lora = 0.0;    // W: gradients through both low-rank factors
};

// Dense projections + attention score/value matmuls for one transformer
// layer. Linear in batch size; quadratic attention term in seq_len.
inline double forward_flops_per_layer(const ModelProfile& m, const WorkloadSpec& w) {
    const double d = m.hidden_dim;
    const double s = w.seq_len;
    return static_cast<double>(w.batch_size) * s * (24.0 * d * d + 4.0 * d * s);
}

// Extra forward FLOPs contributed by the adapters on one layer.
inline double lora_flops_per_layer(const ModelProfile& m, const WorkloadSpec& w) {
    const double d = m.hidden_dim;
    const double per_projection = 2.0 * w.lora_rank * (d + d);
    return static_cast<double>(w.batch_size) * w.seq_len *
           kAdaptedProjectionsPerLayer * per_projection;
}

inline BackwardFlops backward_flops_per_layer(const ModelProfile& m, const WorkloadSpec& w) {
    BackwardFlops out;
    out.grad_compute = forward_flops_per_layer(m, w);
    out.weight_update_frozen = 0.0;
    out.weight_update_lora = 2.0 * lora_flops_per_layer(m, w);
    return out;
}

// Cut-depth independent: every transformer layer emits the same width.
inline double activation_bytes(const ModelProfile& m, const WorkloadSpec& w) {
    return static_cast<double>(w.batch_size) * w.seq_len * m.hidden_dim *
           m.bytes_per_activation_element;
}

inline double stage_time(double flops, double capacity_flops_per_s) {
    if (capacity_flops_per_s <= 0.0)
        throw std::invalid_argument("stage_time: capacity must be positive");
    return flops / capacity_flops_per_s;
}

inline double xmit_time(double bytes, const ChannelProfile& ch) {
    ch.validate();
    return bytes * 8.0 / ch.rate_bps + ch.per_message_overhead_s;
}

inline ModelProfile gpt2_small_profile() {
    ModelProfile m;
    m.name = "gpt2-small";
    m.num_layers = 12;
    m.hidden_dim = 768;
    m.num_heads = 12;
    m.ffn_dim = 3072;
    m.vocab_size = 50257;
    m.bytes_per_activation_element = 4;
    return m;
}

}  // namespace splitfrozen

#pragma once

// Model checkpoint format (documented in docs/formats.md):
//
//   magic   8 bytes  "SPLITFZC"
//   u32     version (currently 1)
//   u32     flags (bit 0: attention variant)
//   u32     depth, width, classes, attn_tokens, trainable_start
//   u64     construction seed
//   "BASE"  per layer, ascending: [q k v o] fc1 fc2 tensors
//   "ADPT"  u32 count, then (u32 layer, u32 target, u32 rank, f64 alpha,
//           down tensor, up tensor) per adapter
//   "HEAD"  head weights, head bias
//   "END."  terminator
//
// Tensors are u32 rows, u32 cols, then rows*cols raw little-endian IEEE-754
// doubles. All integers little-endian. Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/model.hpp"

namespace splitfrozen {

namespace ckpt_detail {

constexpr char kMagic[9] = "SPLITFZC";
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

inline void put_tensor(std::vector<std::uint8_t>& out, const Tensor2D& t) {
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    void expect_tag(const char* tag) {
        need(4);
        if (std::memcmp(data_ + pos_, tag, 4) != 0)
            throw std::runtime_error(std::string("checkpoint: expected section '") + tag + "'");
        pos_ += 4;
    }

    Tensor2D tensor() {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        Tensor2D t(rows, cols);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = f64();
        return t;
    }

    void expect_magic() {
        need(8);
        if (std::memcmp(data_, kMagic, 8) != 0)
            throw std::runtime_error("checkpoint: bad magic");
        pos_ += 8;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw std::runtime_error("checkpoint: truncated file");
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ToyModel& m) {
    using namespace ckpt_detail;
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u32(out, m.config.attention ? 1u : 0u);
    put_u32(out, m.config.depth);
    put_u32(out, m.config.width);
    put_u32(out, m.config.num_classes);
    put_u32(out, m.config.attn_tokens);
    put_u32(out, m.trainable_start);
    put_u64(out, m.config.seed);

    put_tag(out, "BASE");
    for (const ToyLayer& layer : m.layers) {
        if (m.config.attention) {
            put_tensor(out, layer.w_q);
            put_tensor(out, layer.w_k);
            put_tensor(out, layer.w_v);
            put_tensor(out, layer.w_o);
        }
        put_tensor(out, layer.w_fc1);
        put_tensor(out, layer.w_fc2);
    }

    put_tag(out, "ADPT");
    std::uint32_t count = 0;
    for (const ToyLayer& layer : m.layers)
        for (const auto& slot : layer.adapters)
            if (slot) ++count;
    put_u32(out, count);
    for (const ToyLayer& layer : m.layers)
        for (std::size_t t = 0; t < kNumProjTargets; ++t)
            if (layer.adapters[t]) {
                const LoRAAdapter& a = *layer.adapters[t];
                put_u32(out, layer.layer_index);
                put_u32(out, static_cast<std::uint32_t>(t));
                put_u32(out, a.rank);
                put_f64(out, a.scale_alpha);
                put_tensor(out, a.down);
                put_tensor(out, a.up);
            }

    put_tag(out, "HEAD");
    put_tensor(out, m.head_w);
    put_tensor(out, m.head_b);
    put_tag(out, "END.");
    return out;
}

inline ToyModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using namespace ckpt_detail;
    Reader r(bytes.data(), bytes.size());
    r.expect_magic();
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t flags = r.u32();
    ToyConfig cfg;
    cfg.attention = (flags & 1u) != 0;
    cfg.depth = r.u32();
    cfg.width = r.u32();
    cfg.num_classes = r.u32();
    cfg.attn_tokens = r.u32();
    const std::uint32_t trainable_start = r.u32();
    cfg.seed = r.u64();

    ToyModel m;
    m.config = cfg;
    m.trainable_start = trainable_start;
    r.expect_tag("BASE");
    for (std::uint32_t i = 0; i < cfg.depth; ++i) {
        ToyLayer layer;
        layer.layer_index = i;
        if (cfg.attention) {
            layer.w_q = r.tensor();
            layer.w_k = r.tensor();
            layer.w_v = r.tensor();
            layer.w_o = r.tensor();
        }
        layer.w_fc1 = r.tensor();
        layer.w_fc2 = r.tensor();
        m.layers.push_back(std::move(layer));
    }
    r.expect_tag("ADPT");
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t layer = r.u32();
        const std::uint32_t target = r.u32();
        if (layer >= m.layers.size() || target >= kNumProjTargets)
            throw std::runtime_error("checkpoint: adapter section out of range");
        LoRAAdapter a;
        a.rank = r.u32();
        a.scale_alpha = r.f64();
        a.down = r.tensor();
        a.up = r.tensor();
        a.target = "layer" + std::to_string(layer) + "." +
                   proj_target_name(static_cast<ProjTarget>(target));
        m.layers[layer].adapters[target] = std::move(a);
    }
    r.expect_tag("HEAD");
    m.head_w = r.tensor();
    m.head_b = r.tensor();
    r.expect_tag("END.");
    return m;
}

inline void save_checkpoint(const ToyModel& m, const std::string& path) {
    const auto bytes = serialize_checkpoint(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

inline ToyModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace splitfrozen

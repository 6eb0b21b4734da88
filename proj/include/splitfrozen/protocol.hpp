#pragma once

// Device/server state machines for the split training workflow, plus the
// framed wire format they speak (documented in docs/formats.md).
//
// Frame layout, 16-byte header followed by the body:
//   magic    8 bytes "SPLITFRZ"
//   version  u16 big-endian (currently 1)
//   type     u16 big-endian
//   body_len u32 big-endian
// Integer body fields are big-endian; activation payloads are raw IEEE-754
// floats little-endian, 32- or 64-bit per the frame's dtype tag. The f64
// dtype is lossless and is what toy training runs use; f32 halves the wire
// size and matches the cost model's 4-byte accounting.
//
// Workflow per device: register once (layer-count metadata), then stream
// activation batches. The server normalizes every arriving batch to the
// deepest registered cut via an additional forward, pools a round's batches,
// and trains the shared layers on the canonically shuffled pool. Devices
// never receive gradients.

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/datapart.hpp"
#include "splitfrozen/model.hpp"

namespace splitfrozen {

constexpr char kWireMagic[9] = "SPLITFRZ";
constexpr std::uint16_t kWireVersion = 1;
constexpr std::size_t kFrameHeaderSize = 16;

enum class MsgType : std::uint16_t {
    kRegister = 1,
    kRegisterAck = 2,
    kActivation = 3,
    kRoundStep = 4,
    kLossReport = 5,
    kShutdown = 6,
};

enum class WireDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

struct RegisterMsg {
    std::uint32_t device_id = 0;
    std::uint32_t assigned_layers = 0;
};

struct RegisterAckMsg {
    std::uint32_t device_id = 0;
    std::uint32_t shared_layer_start = 0;
};

struct ActivationBatch {
    std::uint32_t device_id = 0;
    std::uint32_t round = 0;
    std::uint32_t batch_id = 0;
    std::uint32_t produced_at_layer = 0;
    std::uint32_t batch = 0;  // shape: batch x seq x width
    std::uint32_t seq = 1;
    std::uint32_t width = 0;
    WireDtype dtype = WireDtype::kF64;
    Tensor2D payload;  // batch rows, seq*width columns
    std::vector<std::uint32_t> labels;      // one per batch row
    std::vector<std::uint64_t> sample_ids;  // one per batch row, globally unique
};

struct RoundStepMsg {
    std::uint64_t shuffle_seed = 0;
};

struct LossReportMsg {
    std::uint32_t round = 0;
    double mean_loss = 0.0;
    std::vector<double> batch_losses;
};

class WireError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline void put_f32le(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += 8;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    double f64le() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = (bits << 8) | data_[pos_ + i];
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    float f32le() {
        need(4);
        std::uint32_t bits = 0;
        for (int i = 3; i >= 0; --i) bits = (bits << 8) | data_[pos_ + i];
        pos_ += 4;
        return std::bit_cast<float>(bits);
    }

    std::size_t remaining() const { return size_ - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_)
            throw WireError("frame truncated: need " + std::to_string(n) + " bytes, have " +
                            std::to_string(size_ - pos_));
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> frame(MsgType type, const std::vector<std::uint8_t>& body) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + body.size());
    out.insert(out.end(), kWireMagic, kWireMagic + 8);
    put_u16(out, kWireVersion);
    put_u16(out, static_cast<std::uint16_t>(type));
    put_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

struct FrameView {
    MsgType type;
    const std::uint8_t* body;
    std::size_t body_len;
    std::size_t frame_len;
};

// Parses one frame from the head of the buffer. Returns nothing if the
// buffer does not yet hold a complete frame; malformed headers throw.
inline std::optional<FrameView> parse_frame(const std::uint8_t* data, std::size_t size) {
    if (size < kFrameHeaderSize) return std::nullopt;
    if (std::memcmp(data, kWireMagic, 8) != 0) throw WireError("bad frame magic");
    Reader header(data + 8, 8);
    const std::uint16_t version = header.u16();
    if (version != kWireVersion)
        throw WireError("unsupported wire version " + std::to_string(version));
    const std::uint16_t type = header.u16();
    const std::uint32_t body_len = header.u32();
    if (size < kFrameHeaderSize + body_len) return std::nullopt;
    return FrameView{static_cast<MsgType>(type), data + kFrameHeaderSize, body_len,
                     kFrameHeaderSize + body_len};
}

}  // namespace wire

inline std::vector<std::uint8_t> encode(const RegisterMsg& msg) {
    std::vector<std::uint8_t> body;
    wire::put_u32(body, msg.device_id);
    wire::put_u32(body, msg.assigned_layers);
    return wire::frame(MsgType::kRegister, body);
}

inline std::vector<std::uint8_t> encode(const RegisterAckMsg& msg) {
    std::vector<std::uint8_t> body;
    wire::put_u32(body, msg.device_id);
    wire::put_u32(body, msg.shared_layer_start);
    return wire::frame(MsgType::kRegisterAck, body);
}

inline std::vector<std::uint8_t> encode(const ActivationBatch& msg) {
    if (msg.payload.rows() != msg.batch ||
        msg.payload.cols() != static_cast<std::size_t>(msg.seq) * msg.width)
        throw WireError("activation payload shape does not match batch/seq/width");
    if (msg.labels.size() != msg.batch || msg.sample_ids.size() != msg.batch)
        throw WireError("activation labels/sample_ids must have one entry per batch row");
    std::vector<std::uint8_t> body;
    wire::put_u32(body, msg.device_id);
    wire::put_u32(body, msg.round);
    wire::put_u32(body, msg.batch_id);
    wire::put_u32(body, msg.produced_at_layer);
    wire::put_u32(body, msg.batch);
    wire::put_u32(body, msg.seq);
    wire::put_u32(body, msg.width);
    body.push_back(static_cast<std::uint8_t>(msg.dtype));
    for (std::size_t i = 0; i < msg.payload.size(); ++i) {
        if (msg.dtype == WireDtype::kF64)
            wire::put_f64le(body, msg.payload.data()[i]);
        else
            wire::put_f32le(body, static_cast<float>(msg.payload.data()[i]));
    }
    for (std::uint32_t label : msg.labels) wire::put_u32(body, label);
    for (std::uint64_t id : msg.sample_ids) wire::put_u64(body, id);
    return wire::frame(MsgType::kActivation, body);
}

inline std::vector<std::uint8_t> encode(const RoundStepMsg& msg) {
    std::vector<std::uint8_t> body;
    wire::put_u64(body, msg.shuffle_seed);
    return wire::frame(MsgType::kRoundStep, body);
}

inline std::vector<std::uint8_t> encode(const LossReportMsg& msg) {
    std::vector<std::uint8_t> body;
    wire::put_u32(body, msg.round);
    wire::put_f64le(body, msg.mean_loss);
    wire::put_u32(body, static_cast<std::uint32_t>(msg.batch_losses.size()));
    for (double loss : msg.batch_losses) wire::put_f64le(body, loss);
    return wire::frame(MsgType::kLossReport, body);
}

inline std::vector<std::uint8_t> encode_shutdown() {
    return wire::frame(MsgType::kShutdown, {});
}

inline RegisterMsg decode_register(const std::uint8_t* body, std::size_t len) {
    wire::Reader r(body, len);
    RegisterMsg msg;
    msg.device_id = r.u32();
    msg.assigned_layers = r.u32();
    return msg;
}

inline RegisterAckMsg decode_register_ack(const std::uint8_t* body, std::size_t len) {
    wire::Reader r(body, len);
    RegisterAckMsg msg;
    msg.device_id = r.u32();
    msg.shared_layer_start = r.u32();
    return msg;
}

inline ActivationBatch decode_activation(const std::uint8_t* body, std::size_t len) {
    wire::Reader r(body, len);
    ActivationBatch msg;
    msg.device_id = r.u32();
    msg.round = r.u32();
    msg.batch_id = r.u32();
    msg.produced_at_layer = r.u32();
    msg.batch = r.u32();
    msg.seq = r.u32();
    msg.width = r.u32();
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw WireError("unknown activation dtype " + std::to_string(dtype));
    msg.dtype = static_cast<WireDtype>(dtype);
    const std::size_t elements = static_cast<std::size_t>(msg.batch) * msg.seq * msg.width;
    msg.payload = Tensor2D(msg.batch, static_cast<std::size_t>(msg.seq) * msg.width);
    for (std::size_t i = 0; i < elements; ++i)
        msg.payload.data()[i] =
            msg.dtype == WireDtype::kF64 ? r.f64le() : static_cast<double>(r.f32le());
    msg.labels.resize(msg.batch);
    for (auto& label : msg.labels) label = r.u32();
    msg.sample_ids.resize(msg.batch);
    for (auto& id : msg.sample_ids) id = r.u64();
    if (r.remaining() != 0) throw WireError("activation frame has trailing bytes");
    return msg;
}

inline RoundStepMsg decode_round_step(const std::uint8_t* body, std::size_t len) {
    wire::Reader r(body, len);
    RoundStepMsg msg;
    msg.shuffle_seed = r.u64();
    return msg;
}

inline LossReportMsg decode_loss_report(const std::uint8_t* body, std::size_t len) {
    wire::Reader r(body, len);
    LossReportMsg msg;
    msg.round = r.u32();
    msg.mean_loss = r.f64le();
    const std::uint32_t count = r.u32();
    msg.batch_losses.resize(count);
    for (auto& loss : msg.batch_losses) loss = r.f64le();
    return msg;
}

enum class DeviceState { kIdle, kForwarding, kTransmitting, kDone };

// Device-side session: holds a read-only reference to the frozen prefix and
// never accumulates gradient state.
class DeviceSession {
public:
    DeviceSession(std::uint32_t device_id, std::uint32_t assigned_layers, const ToyModel& model,
                  WireDtype dtype = WireDtype::kF64)
        : device_id_(device_id), assigned_layers_(assigned_layers), model_(&model),
          dtype_(dtype) {
        if (assigned_layers > model.config.depth)
            throw std::invalid_argument("DeviceSession: assigned_layers " +
                                        std::to_string(assigned_layers) + " exceeds depth " +
                                        std::to_string(model.config.depth));
    }

    std::uint32_t device_id() const { return device_id_; }
    std::uint32_t assigned_layers() const { return assigned_layers_; }
    bool registered() const { return registered_; }
    DeviceState state() const { return state_; }

    // Layer-count metadata, sent exactly once before the first batch.
    RegisterMsg make_registration() {
        if (registered_) throw std::runtime_error("device " + std::to_string(device_id_) +
                                                  ": already registered");
        registered_ = true;
        return RegisterMsg{device_id_, assigned_layers_};
    }

    // Frozen forward over the local prefix (no caching, no gradient state),
    // then an activation batch ready for transmission.
    ActivationBatch forward_and_send(const Tensor2D& batch,
                                     const std::vector<std::uint32_t>& labels,
                                     const std::vector<std::uint64_t>& sample_ids,
                                     std::uint32_t round, std::uint32_t batch_id) {
        if (!registered_)
            throw std::runtime_error("device " + std::to_string(device_id_) +
                                     ": forward before registration");
        if (labels.size() != batch.rows() || sample_ids.size() != batch.rows())
            throw std::invalid_argument("device batch: labels/sample_ids size mismatch");
        state_ = DeviceState::kForwarding;
        Tensor2D activations = forward_prefix(*model_, batch, 0, assigned_layers_);
        state_ = DeviceState::kTransmitting;
        ActivationBatch out;
        out.device_id = device_id_;
        out.round = round;
        out.batch_id = batch_id;
        out.produced_at_layer = assigned_layers_;
        out.batch = static_cast<std::uint32_t>(activations.rows());
        out.seq = 1;
        out.width = static_cast<std::uint32_t>(activations.cols());
        out.dtype = dtype_;
        out.payload = std::move(activations);
        out.labels = labels;
        out.sample_ids = sample_ids;
        state_ = DeviceState::kIdle;
        return out;
    }

private:
    std::uint32_t device_id_;
    std::uint32_t assigned_layers_;
    const ToyModel* model_;
    WireDtype dtype_;
    DeviceState state_ = DeviceState::kIdle;
    bool registered_ = false;
};

struct RoundResult {
    std::uint32_t round = 0;
    double mean_loss = 0.0;
    std::vector<double> batch_losses;
};

// Server-side engine: registration registry, depth normalization at ingest,
// pooled canonical shuffle, and one optimizer step per pooled mini-batch.
class ServerEngine {
public:
    ServerEngine(ToyModel model, TrainConfig train, std::uint32_t lora_rank,
                 std::uint32_t pooled_batch_size, std::uint64_t adapter_seed)
        : model_(std::move(model)), train_cfg_(train), optimizer_(train),
          lora_rank_(lora_rank), pooled_batch_size_(pooled_batch_size),
          adapter_seed_(adapter_seed) {
        if (pooled_batch_size_ < 1)
            throw std::invalid_argument("ServerEngine: pooled batch size must be >= 1");
    }

    const ToyModel& model() const { return model_; }
    std::uint32_t shared_layer_start() const { return shared_layer_start_; }
    std::uint32_t round() const { return round_; }
    std::size_t buffered_samples() const { return buffer_rows_.size(); }
    double additional_forward_layer_batches() const { return af_layer_batches_; }

    void accept_registration(const RegisterMsg& msg) {
        if (sealed_)
            throw std::runtime_error("registration after training started (device " +
                                     std::to_string(msg.device_id) + ")");
        if (registry_.count(msg.device_id))
            throw std::runtime_error("duplicate registration for device " +
                                     std::to_string(msg.device_id));
        if (msg.assigned_layers > model_.config.depth)
            throw std::runtime_error("device " + std::to_string(msg.device_id) +
                                     " registers " + std::to_string(msg.assigned_layers) +
                                     " layers, model depth is " +
                                     std::to_string(model_.config.depth));
        registry_[msg.device_id] = msg.assigned_layers;
        shared_layer_start_ = 0;
        for (const auto& [id, layers] : registry_)
            shared_layer_start_ = std::max(shared_layer_start_, layers);
    }

    RegisterAckMsg registration_ack(std::uint32_t device_id) const {
        return RegisterAckMsg{device_id, shared_layer_start_};
    }

    // Runs the additional forward [produced_at_layer, shared_layer_start)
    // immediately, so every buffered activation sits at the shared depth.
    void ingest(const ActivationBatch& batch) {
        auto it = registry_.find(batch.device_id);
        if (it == registry_.end())
            throw std::runtime_error("activation from unregistered device " +
                                     std::to_string(batch.device_id));
        if (batch.produced_at_layer != it->second)
            throw std::runtime_error("device " + std::to_string(batch.device_id) +
                                     " sent activations from layer " +
                                     std::to_string(batch.produced_at_layer) +
                                     ", registered cut is " + std::to_string(it->second));
        if (batch.produced_at_layer > shared_layer_start_)
            throw std::runtime_error("activation depth " +
                                     std::to_string(batch.produced_at_layer) +
                                     " exceeds shared layer start " +
                                     std::to_string(shared_layer_start_));
        seal();
        Tensor2D at_shared =
            forward_prefix(static_cast<const ToyModel&>(model_), batch.payload,
                           batch.produced_at_layer, shared_layer_start_);
        af_layer_batches_ +=
            static_cast<double>(shared_layer_start_ - batch.produced_at_layer);
        for (std::size_t r = 0; r < at_shared.rows(); ++r) {
            buffer_rows_.push_back(at_shared.row(r));
            buffer_labels_.push_back(batch.labels[r]);
            buffer_ids_.push_back(batch.sample_ids[r]);
        }
    }

    // Pools the round's activations, shuffles them canonically, and performs
    // one B+W training step per pooled mini-batch, in shuffled order.
    RoundResult round_step(std::uint64_t shuffle_seed) {
        if (buffer_rows_.empty())
            throw std::runtime_error("round_step: no activations buffered");
        seal();
        std::vector<PooledSample> pool(buffer_rows_.size());
        for (std::size_t i = 0; i < buffer_rows_.size(); ++i) {
            pool[i].sample_id = buffer_ids_[i];
            pool[i].source_row = i;
        }
        pool = pooled_shuffle(std::move(pool), shuffle_seed);

        RoundResult result;
        result.round = round_;
        const std::size_t width = model_.config.width;
        for (std::size_t start = 0; start < pool.size(); start += pooled_batch_size_) {
            const std::size_t count = std::min<std::size_t>(pooled_batch_size_,
                                                            pool.size() - start);
            Tensor2D chunk(count, width);
            std::vector<std::uint32_t> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = pool[start + i].source_row;
                chunk.set_row(i, buffer_rows_[src], 0);
                labels[i] = buffer_labels_[src];
            }
            Tensor2D h = forward_prefix(model_, chunk, shared_layer_start_,
                                        model_.config.depth, true);
            Tensor2D logits = head_forward(model_, h);
            LossGrad lg = softmax_xent(logits, labels);
            BackwardContexts ctx;
            Tensor2D dh = head_backward(model_, h, lg.dlogits, ctx);
            backward_B(model_, dh, shared_layer_start_, model_.config.depth, ctx);
            backward_W(model_, ctx, optimizer_);
            result.batch_losses.push_back(lg.loss);
        }
        double total = 0.0;
        for (double loss : result.batch_losses) total += loss;
        result.mean_loss = total / static_cast<double>(result.batch_losses.size());
        buffer_rows_.clear();
        buffer_labels_.clear();
        buffer_ids_.clear();
        ++round_;
        return result;
    }

private:
    // First training activity freezes the registry and attaches adapters to
    // the shared layers.
    void seal() {
        if (sealed_) return;
        if (registry_.empty()) throw std::runtime_error("no devices registered");
        sealed_ = true;
        attach_adapters(model_, shared_layer_start_, lora_rank_, adapter_seed_);
    }

    ToyModel model_;
    TrainConfig train_cfg_;
    OptimizerState optimizer_;
    std::uint32_t lora_rank_;
    std::uint32_t pooled_batch_size_;
    std::uint64_t adapter_seed_;
    std::map<std::uint32_t, std::uint32_t> registry_;
    std::uint32_t shared_layer_start_ = 0;
    bool sealed_ = false;
    std::uint32_t round_ = 0;
    double af_layer_batches_ = 0.0;
    std::vector<Tensor2D> buffer_rows_;
    std::vector<std::uint32_t> buffer_labels_;
    std::vector<std::uint64_t> buffer_ids_;
};

// Decodes one inbound frame and applies it to the engine. Returns the reply
// frame if the message warrants one.
inline std::optional<std::vector<std::uint8_t>> dispatch_frame(ServerEngine& engine,
                                                               const wire::FrameView& frame) {
    switch (frame.type) {
        case MsgType::kRegister: {
            const RegisterMsg msg = decode_register(frame.body, frame.body_len);
            engine.accept_registration(msg);
            return encode(engine.registration_ack(msg.device_id));
        }
        case MsgType::kActivation: {
            engine.ingest(decode_activation(frame.body, frame.body_len));
            return std::nullopt;
        }
        case MsgType::kRoundStep: {
            const RoundStepMsg msg = decode_round_step(frame.body, frame.body_len);
            const RoundResult result = engine.round_step(msg.shuffle_seed);
            LossReportMsg report;
            report.round = result.round;
            report.mean_loss = result.mean_loss;
            report.batch_losses = result.batch_losses;
            return encode(report);
        }
        case MsgType::kShutdown:
            return std::nullopt;
        default:
            throw WireError("server cannot handle message type " +
                            std::to_string(static_cast<int>(frame.type)));
    }
}

}  // namespace splitfrozen

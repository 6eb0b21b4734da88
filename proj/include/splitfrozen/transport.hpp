#pragma once

// Byte-stream transports behind one abstraction: an in-process loopback pair
// and a minimal TCP implementation. Frames are self-delimiting (16-byte
// header carries the body length), so a transport only moves bytes.
//
// A FrameRecorder can be attached to the server side; it appends every
// inbound frame verbatim to a log file, which `replay` can feed back into a
// fresh engine to reproduce a run.

#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "splitfrozen/protocol.hpp"

namespace splitfrozen {

class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const std::vector<std::uint8_t>& frame) = 0;
    // Blocks for the next complete frame; empty optional means peer closed.
    virtual std::optional<std::vector<std::uint8_t>> receive() = 0;
    virtual void close() = 0;
};

namespace transport_detail {

struct SharedQueue {
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<std::vector<std::uint8_t>> frames;
    bool closed = false;

    void push(std::vector<std::uint8_t> frame) {
        {
            std::lock_guard lock(mutex);
            frames.push_back(std::move(frame));
        }
        ready.notify_one();
    }

    std::optional<std::vector<std::uint8_t>> pop() {
        std::unique_lock lock(mutex);
        ready.wait(lock, [this] { return !frames.empty() || closed; });
        if (frames.empty()) return std::nullopt;
        auto frame = std::move(frames.front());
        frames.pop_front();
        return frame;
    }

    void close() {
        {
            std::lock_guard lock(mutex);
            closed = true;
        }
        ready.notify_all();
    }
};

}  // namespace transport_detail

// In-process transport: make_loopback_pair returns the two connected ends.
class LoopbackTransport : public Transport {
public:
    LoopbackTransport(std::shared_ptr<transport_detail::SharedQueue> tx,
                      std::shared_ptr<transport_detail::SharedQueue> rx)
        : tx_(std::move(tx)), rx_(std::move(rx)) {}

    void send(const std::vector<std::uint8_t>& frame) override { tx_->push(frame); }
    std::optional<std::vector<std::uint8_t>> receive() override { return rx_->pop(); }
    void close() override {
        tx_->close();
        rx_->close();
    }

private:
    std::shared_ptr<transport_detail::SharedQueue> tx_;
    std::shared_ptr<transport_detail::SharedQueue> rx_;
};

inline std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair() {
    auto a_to_b = std::make_shared<transport_detail::SharedQueue>();
    auto b_to_a = std::make_shared<transport_detail::SharedQueue>();
    return {std::make_unique<LoopbackTransport>(a_to_b, b_to_a),
            std::make_unique<LoopbackTransport>(b_to_a, a_to_b)};
}

// Blocking TCP transport over an already-connected socket.
class TcpTransport : public Transport {
public:
    explicit TcpTransport(int fd) : fd_(fd) {}
    ~TcpTransport() override { close(); }

    void send(const std::vector<std::uint8_t>& frame) override {
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, 0);
            if (n <= 0) throw std::runtime_error("tcp send failed");
            sent += static_cast<std::size_t>(n);
        }
    }

    std::optional<std::vector<std::uint8_t>> receive() override {
        for (;;) {
            if (auto view = wire::parse_frame(buffer_.data(), buffer_.size())) {
                std::vector<std::uint8_t> frame(buffer_.begin(),
                                                buffer_.begin() +
                                                    static_cast<long>(view->frame_len));
                buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(view->frame_len));
                return frame;
            }
            std::uint8_t chunk[4096];
            const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
            if (n < 0) throw std::runtime_error("tcp recv failed");
            if (n == 0) {
                if (!buffer_.empty()) throw WireError("connection closed mid-frame");
                return std::nullopt;
            }
            buffer_.insert(buffer_.end(), chunk, chunk + n);
        }
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_;
    std::vector<std::uint8_t> buffer_;
};

class TcpListener {
public:
    // Binds 127.0.0.1:port; port 0 picks an ephemeral port (see port()).
    explicit TcpListener(std::uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw std::runtime_error("tcp: socket() failed");
        const int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd_);
            throw std::runtime_error("tcp: bind failed");
        }
        if (::listen(fd_, 16) != 0) {
            ::close(fd_);
            throw std::runtime_error("tcp: listen failed");
        }
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
    }

    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    std::uint16_t port() const { return port_; }

    std::unique_ptr<Transport> accept() {
        const int client = ::accept(fd_, nullptr, nullptr);
        if (client < 0) throw std::runtime_error("tcp: accept failed");
        return std::make_unique<TcpTransport>(client);
    }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

inline std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("tcp: socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::runtime_error("tcp: bad address " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw std::runtime_error("tcp: connect to " + host + ":" + std::to_string(port) +
                                 " failed");
    }
    return std::make_unique<TcpTransport>(fd);
}

// Appends inbound frames verbatim; the log is a valid frame stream.
class FrameRecorder {
public:
    explicit FrameRecorder(const std::string& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw std::runtime_error("recorder: cannot open " + path);
    }

    void record(const std::vector<std::uint8_t>& frame) {
        out_.write(reinterpret_cast<const char*>(frame.data()),
                   static_cast<std::streamsize>(frame.size()));
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

// Serves one connection: decodes frames, applies them to the engine, sends
// replies. Returns when the peer closes or sends Shutdown.
inline void serve_connection(ServerEngine& engine, Transport& transport,
                             FrameRecorder* recorder = nullptr) {
    while (auto frame = transport.receive()) {
        const auto view = wire::parse_frame(frame->data(), frame->size());
        if (!view) throw WireError("transport delivered a partial frame");
        if (recorder) recorder->record(*frame);
        if (view->type == MsgType::kShutdown) return;
        if (auto reply = dispatch_frame(engine, *view)) transport.send(*reply);
    }
}

// Replays a recorded frame log into the engine; returns every loss report
// the replay produces.
inline std::vector<LossReportMsg> replay_frame_log(ServerEngine& engine,
                                                   const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("replay: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    std::vector<LossReportMsg> reports;
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const auto view = wire::parse_frame(bytes.data() + offset, bytes.size() - offset);
        if (!view) throw WireError("replay: truncated frame log");
        if (view->type == MsgType::kShutdown) break;
        if (auto reply = dispatch_frame(engine, *view)) {
            const auto reply_view = wire::parse_frame(reply->data(), reply->size());
            if (reply_view && reply_view->type == MsgType::kLossReport)
                reports.push_back(decode_loss_report(reply_view->body, reply_view->body_len));
        }
        offset += view->frame_len;
    }
    return reports;
}

}  // namespace splitfrozen

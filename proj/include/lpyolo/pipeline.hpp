#pragma once

// Streaming inference: four stage workers (preprocess -> infer ->
// postprocess -> stream) joined by bounded blocking FIFOs, the LPYO frame
// wire protocol, and a single-client TCP server/client pair.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lpyolo/bytes.hpp"
#include "lpyolo/imaging.hpp"
#include "lpyolo/model.hpp"
#include "lpyolo/postprocess.hpp"

namespace lpyolo {

// ---------------------------------------------------------------------------
// Wire protocol
//
//   magic "LPYO" | version u8 | msg_type u8 | frame_id u64 | width u16 |
//   height u16 | num_detections u16 | num x (6 x f32) | payload_len u32 |
//   payload
//
// All integers little-endian. An end-of-stream message has msg_type 2 and
// zeros everywhere after it (24 bytes total).

inline constexpr std::array<char, 4> kWireMagic = {'L', 'P', 'Y', 'O'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kWireFixedHeader = 20;  // through num_detections
inline constexpr std::size_t kWireDetectionBytes = 24;
inline constexpr std::size_t kWireMinMessage = kWireFixedHeader + 4;

enum class MessageType : std::uint8_t { frame = 1, end = 2 };

struct WireDetection {
    float cx = 0, cy = 0, w = 0, h = 0, objectness = 0, class_score = 0;

    static WireDetection from(const Detection& d) {
        return {static_cast<float>(d.cx),         static_cast<float>(d.cy),
                static_cast<float>(d.w),          static_cast<float>(d.h),
                static_cast<float>(d.objectness), static_cast<float>(d.class_score)};
    }
    Detection to_detection() const { return {cx, cy, w, h, objectness, class_score}; }
};

// Bitwise equality so NaN payloads and signed zeros compare exactly.
inline bool operator==(const WireDetection& a, const WireDetection& b) {
    return std::memcmp(&a, &b, sizeof(WireDetection)) == 0;
}

struct FrameMessage {
    MessageType type = MessageType::frame;
    std::uint64_t frame_id = 0;
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<WireDetection> detections;
    std::vector<std::uint8_t> payload;  // raw RGB, 3 * width * height

    static FrameMessage end_of_stream() {
        FrameMessage m;
        m.type = MessageType::end;
        return m;
    }
    bool is_end() const { return type == MessageType::end; }

    bool operator==(const FrameMessage&) const = default;
};

enum class WireErrc { bad_magic, version_mismatch, bad_type, length_mismatch, invalid_field };

inline const char* to_string(WireErrc e) {
    switch (e) {
        case WireErrc::bad_magic: return "bad magic";
        case WireErrc::version_mismatch: return "version mismatch";
        case WireErrc::bad_type: return "bad message type";
        case WireErrc::length_mismatch: return "length mismatch";
        case WireErrc::invalid_field: return "invalid field";
    }
    return "unknown";
}

class WireError : public std::runtime_error {
public:
    WireError(WireErrc kind, const std::string& detail)
        : std::runtime_error(std::string("wire: ") + lpyolo::to_string(kind) + (detail.empty() ? "" : ": " + detail)),
          kind_(kind) {}
    WireErrc kind() const { return kind_; }

private:
    WireErrc kind_;
};

inline std::vector<std::uint8_t> encode_frame(const FrameMessage& msg) {
    detail::ByteWriter w;
    for (char c : kWireMagic) {
        w.u8(static_cast<std::uint8_t>(c));
    }
    w.u8(kWireVersion);
    w.u8(static_cast<std::uint8_t>(msg.type));
    if (msg.is_end()) {
        w.u64(0);
        w.u16(0);
        w.u16(0);
        w.u16(0);
        w.u32(0);
        return w.take();
    }
    if (msg.type != MessageType::frame) {
        throw WireError(WireErrc::bad_type, "cannot encode type " + std::to_string(static_cast<int>(msg.type)));
    }
    if (msg.detections.size() > 0xFFFF) {
        throw WireError(WireErrc::invalid_field, "more than 65535 detections");
    }
    if (msg.payload.size() != 3ull * msg.width * msg.height) {
        throw WireError(WireErrc::length_mismatch, "payload is " + std::to_string(msg.payload.size()) +
                                                       " bytes for a " + std::to_string(msg.width) + "x" +
                                                       std::to_string(msg.height) + " frame");
    }
    w.u64(msg.frame_id);
    w.u16(msg.width);
    w.u16(msg.height);
    w.u16(static_cast<std::uint16_t>(msg.detections.size()));
    for (const auto& d : msg.detections) {
        for (float v : {d.cx, d.cy, d.w, d.h, d.objectness, d.class_score}) {
            if (!std::isfinite(v)) {
                throw WireError(WireErrc::invalid_field, "non-finite detection field");
            }
            w.f32(v);
        }
    }
    w.u32(static_cast<std::uint32_t>(msg.payload.size()));
    w.bytes(msg.payload);
    return w.take();
}

namespace detail {

struct WireHeader {
    MessageType type;
    std::uint64_t frame_id;
    std::uint16_t width;
    std::uint16_t height;
    std::uint16_t num_detections;
};

inline WireHeader parse_wire_header(std::span<const std::uint8_t> b) {
    if (b.size() < kWireFixedHeader) {
        throw WireError(WireErrc::length_mismatch, "header needs 20 bytes, have " + std::to_string(b.size()));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        if (b[i] != static_cast<std::uint8_t>(kWireMagic[i])) {
            throw WireError(WireErrc::bad_magic, "");
        }
    }
    if (b[4] != kWireVersion) {
        throw WireError(WireErrc::version_mismatch, "version " + std::to_string(b[4]));
    }
    if (b[5] != static_cast<std::uint8_t>(MessageType::frame) && b[5] != static_cast<std::uint8_t>(MessageType::end)) {
        throw WireError(WireErrc::bad_type, "type " + std::to_string(b[5]));
    }
    auto fail = [](std::size_t, std::size_t) { throw WireError(WireErrc::length_mismatch, "short header"); };
    ByteReader r(b.subspan(6, kWireFixedHeader - 6), fail);
    WireHeader h;
    h.type = static_cast<MessageType>(b[5]);
    h.frame_id = r.u64();
    h.width = r.u16();
    h.height = r.u16();
    h.num_detections = r.u16();
    return h;
}

}  // namespace detail

inline FrameMessage decode_frame(std::span<const std::uint8_t> bytes) {
    const auto h = detail::parse_wire_header(bytes);
    auto fail = [](std::size_t pos, std::size_t n) {
        throw WireError(WireErrc::length_mismatch,
                        "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos + kWireFixedHeader));
    };
    detail::ByteReader r(bytes.subspan(kWireFixedHeader), fail);
    FrameMessage m;
    m.type = h.type;
    m.frame_id = h.frame_id;
    m.width = h.width;
    m.height = h.height;
    m.detections.resize(h.num_detections);
    for (auto& d : m.detections) {
        d.cx = r.f32();
        d.cy = r.f32();
        d.w = r.f32();
        d.h = r.f32();
        d.objectness = r.f32();
        d.class_score = r.f32();
        for (float v : {d.cx, d.cy, d.w, d.h, d.objectness, d.class_score}) {
            if (!std::isfinite(v)) {
                throw WireError(WireErrc::invalid_field, "non-finite detection field");
            }
        }
    }
    const std::uint32_t len = r.u32();
    if (len != 3ull * m.width * m.height) {
        throw WireError(WireErrc::length_mismatch, "payload_len " + std::to_string(len) + " disagrees with " +
                                                       std::to_string(m.width) + "x" + std::to_string(m.height));
    }
    auto payload = r.bytes(len);
    m.payload.assign(payload.begin(), payload.end());
    if (r.remaining() != 0) {
        throw WireError(WireErrc::length_mismatch, std::to_string(r.remaining()) + " trailing bytes");
    }
    if (m.is_end() && (m.frame_id != 0 || m.width != 0 || m.height != 0 || !m.detections.empty())) {
        throw WireError(WireErrc::invalid_field, "end-of-stream message carries non-zero fields");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Bounded blocking FIFO

/// Producer blocks while full; consumer blocks while empty. abort() wakes
/// everyone and makes push/pop fail from then on.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) {
            throw std::invalid_argument("queue capacity must be >= 1");
        }
    }

    bool push(T item) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return aborted_ || items_.size() < capacity_; });
        if (aborted_) {
            return false;
        }
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return aborted_ || !items_.empty(); });
        if (aborted_) {
            return std::nullopt;
        }
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void abort() {
        std::lock_guard lock(mu_);
        aborted_ = true;
        items_.clear();
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }
    std::size_t capacity() const { return capacity_; }

private:
    const std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
    std::deque<T> items_;
    bool aborted_ = false;
};

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
    std::size_t queue_capacity = 4;
};

enum Stage { kPreprocess = 0, kInfer = 1, kPostprocess = 2, kStream = 3 };
inline constexpr std::array<const char*, 4> kStageNames = {"preprocess", "infer", "postprocess", "stream"};

using Clock = std::chrono::steady_clock;

/// Per-frame state handed from stage to stage.
struct FrameWork {
    std::uint64_t frame_id = 0;
    Image frame;
    QuantTensor input;
    QuantTensor grid;
    std::vector<Detection> detections;
    Clock::time_point started;
};

using FrameSource = std::function<std::optional<Image>()>;
using MessageSink = std::function<void(const FrameMessage&)>;
using StageFn = std::function<void(FrameWork&)>;

struct PipelineStages {
    StageFn preprocess;
    StageFn infer;
    StageFn postprocess;
};

struct RunStats {
    std::size_t frames = 0;
    double wall_seconds = 0.0;
    std::array<double, 4> stage_seconds{};  // busy time per stage
    std::vector<double> frame_latency_ms;   // source pull to sink return

    double fps() const { return wall_seconds > 0.0 ? static_cast<double>(frames) / wall_seconds : 0.0; }
};

class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string stage, const std::string& what)
        : std::runtime_error("pipeline stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct PostprocessOptions {
    double conf_threshold = kDefaultConfThreshold;
    double nms_iou = kDefaultNmsIou;
    DecodeMode decode_mode = DecodeMode::anchor_pow2;
};

inline FrameMessage make_frame_message(const FrameWork& work) {
    if (work.frame.width > 0xFFFF || work.frame.height > 0xFFFF) {
        throw WireError(WireErrc::invalid_field, "frame dimensions exceed 16 bits");
    }
    FrameMessage m;
    m.frame_id = work.frame_id;
    m.width = static_cast<std::uint16_t>(work.frame.width);
    m.height = static_cast<std::uint16_t>(work.frame.height);
    m.detections.reserve(work.detections.size());
    for (const auto& d : work.detections) {
        m.detections.push_back(WireDetection::from(d));
    }
    m.payload = work.frame.pixels;
    return m;
}

/// The real stages: resize + pack, integer forward, dequantize + decode + NMS.
/// The model must outlive the returned functions.
inline PipelineStages inference_stages(const LpyoloModel& model, PostprocessOptions opts = {}) {
    PipelineStages s;
    s.preprocess = [](FrameWork& w) { w.input = pack_input(resize_nearest(w.frame, kInputSize, kInputSize)); };
    s.infer = [&model](FrameWork& w) { w.grid = forward(model, w.input); };
    s.postprocess = [&model, opts](FrameWork& w) {
        const auto real = dequantize_output(w.grid);
        w.detections = nms(decode_grid(real, model.config(), opts.conf_threshold, opts.decode_mode), opts.nms_iou);
    };
    return s;
}

namespace detail {

struct Packet {
    bool end = false;
    FrameWork work;
};

inline double seconds_since(Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
}

}  // namespace detail

/// Runs every stage on its own thread. Frames leave in source order; after
/// the last frame the sink receives an end-of-stream message. A throwing
/// stage aborts every queue, the workers drain out, and the first error is
/// rethrown as PipelineError naming its stage (no end-of-stream is sent).
inline RunStats run_pipeline(const FrameSource& source, const PipelineStages& stages, const MessageSink& sink,
                             PipelineConfig cfg = {}) {
    using detail::Packet;
    std::array<BoundedQueue<Packet>, 3> queues = {BoundedQueue<Packet>(cfg.queue_capacity),
                                                  BoundedQueue<Packet>(cfg.queue_capacity),
                                                  BoundedQueue<Packet>(cfg.queue_capacity)};
    RunStats stats;
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::string failed_stage;

    auto fail = [&](int stage, std::exception_ptr e) {
        {
            std::lock_guard lock(err_mu);
            if (!first_error) {
                first_error = std::move(e);
                failed_stage = kStageNames[static_cast<std::size_t>(stage)];
            }
        }
        for (auto& q : queues) {
            q.abort();
        }
    };

    const auto t0 = Clock::now();

    // Preprocess owns the source pull: reading a frame is part of preprocessing.
    std::thread pre([&] {
        try {
            for (std::uint64_t id = 0;; ++id) {
                const auto t = Clock::now();
                auto img = source();
                if (!img) {
                    stats.stage_seconds[kPreprocess] += detail::seconds_since(t);
                    queues[0].push(Packet{true, {}});
                    return;
                }
                Packet p;
                p.work.frame_id = id;
                p.work.frame = std::move(*img);
                p.work.started = t;
                if (stages.preprocess) {
                    stages.preprocess(p.work);
                }
                stats.stage_seconds[kPreprocess] += detail::seconds_since(t);
                if (!queues[0].push(std::move(p))) {
                    return;
                }
            }
        } catch (...) {
            fail(kPreprocess, std::current_exception());
        }
    });

    auto middle = [&](int stage, const StageFn& fn, BoundedQueue<Packet>& in, BoundedQueue<Packet>& out) {
        try {
            while (auto p = in.pop()) {
                if (!p->end) {
                    const auto t = Clock::now();
                    if (fn) {
                        fn(p->work);
                    }
                    stats.stage_seconds[static_cast<std::size_t>(stage)] += detail::seconds_since(t);
                }
                const bool end = p->end;
                if (!out.push(std::move(*p)) || end) {
                    return;
                }
            }
        } catch (...) {
            fail(stage, std::current_exception());
        }
    };
    std::thread inf([&] { middle(kInfer, stages.infer, queues[0], queues[1]); });
    std::thread post([&] { middle(kPostprocess, stages.postprocess, queues[1], queues[2]); });

    std::thread stream([&] {
        try {
            while (auto p = queues[2].pop()) {
                const auto t = Clock::now();
                if (p->end) {
                    sink(FrameMessage::end_of_stream());
                    stats.stage_seconds[kStream] += detail::seconds_since(t);
                    return;
                }
                sink(make_frame_message(p->work));
                const auto done = Clock::now();
                stats.stage_seconds[kStream] += std::chrono::duration<double>(done - t).count();
                stats.frame_latency_ms.push_back(
                    std::chrono::duration<double, std::milli>(done - p->work.started).count());
                ++stats.frames;
            }
        } catch (...) {
            fail(kStream, std::current_exception());
        }
    });

    pre.join();
    inf.join();
    post.join();
    stream.join();
    stats.wall_seconds = detail::seconds_since(t0);

    if (first_error) {
        try {
            std::rethrow_exception(first_error);
        } catch (const std::exception& e) {
            throw PipelineError(failed_stage, e.what());
        } catch (...) {
            throw PipelineError(failed_stage, "unknown error");
        }
    }
    return stats;
}

/// Same stages and contract as run_pipeline, one frame at a time on the
/// calling thread. Used as the baseline for pipelining speedup.
inline RunStats run_sequential(const FrameSource& source, const PipelineStages& stages, const MessageSink& sink) {
    RunStats stats;
    const auto t0 = Clock::now();
    int stage = kPreprocess;
    try {
        for (std::uint64_t id = 0;; ++id) {
            stage = kPreprocess;
            const auto t = Clock::now();
            auto img = source();
            stats.stage_seconds[kPreprocess] += detail::seconds_since(t);
            if (!img) {
                stage = kStream;
                sink(FrameMessage::end_of_stream());
                break;
            }
            FrameWork w;
            w.frame_id = id;
            w.frame = std::move(*img);
            w.started = t;
            auto timed = [&](int s, const StageFn& fn) {
                stage = s;
                const auto ts = Clock::now();
                if (fn) {
                    fn(w);
                }
                stats.stage_seconds[static_cast<std::size_t>(s)] += detail::seconds_since(ts);
            };
            timed(kPreprocess, stages.preprocess);
            timed(kInfer, stages.infer);
            timed(kPostprocess, stages.postprocess);
            stage = kStream;
            const auto ts = Clock::now();
            sink(make_frame_message(w));
            const auto done = Clock::now();
            stats.stage_seconds[kStream] += std::chrono::duration<double>(done - ts).count();
            stats.frame_latency_ms.push_back(std::chrono::duration<double, std::milli>(done - t).count());
            ++stats.frames;
        }
    } catch (const std::exception& e) {
        throw PipelineError(kStageNames[static_cast<std::size_t>(stage)], e.what());
    }
    stats.wall_seconds = detail::seconds_since(t0);
    return stats;
}

inline RunStats run_pipeline(const FrameSource& source, const LpyoloModel& model, const MessageSink& sink,
                             PipelineConfig cfg = {}, PostprocessOptions opts = {}) {
    return run_pipeline(source, inference_stages(model, opts), sink, cfg);
}

/// Frames from a directory's *.ppm files in lexicographic order.
inline FrameSource directory_source(const std::filesystem::path& dir) {
    auto files = std::make_shared<std::vector<std::filesystem::path>>(list_frames(dir));
    auto next = std::make_shared<std::size_t>(0);
    return [files, next]() -> std::optional<Image> {
        if (*next >= files->size()) {
            return std::nullopt;
        }
        return read_ppm((*files)[(*next)++].string());
    };
}

// ---------------------------------------------------------------------------
// TCP

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owning file descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { reset(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void reset() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

namespace detail {

inline std::string errno_text() { return std::strerror(errno); }

inline std::pair<std::string, std::string> split_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) {
        throw NetError("address '" + address + "' is not host:port");
    }
    std::string host = address.substr(0, colon);
    if (host.empty()) {
        host = "0.0.0.0";
    }
    return {host, address.substr(colon + 1)};
}

inline sockaddr_in resolve_ipv4(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res);
    if (rc != 0 || res == nullptr) {
        throw NetError("cannot resolve " + host + ":" + port + ": " + gai_strerror(rc));
    }
    sockaddr_in addr{};
    std::memcpy(&addr, res->ai_addr, sizeof(addr));
    ::freeaddrinfo(res);
    return addr;
}

inline void send_all(int fd, std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw NetError("send failed: " + errno_text());
        }
        sent += static_cast<std::size_t>(n);
    }
}

/// Reads exactly n bytes. Returns false on clean EOF before the first byte.
inline bool recv_exact(int fd, std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, out + got, n - got, 0);
        if (r < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw NetError("recv failed: " + errno_text());
        }
        if (r == 0) {
            if (got == 0) {
                return false;
            }
            throw WireError(WireErrc::length_mismatch, "connection closed mid-message");
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

}  // namespace detail

/// Reads one framed message from a stream socket; nullopt on clean EOF.
inline std::optional<FrameMessage> read_message(int fd) {
    std::vector<std::uint8_t> buf(kWireFixedHeader);
    if (!detail::recv_exact(fd, buf.data(), buf.size())) {
        return std::nullopt;
    }
    const auto h = detail::parse_wire_header(buf);
    const std::size_t det_bytes = std::size_t{h.num_detections} * kWireDetectionBytes;
    buf.resize(kWireFixedHeader + det_bytes + 4);
    if (!detail::recv_exact(fd, buf.data() + kWireFixedHeader, det_bytes + 4)) {
        throw WireError(WireErrc::length_mismatch, "connection closed mid-message");
    }
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) {
        len |= static_cast<std::uint32_t>(buf[kWireFixedHeader + det_bytes + static_cast<std::size_t>(i)]) << (8 * i);
    }
    if (len != 3ull * h.width * h.height) {
        throw WireError(WireErrc::length_mismatch, "payload_len disagrees with frame size");
    }
    const std::size_t head = buf.size();
    buf.resize(head + len);
    if (len > 0 && !detail::recv_exact(fd, buf.data() + head, len)) {
        throw WireError(WireErrc::length_mismatch, "connection closed mid-payload");
    }
    return decode_frame(buf);
}

/// Single-client streaming server. Binds on construction (port 0 picks an
/// ephemeral port). serve() runs the pipeline with a sink that waits for a
/// client, writes each encoded message, and on a write failure logs,
/// drops that client, and resends the same message to the next one.
class TcpServer {
public:
    explicit TcpServer(const std::string& address) {
        const auto [host, port] = detail::split_address(address);
        const sockaddr_in addr = detail::resolve_ipv4(host, port);
        listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!listener_.valid()) {
            throw NetError("socket failed: " + detail::errno_text());
        }
        const int one = 1;
        ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(listener_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw NetError("bind to " + address + " failed: " + detail::errno_text());
        }
        if (::listen(listener_.fd(), 1) != 0) {
            throw NetError("listen failed: " + detail::errno_text());
        }
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
    }

    std::uint16_t port() const { return port_; }

    RunStats serve(const FrameSource& source, const PipelineStages& stages, PipelineConfig cfg = {},
                   std::ostream& log = std::cerr) {
        auto sink = [&](const FrameMessage& msg) {
            const auto bytes = encode_frame(msg);
            for (;;) {
                if (!client_.valid()) {
                    accept_client(log);
                }
                try {
                    detail::send_all(client_.fd(), bytes);
                    break;
                } catch (const NetError& e) {
                    log << "lpyolo serve: client write failed (" << e.what() << "), waiting for next client\n";
                    client_.reset();
                }
            }
            if (msg.is_end()) {
                ::shutdown(client_.fd(), SHUT_WR);
                client_.reset();
            }
        };
        auto stats = run_pipeline(source, stages, sink, cfg);
        listener_.reset();
        return stats;
    }

    RunStats serve(const FrameSource& source, const LpyoloModel& model, PipelineConfig cfg = {},
                   PostprocessOptions opts = {}, std::ostream& log = std::cerr) {
        return serve(source, inference_stages(model, opts), cfg, log);
    }

private:
    void accept_client(std::ostream& log) {
        for (;;) {
            const int fd = ::accept(listener_.fd(), nullptr, nullptr);
            if (fd >= 0) {
                const int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
                client_ = Socket(fd);
                return;
            }
            if (errno == EINTR || errno == ECONNABORTED) {
                continue;
            }
            log << "lpyolo serve: accept failed: " << detail::errno_text() << "\n";
            throw NetError("accept failed: " + detail::errno_text());
        }
    }

    Socket listener_;
    Socket client_;
    std::uint16_t port_ = 0;
};

class TcpClient {
public:
    TcpClient(const std::string& host, std::uint16_t port) {
        const sockaddr_in addr = detail::resolve_ipv4(host, std::to_string(port));
        sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!sock_.valid()) {
            throw NetError("socket failed: " + detail::errno_text());
        }
        if (::connect(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw NetError("connect to " + host + ":" + std::to_string(port) + " failed: " + detail::errno_text());
        }
    }

    /// Next message, or nullopt if the server closed the connection.
    std::optional<FrameMessage> next() { return read_message(sock_.fd()); }

    /// Reads until an end-of-stream message (not included) or EOF.
    std::vector<FrameMessage> receive_all() {
        std::vector<FrameMessage> out;
        while (auto m = next()) {
            if (m->is_end()) {
                ended_ = true;
                break;
            }
            out.push_back(std::move(*m));
        }
        return out;
    }

    bool saw_end() const { return ended_; }
    int fd() const { return sock_.fd(); }

private:
    Socket sock_;
    bool ended_ = false;
};

}  // namespace lpyolo

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <limits>
#include <random>
#include <thread>

#include "lpyolo/pipeline.hpp"

using namespace lpyolo;
using namespace std::chrono_literals;

namespace {

FrameMessage sample_message(std::uint64_t id, std::uint16_t w, std::uint16_t h, std::size_t ndet) {
    FrameMessage m;
    m.frame_id = id;
    m.width = w;
    m.height = h;
    for (std::size_t i = 0; i < ndet; ++i) {
        const float f = static_cast<float>(i) * 0.125f;
        m.detections.push_back({f, f + 0.5f, 0.25f, 0.125f, 0.75f, 1.0f});
    }
    m.payload.resize(3u * w * h);
    for (std::size_t i = 0; i < m.payload.size(); ++i) {
        m.payload[i] = static_cast<std::uint8_t>(i * 31 + id);
    }
    return m;
}

WireErrc wire_error(const std::vector<std::uint8_t>& b) {
    try {
        decode_frame(b);
    } catch (const WireError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode succeeded";
    return WireErrc::invalid_field;
}

// Source of n tiny frames whose first pixel byte encodes the index.
FrameSource counting_source(int n, int size = 4) {
    auto i = std::make_shared<int>(0);
    return [=]() -> std::optional<Image> {
        if (*i >= n) {
            return std::nullopt;
        }
        Image img(size, size);
        img.pixels[0] = static_cast<std::uint8_t>(*i);
        ++*i;
        return img;
    };
}

// Stages that tag each frame with one detection derived from its first byte.
PipelineStages tagging_stages() {
    PipelineStages s;
    s.preprocess = [](FrameWork& w) { w.frame.pixels[1] = 1; };
    s.infer = [](FrameWork& w) { w.frame.pixels[2] = 2; };
    s.postprocess = [](FrameWork& w) {
        const double v = w.frame.pixels[0] / 256.0;
        w.detections = {{v, v, 0.1, 0.1, 1.0, 1.0}};
    };
    return s;
}

}  // namespace

TEST(Wire, ZeroDetectionOnePixelFrameIs27Bytes) {
    const auto m = sample_message(7, 1, 1, 0);
    const auto b = encode_frame(m);
    EXPECT_EQ(b.size(), 27u);
    EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "LPYO");
    EXPECT_EQ(b[4], 1);
    EXPECT_EQ(b[5], 1);
    EXPECT_EQ(b[6], 7);
    EXPECT_EQ(b[14], 1);  // width low byte
    EXPECT_EQ(b[20], 3);  // payload_len low byte
    EXPECT_EQ(decode_frame(b), m);
}

TEST(Wire, EndOfStreamIs24ZeroBytesAfterType) {
    const auto b = encode_frame(FrameMessage::end_of_stream());
    ASSERT_EQ(b.size(), kWireMinMessage);
    EXPECT_EQ(b[5], 2);
    for (std::size_t i = 6; i < b.size(); ++i) {
        EXPECT_EQ(b[i], 0);
    }
    EXPECT_TRUE(decode_frame(b).is_end());
}

TEST(Wire, RoundTripWithDetections) {
    const auto m = sample_message(std::numeric_limits<std::uint64_t>::max(), 5, 3, 4);
    const auto b = encode_frame(m);
    EXPECT_EQ(b.size(), 24u + 4 * 24 + 45);
    EXPECT_EQ(decode_frame(b), m);
}

TEST(Wire, Errors) {
    const auto good = encode_frame(sample_message(1, 2, 2, 1));
    auto b = good;
    b.pop_back();
    EXPECT_EQ(wire_error(b), WireErrc::length_mismatch);
    b = good;
    b.push_back(0);
    EXPECT_EQ(wire_error(b), WireErrc::length_mismatch);
    EXPECT_EQ(wire_error({good.begin(), good.begin() + 10}), WireErrc::length_mismatch);
    b = good;
    b[0] = 'X';
    EXPECT_EQ(wire_error(b), WireErrc::bad_magic);
    b = good;
    b[4] = 2;
    EXPECT_EQ(wire_error(b), WireErrc::version_mismatch);
    b = good;
    b[5] = 3;
    EXPECT_EQ(wire_error(b), WireErrc::bad_type);
    b = good;
    b[20 + 24] = 11;  // payload_len
    EXPECT_EQ(wire_error(b), WireErrc::length_mismatch);
    b = good;
    b[23] = 0x7F;  // cx exponent bits -> NaN
    b[22] = 0xC0;
    EXPECT_EQ(wire_error(b), WireErrc::invalid_field);

    auto bad = sample_message(1, 2, 2, 0);
    bad.payload.pop_back();
    EXPECT_THROW(encode_frame(bad), WireError);
    bad = sample_message(1, 2, 2, 1);
    bad.detections[0].w = std::numeric_limits<float>::infinity();
    EXPECT_THROW(encode_frame(bad), WireError);
}

TEST(Queue, FifoAndCapacity) {
    EXPECT_THROW(BoundedQueue<int>(0), std::invalid_argument);
    BoundedQueue<int> q(2);
    EXPECT_TRUE(q.push(1));
    EXPECT_TRUE(q.push(2));
    EXPECT_EQ(q.size(), 2u);
    std::atomic<bool> pushed{false};
    std::thread t([&] {
        q.push(3);
        pushed = true;
    });
    std::this_thread::sleep_for(50ms);
    EXPECT_FALSE(pushed.load());
    EXPECT_EQ(q.pop(), 1);
    t.join();
    EXPECT_TRUE(pushed.load());
    EXPECT_EQ(q.pop(), 2);
    EXPECT_EQ(q.pop(), 3);
}

TEST(Queue, AbortWakesWaiters) {
    BoundedQueue<int> q(1);
    std::thread t([&] { EXPECT_EQ(q.pop(), std::nullopt); });
    std::this_thread::sleep_for(20ms);
    q.abort();
    t.join();
    EXPECT_FALSE(q.push(1));
}

TEST(Pipeline, OrderPreservedAndEndMarker) {
    for (std::size_t cap : {1u, 4u}) {
        std::vector<FrameMessage> got;
        const auto stats = run_pipeline(
            counting_source(50), tagging_stages(), [&](const FrameMessage& m) { got.push_back(m); }, {cap});
        ASSERT_EQ(got.size(), 51u);
        EXPECT_TRUE(got.back().is_end());
        for (std::size_t i = 0; i < 50; ++i) {
            EXPECT_EQ(got[i].frame_id, i);
            EXPECT_EQ(got[i].payload[0], i);
            EXPECT_EQ(got[i].payload[1], 1);
            EXPECT_EQ(got[i].payload[2], 2);
            ASSERT_EQ(got[i].detections.size(), 1u);
            EXPECT_EQ(got[i].detections[0].cx, static_cast<float>(i / 256.0));
        }
        EXPECT_EQ(stats.frames, 50u);
        EXPECT_EQ(stats.frame_latency_ms.size(), 50u);
        EXPECT_GT(stats.wall_seconds, 0.0);
    }
}

TEST(Pipeline, EmptySourceSendsOnlyEnd) {
    std::vector<FrameMessage> got;
    const auto stats =
        run_pipeline(counting_source(0), tagging_stages(), [&](const FrameMessage& m) { got.push_back(m); });
    ASSERT_EQ(got.size(), 1u);
    EXPECT_TRUE(got[0].is_end());
    EXPECT_EQ(stats.frames, 0u);
}

TEST(Pipeline, SequentialMatchesPipelined) {
    std::vector<FrameMessage> a, b;
    run_pipeline(counting_source(20), tagging_stages(), [&](const FrameMessage& m) { a.push_back(m); });
    run_sequential(counting_source(20), tagging_stages(), [&](const FrameMessage& m) { b.push_back(m); });
    EXPECT_EQ(a, b);
}

TEST(Pipeline, ErrorNamesStage) {
    auto stages = tagging_stages();
    stages.infer = [](FrameWork& w) {
        if (w.frame_id == 3) {
            throw std::runtime_error("boom");
        }
    };
    std::size_t received = 0;
    try {
        run_pipeline(counting_source(100), stages, [&](const FrameMessage&) { ++received; }, {2});
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "infer");
        EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
    }
    EXPECT_LE(received, 3u);

    try {
        run_pipeline(counting_source(5), tagging_stages(), [](const FrameMessage&) { throw std::runtime_error("x"); });
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "stream");
    }
    try {
        run_sequential(counting_source(5), stages, [](const FrameMessage&) {});
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "infer");
    }
}

TEST(Pipeline, OverlapsStages) {
    PipelineStages s;
    s.preprocess = [](FrameWork&) { std::this_thread::sleep_for(5ms); };
    s.infer = s.preprocess;
    s.postprocess = s.preprocess;
    auto sink = [](const FrameMessage& m) {
        if (!m.is_end()) {
            std::this_thread::sleep_for(5ms);
        }
    };
    const auto piped = run_pipeline(counting_source(30), s, sink);
    const auto seq = run_sequential(counting_source(30), s, sink);
    EXPECT_LT(piped.wall_seconds, 0.75 * seq.wall_seconds);
}

TEST(Tcp, LoopbackDeliversInOrder) {
    TcpServer server("127.0.0.1:0");
    ASSERT_NE(server.port(), 0);
    RunStats stats;
    std::thread t([&] { stats = server.serve(counting_source(25, 6), tagging_stages(), {}, std::cerr); });
    TcpClient client("127.0.0.1", server.port());
    const auto msgs = client.receive_all();
    t.join();
    EXPECT_TRUE(client.saw_end());
    ASSERT_EQ(msgs.size(), 25u);
    for (std::size_t i = 0; i < msgs.size(); ++i) {
        EXPECT_EQ(msgs[i].frame_id, i);
        EXPECT_EQ(msgs[i].width, 6);
        EXPECT_EQ(msgs[i].payload[0], i);
    }
    EXPECT_EQ(stats.frames, 25u);
    EXPECT_EQ(client.next(), std::nullopt);
}

TEST(Tcp, EmptySourceServesEndOnly) {
    TcpServer server("127.0.0.1:0");
    std::thread t([&] { server.serve(counting_source(0), tagging_stages(), {}, std::cerr); });
    TcpClient client("127.0.0.1", server.port());
    EXPECT_TRUE(client.receive_all().empty());
    EXPECT_TRUE(client.saw_end());
    t.join();
}

TEST(Tcp, NextClientAfterDisconnect) {
    TcpServer server("127.0.0.1:0");
    std::ostringstream log;
    std::thread t([&] { server.serve(counting_source(200, 32), tagging_stages(), {1}, log); });
    {
        TcpClient first("127.0.0.1", server.port());
        auto m = first.next();
        ASSERT_TRUE(m);
        EXPECT_EQ(m->frame_id, 0u);
    }
    TcpClient second("127.0.0.1", server.port());
    const auto rest = second.receive_all();
    t.join();
    EXPECT_TRUE(second.saw_end());
    ASSERT_FALSE(rest.empty());
    for (std::size_t i = 1; i < rest.size(); ++i) {
        EXPECT_GT(rest[i].frame_id, rest[i - 1].frame_id);
    }
    EXPECT_EQ(rest.back().frame_id, 199u);
    EXPECT_NE(log.str().find("client write failed"), std::string::npos);
}

TEST(Tcp, BadAddress) {
    EXPECT_THROW(TcpServer("no-port"), std::exception);
    TcpServer a("127.0.0.1:0");
    EXPECT_THROW(TcpServer("127.0.0.1:" + std::to_string(a.port())), NetError);
}

#include "tomembed/sidecar.hpp"

#include <gtest/gtest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <thread>

#include "stub_server.hpp"
#include "tomembed/error.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed::mteb {
namespace {

using namespace std::chrono_literals;
using Bytes = std::vector<std::uint8_t>;

std::string stdio_endpoint(const std::string& flags = "") {
  return std::string("stdio:") + STUB_SIDECAR_PATH + (flags.empty() ? "" : " " + flags);
}

Block ramp_block(std::size_t c, std::size_t s, float base) {
  Block b(c, s, s);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (float& v : b.plane(ch)) v = base + static_cast<float>(ch);
  }
  return b;
}

// Stub model: channel means tiled to dim.
std::vector<float> stub_expected(const Block& b, std::size_t dim) {
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = b.at(i % b.channels(), 0, 0);
  return out;
}

TEST(Frames, RequestLayout) {
  const Bytes bytes = encode(Request{0x0102, Block(1, 1, 2, std::vector<float>{1.0f, -2.0f})});
  const Bytes expected = {0x01, 0x02, 0x01, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 2, 0,
                          0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(Frames, HandshakeLayout) {
  EXPECT_EQ(encode(ClientHello{}), (Bytes{'M', 'T', 'E', 'B', 1}));
  EXPECT_EQ(encode(ServerHello{1, 3, "ab"}), (Bytes{'M', 'T', 'E', 'B', 1, 3, 0, 0, 0, 2, 0, 'a', 'b'}));
  EXPECT_EQ(encode(Shutdown{}), (Bytes{0x02}));
  EXPECT_EQ(encode(ErrorFrame{5, "x"}), (Bytes{0xff, 5, 0, 0, 0, 0, 0, 0, 0, 1, 0, 'x'}));
}

TEST(Frames, DecoderHandlesArbitrarySplits) {
  Bytes stream;
  auto append = [&](const Bytes& b) { stream.insert(stream.end(), b.begin(), b.end()); };
  append(encode(ServerHello{1, 2, "m"}));
  append(encode(Response{7, {1.5f, 2.5f}}));
  append(encode(ErrorFrame{8, "bad"}));
  append(encode(Request{9, Block(2, 2, 2, 0.25f)}));
  append(encode(Shutdown{}));

  SplitMix64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    StreamDecoder d;
    std::optional<ServerHello> hello;
    std::vector<Frame> frames;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      const std::size_t n = std::min<std::size_t>(1 + rng.next() % 7, stream.size() - pos);
      d.feed(std::span(stream).subspan(pos, n));
      pos += n;
      if (!hello) hello = d.next_server_hello();
      if (hello) {
        while (auto f = d.next_frame()) frames.push_back(std::move(*f));
      }
    }
    ASSERT_TRUE(hello);
    EXPECT_EQ(hello->model_name, "m");
    ASSERT_EQ(frames.size(), 4u);
    EXPECT_EQ(std::get<Response>(frames[0]).values, (std::vector<float>{1.5f, 2.5f}));
    EXPECT_EQ(std::get<ErrorFrame>(frames[1]).message, "bad");
    EXPECT_EQ(std::get<Request>(frames[2]).block, Block(2, 2, 2, 0.25f));
    EXPECT_TRUE(std::holds_alternative<Shutdown>(frames[3]));
    EXPECT_EQ(d.buffered(), 0u);
  }
}

TEST(Frames, DecoderRejectsGarbage) {
  StreamDecoder d;
  d.feed(Bytes{0x42, 0, 0});
  EXPECT_THROW(d.next_frame(), ProtocolError);
  StreamDecoder h;
  h.feed(Bytes{'H', 'T', 'T', 'P', '/', 1, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_THROW(h.next_server_hello(), ProtocolError);
}

TEST(Frames, ServerErrorDuringHandshakeIsReported) {
  StreamDecoder d;
  d.feed(encode(ErrorFrame{0, "unsupported version"}));
  try {
    d.next_server_hello();
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported version"), std::string::npos);
  }
}

TEST(SidecarClient, StdioRoundTrip) {
  auto client = SidecarClient::connect(stdio_endpoint("--dim 6 --model tiny"), 10s);
  EXPECT_EQ(client->dim(), 6u);
  EXPECT_EQ(client->model_name(), "tiny");
  std::vector<Block> blocks;
  for (int i = 0; i < 40; ++i) blocks.push_back(ramp_block(3, 8, static_cast<float>(i)));
  const auto out = client->embed(blocks);
  ASSERT_EQ(out.size(), blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) EXPECT_EQ(out[i], stub_expected(blocks[i], 6));
  EXPECT_EQ(sidecar_embed(blocks[3], *client), stub_expected(blocks[3], 6));
  client->shutdown();
}

TEST(SidecarClient, TcpRoundTrip) {
  stub::TcpServer server({});
  auto client = SidecarClient::connect(server.endpoint(), 10s);
  const std::vector<Block> blocks = {ramp_block(2, 4, 1.0f), ramp_block(2, 4, 5.0f)};
  const auto out = client->embed(blocks);
  EXPECT_EQ(out[1], stub_expected(blocks[1], 4));
}

TEST(SidecarClient, MatchesOutOfOrderReplies) {
  auto client = SidecarClient::connect(stdio_endpoint("--reverse 5"), 10s);
  std::vector<Block> blocks;
  for (int i = 0; i < 25; ++i) blocks.push_back(ramp_block(1, 3, static_cast<float>(i)));
  const auto out = client->embed(blocks);
  for (std::size_t i = 0; i < blocks.size(); ++i) EXPECT_EQ(out[i], stub_expected(blocks[i], 4));
}

TEST(SidecarClient, LargeBatchDoesNotDeadlock) {
  // Far more request bytes than a socket buffer holds, all pipelined.
  auto client = SidecarClient::connect(stdio_endpoint("--dim 512"), 30s);
  std::vector<Block> blocks(64, ramp_block(3, 128, 0.5f));
  const auto out = client->embed(blocks);
  EXPECT_EQ(out.size(), 64u);
  EXPECT_EQ(out[63], stub_expected(blocks[63], 512));
}

TEST(SidecarClient, ErrorFrameIsProtocolError) {
  auto client = SidecarClient::connect(stdio_endpoint("--error-id 2"), 10s);
  const std::vector<Block> blocks = {ramp_block(1, 2, 0), ramp_block(1, 2, 1)};
  try {
    client->embed(blocks);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

TEST(SidecarClient, WrongReplyDimension) {
  auto client = SidecarClient::connect(stdio_endpoint("--reply-dim 3"), 10s);
  EXPECT_THROW(client->embed(std::vector<Block>{ramp_block(1, 2, 0)}), ProtocolError);
}

TEST(SidecarClient, UnknownReplyId) {
  auto client = SidecarClient::connect(stdio_endpoint("--bad-id"), 10s);
  EXPECT_THROW(client->embed(std::vector<Block>{ramp_block(1, 2, 0)}), ProtocolError);
}

TEST(SidecarClient, SilentServerTimesOut) {
  auto client = SidecarClient::connect(stdio_endpoint("--silent"), 300ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(client->embed(std::vector<Block>{ramp_block(1, 2, 0)}), ProtocolError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(SidecarClient, VersionMismatchRejected) {
  EXPECT_THROW(SidecarClient::connect(stdio_endpoint("--version 2"), 10s), ProtocolError);
}

TEST(SidecarClient, ServerExitingIsProtocolError) {
  EXPECT_THROW(SidecarClient::connect("stdio:true", 5s), ProtocolError);
}

TEST(SidecarClient, BadEndpoints) {
  EXPECT_THROW(SidecarClient::connect("nonsense", 1s), ConfigError);
  EXPECT_THROW(SidecarClient::connect("127.0.0.1:notaport", 1s), ConfigError);
  EXPECT_THROW(SidecarClient::connect("stdio:", 1s), ConfigError);
}

TEST(SidecarClient, FromFdOverSocketpair) {
  int fds[2];
  ASSERT_EQ(socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
  std::thread server([fd = fds[1]] {
    stub::serve(fd, fd, stub::Options{});
    close(fd);
  });
  {
    auto client = SidecarClient::from_fd(fds[0], 5s);
    EXPECT_EQ(client->embed(std::vector<Block>{ramp_block(2, 2, 3)})[0], (std::vector<float>{3, 4, 3, 4}));
    client->shutdown();
  }
  server.join();
}

TEST(SidecarBackend, MakeBackendChecksDim) {
  BackendRef ref = BackendRef::parse("sidecar:" + stdio_endpoint("--dim 8"));
  EXPECT_EQ(make_backend(ref, 8)->dim(), 8u);
  EXPECT_THROW(make_backend(ref, 16), ConfigError);
}

TEST(Conformance, StubPassesOverStdio) {
  const auto report = run_conformance(stdio_endpoint("--dim 16"), 1000, 20s);
  for (const auto& c : report.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  EXPECT_EQ(report.checks.size(), 4u);
  EXPECT_TRUE(report.passed());
}

TEST(Conformance, StubPassesOverTcp) {
  stub::TcpServer server({});
  const auto report = run_conformance(server.endpoint(), 200, 20s);
  for (const auto& c : report.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Conformance, FaultyServerFails) {
  EXPECT_FALSE(run_conformance(stdio_endpoint("--bad-id"), 10, 5s).passed());
  EXPECT_FALSE(run_conformance(stdio_endpoint("--version 2"), 10, 5s).passed());
}

}  // namespace
}  // namespace tomembed::mteb

#pragma once

// MTEB/1: framed binary protocol between the pipeline and an external model
// server, over a TCP socket or the stdin/stdout of a child process. All
// integers are little-endian.
//
//   handshake  client: "MTEB" u8 version
//              server: "MTEB" u8 version u32 dim u16 name_len name
//   0x01 request   u64 id, u16 C, u16 H, u16 W, C*H*W f32 (channel-major)
//   0x81 response  u64 id, u32 dim, dim f32
//   0xFF error     u64 id, u16 len, UTF-8 message
//   0x02 shutdown  (type byte only)

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tomembed/block.hpp"
#include "tomembed/embed.hpp"

namespace tomembed::mteb {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kRequest = 0x01;
inline constexpr std::uint8_t kShutdown = 0x02;
inline constexpr std::uint8_t kResponse = 0x81;
inline constexpr std::uint8_t kError = 0xFF;

struct ClientHello {
  std::uint8_t version = kVersion;
};
struct ServerHello {
  std::uint8_t version = kVersion;
  std::uint32_t dim = 0;
  std::string model_name;
};
struct Request {
  std::uint64_t id = 0;
  Block block;
};
struct Response {
  std::uint64_t id = 0;
  std::vector<float> values;
};
struct ErrorFrame {
  std::uint64_t id = 0;
  std::string message;
};
struct Shutdown {};

using Frame = std::variant<Request, Response, ErrorFrame, Shutdown>;

std::vector<std::uint8_t> encode(const ClientHello& hello);
std::vector<std::uint8_t> encode(const ServerHello& hello);
std::vector<std::uint8_t> encode(const Request& request);
std::vector<std::uint8_t> encode(const Response& response);
std::vector<std::uint8_t> encode(const ErrorFrame& error);
std::vector<std::uint8_t> encode(const Shutdown& shutdown);

// Incremental decoder for one direction of a connection. Feed raw bytes and
// pull complete messages; incomplete input stays buffered. Throws
// ProtocolError on bytes that cannot start a valid message.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<ClientHello> next_client_hello();
  std::optional<ServerHello> next_server_hello();
  std::optional<Frame> next_frame();
  std::size_t buffered() const { return buffer_.size() - pos_; }

 private:
  bool have(std::size_t n) const { return buffered() >= n; }
  void compact();

  std::vector<std::uint8_t> buffer_;
  std::size_t pos_ = 0;
};

// Client side of one connection. The connection is serially owned: one
// thread at a time, frames are written whole and never interleaved.
class SidecarClient final : public EmbeddingBackend {
 public:
  // endpoint: "host:port" or "stdio:<shell command>".
  static std::unique_ptr<SidecarClient> connect(const std::string& endpoint,
                                                std::chrono::milliseconds timeout = std::chrono::seconds(60));
  // Takes ownership of a connected, bidirectional descriptor.
  static std::unique_ptr<SidecarClient> from_fd(int fd, std::chrono::milliseconds timeout = std::chrono::seconds(60));

  ~SidecarClient() override;
  SidecarClient(const SidecarClient&) = delete;
  SidecarClient& operator=(const SidecarClient&) = delete;

  std::size_t dim() const override { return hello_.dim; }
  std::string name() const override { return hello_.model_name; }
  const std::string& model_name() const { return hello_.model_name; }

  // Pipelines every block and matches responses by request id, in any
  // arrival order. Throws ProtocolError on error frames, unknown ids,
  // dimension mismatches, transport failures and timeouts.
  std::vector<EmbeddingVector> embed(std::span<const Block> blocks) override;

  // Sends the shutdown frame and closes the connection.
  void shutdown();

 private:
  SidecarClient(int fd, int child_pid, std::chrono::milliseconds timeout);
  void handshake();
  void send_all(std::span<const std::uint8_t> bytes);
  bool read_some();  // false on EOF

  int fd_ = -1;
  int child_pid_ = -1;
  std::chrono::milliseconds timeout_;
  std::uint64_t next_id_ = 1;
  StreamDecoder decoder_;
  ServerHello hello_;
};

EmbeddingVector sidecar_embed(const Block& block, SidecarClient& client);

// Conformance harness for MTEB/1 servers: handshake, `requests` pipelined
// id-matched round trips with random blocks, a malformed frame that must be
// answered by an error frame on a still-usable connection, and a truncated
// frame followed by disconnect that must not take the server down.
struct ConformanceReport {
  struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
  };
  std::vector<Check> checks;
  bool passed() const;
};

ConformanceReport run_conformance(const std::string& endpoint, std::size_t requests = 1000,
                                  std::chrono::milliseconds timeout = std::chrono::seconds(30));

}  // namespace tomembed::mteb

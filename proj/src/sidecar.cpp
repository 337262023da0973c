#include "tomembed/sidecar.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>
#include <thread>
#include <unordered_map>

#include "tomembed/error.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed::mteb {
namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'T', 'E', 'B'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(float));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint64_t get_u64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(get_u32(p)) | (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

std::string errno_text() { return std::strerror(errno); }

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) {
    throw ProtocolError("cannot set non-blocking mode: " + errno_text());
  }
}

int connect_tcp(const std::string& host, const std::string& port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ProtocolError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError("cannot connect to " + host + ":" + port + ": " + errno_text());
  return fd;
}

// Runs `command` under /bin/sh with stdin and stdout bound to one end of a
// socket pair; returns (our end, child pid).
std::pair<int, int> spawn_stdio(const std::string& command) {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
    throw ProtocolError("socketpair failed: " + errno_text());
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw ProtocolError("fork failed: " + errno_text());
  }
  if (pid == 0) {
    ::dup2(sv[1], STDIN_FILENO);
    ::dup2(sv[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(sv[1]);
  return {sv[0], static_cast<int>(pid)};
}

// Parses an endpoint and opens the transport. Returns (fd, child pid or -1).
std::pair<int, int> open_endpoint(const std::string& endpoint) {
  constexpr std::string_view stdio_prefix = "stdio:";
  auto bad = [&]() {
    return ConfigError("sidecar endpoint must be 'host:port' or 'stdio:<command>', got '" + endpoint + "'");
  };
  if (endpoint.starts_with(stdio_prefix)) {
    const std::string command = endpoint.substr(stdio_prefix.size());
    if (command.find_first_not_of(" \t") == std::string::npos) throw bad();
    return spawn_stdio(command);
  }
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0) throw bad();
  const std::string port = endpoint.substr(colon + 1);
  if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string::npos ||
      std::stoi(port) > 65535) {
    throw bad();
  }
  return {connect_tcp(endpoint.substr(0, colon), port), -1};
}

// Reaps a child, killing it if it does not exit within `grace`.
int reap_child(int pid, std::chrono::milliseconds grace) {
  if (pid <= 0) return 0;
  int status = 0;
  const auto deadline = std::chrono::steady_clock::now() + grace;
  while (true) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) return status;
    if (r < 0) return 0;
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return status;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

// Bidirectional byte stream with poll-based timeouts.
class Connection {
 public:
  Connection(int fd, int pid, std::chrono::milliseconds timeout) : fd_(fd), pid_(pid), timeout_(timeout) {
    set_nonblocking(fd_);
  }
  ~Connection() { close(); }

  int release_fd() { return std::exchange(fd_, -1); }
  int release_pid() { return std::exchange(pid_, -1); }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    child_status_ = reap_child(std::exchange(pid_, -1), std::chrono::seconds(5));
  }
  int child_status() const { return child_status_; }
  bool had_child() const { return had_child_; }

  void send(std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      wait(POLLOUT);
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        throw ProtocolError("send failed: " + errno_text());
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  // Reads whatever is available (waiting up to the timeout). Returns false on EOF.
  bool recv(StreamDecoder& decoder) {
    wait(POLLIN);
    std::uint8_t buf[1 << 16];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n < 0) {
      if (errno == EAGAIN || errno == EINTR) return true;
      if (errno == ECONNRESET) return false;
      throw ProtocolError("recv failed: " + errno_text());
    }
    if (n == 0) return false;
    decoder.feed({buf, static_cast<std::size_t>(n)});
    return true;
  }

  void shutdown_write() { ::shutdown(fd_, SHUT_WR); }

 private:
  void wait(short events) {
    pollfd p{fd_, events, 0};
    while (true) {
      const int rc = ::poll(&p, 1, static_cast<int>(timeout_.count()));
      if (rc > 0) return;
      if (rc == 0) throw ProtocolError("sidecar timed out");
      if (errno != EINTR) throw ProtocolError("poll failed: " + errno_text());
    }
  }

  int fd_;
  int pid_;
  bool had_child_ = pid_ > 0;
  int child_status_ = 0;
  std::chrono::milliseconds timeout_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Encoding

std::vector<std::uint8_t> encode(const ClientHello& hello) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(hello.version);
  return out;
}

std::vector<std::uint8_t> encode(const ServerHello& hello) {
  if (hello.model_name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("model name too long");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(hello.version);
  put_u32(out, hello.dim);
  put_u16(out, static_cast<std::uint16_t>(hello.model_name.size()));
  out.insert(out.end(), hello.model_name.begin(), hello.model_name.end());
  return out;
}

std::vector<std::uint8_t> encode(const Request& request) {
  constexpr std::size_t kMax = std::numeric_limits<std::uint16_t>::max();
  const Block& b = request.block;
  if (b.channels() > kMax || b.rows() > kMax || b.cols() > kMax) {
    throw std::invalid_argument("block dimensions do not fit the MTEB/1 u16 fields");
  }
  std::vector<std::uint8_t> out;
  out.reserve(15 + b.size() * 4);
  out.push_back(kRequest);
  put_u64(out, request.id);
  put_u16(out, static_cast<std::uint16_t>(b.channels()));
  put_u16(out, static_cast<std::uint16_t>(b.rows()));
  put_u16(out, static_cast<std::uint16_t>(b.cols()));
  put_floats(out, b.values());
  return out;
}

std::vector<std::uint8_t> encode(const Response& response) {
  std::vector<std::uint8_t> out;
  out.reserve(13 + response.values.size() * 4);
  out.push_back(kResponse);
  put_u64(out, response.id);
  put_u32(out, static_cast<std::uint32_t>(response.values.size()));
  put_floats(out, response.values);
  return out;
}

std::vector<std::uint8_t> encode(const ErrorFrame& error) {
  const std::size_t len = std::min<std::size_t>(error.message.size(), std::numeric_limits<std::uint16_t>::max());
  std::vector<std::uint8_t> out;
  out.push_back(kError);
  put_u64(out, error.id);
  put_u16(out, static_cast<std::uint16_t>(len));
  out.insert(out.end(), error.message.begin(), error.message.begin() + static_cast<std::ptrdiff_t>(len));
  return out;
}

std::vector<std::uint8_t> encode(const Shutdown&) { return {kShutdown}; }

// ---------------------------------------------------------------------------
// Decoding

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  compact();
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void StreamDecoder::compact() {
  if (pos_ > 0 && pos_ >= buffer_.size() / 2) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
}

std::optional<ClientHello> StreamDecoder::next_client_hello() {
  if (!have(5)) return std::nullopt;
  const std::uint8_t* p = buffer_.data() + pos_;
  if (std::memcmp(p, kMagic, 4) != 0) throw ProtocolError("bad handshake magic");
  pos_ += 5;
  return ClientHello{p[4]};
}

std::optional<ServerHello> StreamDecoder::next_server_hello() {
  if (!have(11)) return std::nullopt;
  const std::uint8_t* p = buffer_.data() + pos_;
  if (std::memcmp(p, kMagic, 4) != 0) {
    if (p[0] == kError && have(11)) {
      const std::uint16_t len = get_u16(p + 9);
      if (!have(11u + len)) return std::nullopt;
      throw ProtocolError("server rejected handshake: " +
                          std::string(reinterpret_cast<const char*>(p + 11), len));
    }
    throw ProtocolError("bad handshake magic from server");
  }
  const std::uint16_t name_len = get_u16(p + 9);
  if (!have(11u + name_len)) return std::nullopt;
  ServerHello hello;
  hello.version = p[4];
  hello.dim = get_u32(p + 5);
  hello.model_name.assign(reinterpret_cast<const char*>(p + 11), name_len);
  pos_ += 11u + name_len;
  return hello;
}

std::optional<Frame> StreamDecoder::next_frame() {
  if (!have(1)) return std::nullopt;
  const std::uint8_t* p = buffer_.data() + pos_;
  switch (p[0]) {
    case kShutdown:
      pos_ += 1;
      return Shutdown{};
    case kRequest: {
      if (!have(15)) return std::nullopt;
      const std::size_t c = get_u16(p + 9), h = get_u16(p + 11), w = get_u16(p + 13);
      const std::size_t n = c * h * w;
      if (!have(15 + n * 4)) return std::nullopt;
      std::vector<float> values(n);
      std::memcpy(values.data(), p + 15, n * 4);
      Request r{get_u64(p + 1), Block(c, h, w, std::move(values))};
      pos_ += 15 + n * 4;
      return r;
    }
    case kResponse: {
      if (!have(13)) return std::nullopt;
      const std::size_t dim = get_u32(p + 9);
      if (!have(13 + dim * 4)) return std::nullopt;
      Response r{get_u64(p + 1), std::vector<float>(dim)};
      std::memcpy(r.values.data(), p + 13, dim * 4);
      pos_ += 13 + dim * 4;
      return r;
    }
    case kError: {
      if (!have(11)) return std::nullopt;
      const std::size_t len = get_u16(p + 9);
      if (!have(11 + len)) return std::nullopt;
      ErrorFrame e{get_u64(p + 1), std::string(reinterpret_cast<const char*>(p + 11), len)};
      pos_ += 11 + len;
      return e;
    }
    default:
      throw ProtocolError("unknown frame type 0x" + [&] {
        char buf[3];
        std::snprintf(buf, sizeof(buf), "%02X", p[0]);
        return std::string(buf);
      }());
  }
}

// ---------------------------------------------------------------------------
// Client

SidecarClient::SidecarClient(int fd, int child_pid, std::chrono::milliseconds timeout)
    : fd_(fd), child_pid_(child_pid), timeout_(timeout) {}

std::unique_ptr<SidecarClient> SidecarClient::connect(const std::string& endpoint,
                                                      std::chrono::milliseconds timeout) {
  auto [fd, pid] = open_endpoint(endpoint);
  std::unique_ptr<SidecarClient> client(new SidecarClient(fd, pid, timeout));
  client->handshake();
  return client;
}

std::unique_ptr<SidecarClient> SidecarClient::from_fd(int fd, std::chrono::milliseconds timeout) {
  std::unique_ptr<SidecarClient> client(new SidecarClient(fd, -1, timeout));
  client->handshake();
  return client;
}

SidecarClient::~SidecarClient() {
  try {
    shutdown();
  } catch (...) {
  }
}

void SidecarClient::send_all(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    pollfd p{fd_, POLLOUT, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout_.count()));
    if (rc == 0) throw ProtocolError("sidecar timed out");
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("poll failed: " + errno_text());
    }
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EAGAIN || errno == EINTR) continue;
      throw ProtocolError("sidecar transport failure: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

bool SidecarClient::read_some() {
  std::uint8_t buf[1 << 16];
  const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
  if (n < 0) {
    if (errno == EAGAIN || errno == EINTR) return true;
    throw ProtocolError("sidecar transport failure: " + errno_text());
  }
  if (n == 0) return false;
  decoder_.feed({buf, static_cast<std::size_t>(n)});
  return true;
}

void SidecarClient::handshake() {
  set_nonblocking(fd_);
  send_all(encode(ClientHello{}));
  while (true) {
    if (auto hello = decoder_.next_server_hello()) {
      if (hello->version != kVersion) {
        throw ProtocolError("sidecar speaks MTEB version " + std::to_string(hello->version));
      }
      if (hello->dim < 1) throw ProtocolError("sidecar announced a zero embedding dim");
      hello_ = *hello;
      return;
    }
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout_.count()));
    if (rc == 0) throw ProtocolError("sidecar handshake timed out");
    if (rc < 0 && errno != EINTR) throw ProtocolError("poll failed: " + errno_text());
    if (rc > 0 && !read_some()) throw ProtocolError("sidecar closed the connection during handshake");
  }
}

std::vector<EmbeddingVector> SidecarClient::embed(std::span<const Block> blocks) {
  if (fd_ < 0) throw ProtocolError("sidecar connection is closed");
  std::vector<EmbeddingVector> out(blocks.size());
  if (blocks.empty()) return out;

  std::vector<std::uint8_t> outgoing;
  std::unordered_map<std::uint64_t, std::size_t> pending;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::uint64_t id = next_id_++;
    auto frame = encode(Request{id, blocks[i]});
    outgoing.insert(outgoing.end(), frame.begin(), frame.end());
    pending.emplace(id, i);
  }

  // Write and read concurrently so neither side's socket buffer can fill up
  // and deadlock the exchange.
  std::size_t sent = 0;
  while (!pending.empty()) {
    pollfd p{fd_, static_cast<short>(POLLIN | (sent < outgoing.size() ? POLLOUT : 0)), 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout_.count()));
    if (rc == 0) throw ProtocolError("sidecar timed out");
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("poll failed: " + errno_text());
    }
    if ((p.revents & POLLOUT) && sent < outgoing.size()) {
      const ssize_t n = ::send(fd_, outgoing.data() + sent, outgoing.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno != EAGAIN && errno != EINTR) {
        throw ProtocolError("sidecar transport failure: " + errno_text());
      }
      if (n > 0) sent += static_cast<std::size_t>(n);
    }
    if (p.revents & (POLLIN | POLLHUP | POLLERR)) {
      if (!read_some()) throw ProtocolError("sidecar closed the connection");
      while (auto frame = decoder_.next_frame()) {
        if (auto* r = std::get_if<Response>(&*frame)) {
          auto it = pending.find(r->id);
          if (it == pending.end()) throw ProtocolError("response for unknown request id " + std::to_string(r->id));
          if (r->values.size() != hello_.dim) {
            throw ProtocolError("response has " + std::to_string(r->values.size()) + " values, handshake announced " +
                                std::to_string(hello_.dim));
          }
          out[it->second] = std::move(r->values);
          pending.erase(it);
        } else if (auto* e = std::get_if<ErrorFrame>(&*frame)) {
          throw ProtocolError("sidecar error for request " + std::to_string(e->id) + ": " + e->message);
        } else {
          throw ProtocolError("unexpected frame from sidecar");
        }
      }
    }
  }
  return out;
}

void SidecarClient::shutdown() {
  if (fd_ >= 0) {
    try {
      const auto frame = encode(Shutdown{});
      ::send(fd_, frame.data(), frame.size(), MSG_NOSIGNAL);
    } catch (...) {
    }
    ::close(fd_);
    fd_ = -1;
  }
  reap_child(std::exchange(child_pid_, -1), std::chrono::seconds(5));
}

EmbeddingVector sidecar_embed(const Block& block, SidecarClient& client) {
  auto out = client.embed(std::span<const Block>(&block, 1));
  return std::move(out.front());
}

// ---------------------------------------------------------------------------
// Conformance harness

bool ConformanceReport::passed() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

ConformanceReport run_conformance(const std::string& endpoint, std::size_t requests,
                                  std::chrono::milliseconds timeout) {
  ConformanceReport report;
  auto record = [&](std::string name, auto&& body) {
    ConformanceReport::Check check{std::move(name), false, {}};
    try {
      check.detail = body();
      check.passed = true;
    } catch (const std::exception& e) {
      check.detail = e.what();
    }
    report.checks.push_back(std::move(check));
  };

  std::uint32_t dim = 0;
  record("handshake", [&] {
    auto client = SidecarClient::connect(endpoint, timeout);
    dim = static_cast<std::uint32_t>(client->dim());
    return "dim " + std::to_string(dim) + ", model '" + client->model_name() + "'";
  });

  record("pipelined requests", [&] {
    auto client = SidecarClient::connect(endpoint, timeout);
    SplitMix64 rng(20240101);
    std::vector<Block> blocks;
    blocks.reserve(requests);
    for (std::size_t i = 0; i < requests; ++i) {
      Block b(3, 8, 8);
      for (float& v : b.values()) v = static_cast<float>(rng.next_unit());
      blocks.push_back(std::move(b));
    }
    const auto out = client->embed(blocks);
    return std::to_string(out.size()) + " id-matched responses";
  });

  // An empty block is a well-formed frame with an unusable payload.
  record("malformed request answered with error frame", [&] {
    auto [fd, pid] = open_endpoint(endpoint);
    Connection conn(fd, pid, timeout);
    StreamDecoder dec;
    conn.send(encode(ClientHello{}));
    while (!dec.next_server_hello()) {
      if (!conn.recv(dec)) throw ProtocolError("closed during handshake");
    }
    conn.send(encode(Request{77, Block(0, 0, 0)}));
    std::optional<Frame> reply;
    while (!(reply = dec.next_frame())) {
      if (!conn.recv(dec)) throw ProtocolError("server closed instead of sending an error frame");
    }
    const auto* err = std::get_if<ErrorFrame>(&*reply);
    if (err == nullptr) throw ProtocolError("expected an error frame");
    const std::string message = err->message;
    Block ok(1, 2, 2, 0.5f);
    conn.send(encode(Request{78, ok}));
    while (!(reply = dec.next_frame())) {
      if (!conn.recv(dec)) throw ProtocolError("connection unusable after error frame");
    }
    const auto* resp = std::get_if<Response>(&*reply);
    if (resp == nullptr || resp->id != 78) throw ProtocolError("no valid response after error frame");
    conn.send(encode(Shutdown{}));
    return "error: " + message;
  });

  record("truncated frames do not crash the server", [&] {
    SplitMix64 rng(99);
    const auto full = encode(Request{5, Block(2, 4, 4, 0.25f)});
    for (int trial = 0; trial < 8; ++trial) {
      auto [fd, pid] = open_endpoint(endpoint);
      Connection conn(fd, pid, timeout);
      conn.send(encode(ClientHello{}));
      const std::size_t cut = 1 + rng.next() % (full.size() - 1);
      conn.send(std::span(full).first(cut));
      conn.shutdown_write();
      StreamDecoder dec;
      try {
        while (conn.recv(dec)) {
        }
      } catch (const ProtocolError&) {
      }
      const bool child = conn.had_child();
      conn.close();
      if (child && WIFSIGNALED(conn.child_status())) {
        throw ProtocolError("server process killed by signal " + std::to_string(WTERMSIG(conn.child_status())));
      }
    }
    // The server must still accept new sessions.
    auto client = SidecarClient::connect(endpoint, timeout);
    const Block b(1, 2, 2, 1.0f);
    sidecar_embed(b, *client);
    return std::string("8 truncated sessions survived");
  });

  return report;
}

}  // namespace tomembed::mteb

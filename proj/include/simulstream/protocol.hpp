#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "simulstream/agent.hpp"
#include "simulstream/error.hpp"
#include "simulstream/log.hpp"
#include "simulstream/stream.hpp"

namespace simulstream {

// Wire protocol: newline-delimited JSON, UTF-8, one object per line. The
// evaluator connects to the agent, announces the session, streams source
// segments as they are read, and asks for one token per write grant.
//
//   -> {"id":...,"k":{...},"languages":[...],"mode":...,"q":...,"type":"session_start"}
//   -> {"frames":[[...],...],"index":1,"type":"source_segment"}
//   -> {"lang":"es","slot":1,"type":"write_request"}
//   <- {"lang":"es","slot":1,"token":"hola","type":"token"}
//   <- {"lang":"es","slot":3,"type":"eos"}
//   -> {"type":"session_end"}
//   <- {"message":"...","type":"error"}        (either side, aborts)
//
// TCP carries one session per connection; a stdio channel may carry
// sequential sessions.

struct Endpoint {
  enum class Kind { kTcp, kStdio };
  Kind kind = Kind::kTcp;
  std::string host;
  int port = 0;
};

inline Endpoint parse_endpoint(const std::string& spec) {
  if (spec == "stdio://" || spec == "stdio")
    return Endpoint{Endpoint::Kind::kStdio, "", 0};
  const std::string prefix = "tcp://";
  if (spec.rfind(prefix, 0) != 0)
    throw ConfigError("endpoint must be tcp://host:port or stdio://, got " +
                      spec);
  const std::string rest = spec.substr(prefix.size());
  const size_t colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= rest.size())
    throw ConfigError("endpoint must be tcp://host:port, got " + spec);
  Endpoint ep;
  ep.kind = Endpoint::Kind::kTcp;
  ep.host = rest.substr(0, colon);
  try {
    ep.port = std::stoi(rest.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in endpoint " + spec);
  }
  if (ep.port < 0 || ep.port > 65535)
    throw ConfigError("bad port in endpoint " + spec);
  return ep;
}

namespace wire {

using nlohmann::json;

inline json session_start(const SessionInfo& info) {
  json k = json::object();
  for (const auto& [lang, kv] : info.schedule.k_per_lang) k[lang] = kv;
  return json{{"type", "session_start"},
              {"id", info.utterance_id},
              {"languages", [&] {
                 json langs = json::array();
                 for (const auto& [lang, kv] : info.schedule.k_per_lang)
                   langs.push_back(lang);
                 return langs;
               }()},
              {"k", k},
              {"mode", info.schedule.mode == ScheduleMode::kSync ? "sync"
                                                                 : "async"},
              {"q", info.q}};
}

inline json source_segment(const Packet& packet) {
  json frames = json::array();
  for (const auto& frame : packet.frames) {
    json row = json::array();
    for (float v : frame) row.push_back(static_cast<double>(v));
    frames.push_back(std::move(row));
  }
  return json{{"type", "source_segment"},
              {"index", packet.index},
              {"frames", std::move(frames)}};
}

inline json write_request(const std::string& lang, int slot) {
  return json{{"type", "write_request"}, {"lang", lang}, {"slot", slot}};
}

inline json token_reply(const std::string& lang, int slot,
                        const std::string& token) {
  return json{{"type", "token"}, {"lang", lang}, {"slot", slot},
              {"token", token}};
}

inline json eos_reply(const std::string& lang, int slot) {
  return json{{"type", "eos"}, {"lang", lang}, {"slot", slot}};
}

inline json session_end() { return json{{"type", "session_end"}}; }

inline json error_reply(const std::string& message) {
  return json{{"type", "error"}, {"message", message}};
}

inline SessionInfo parse_session_start(const json& msg) {
  SessionInfo info;
  info.utterance_id = msg.at("id").get<std::string>();
  info.q = msg.at("q").get<int>();
  std::map<std::string, int> k_map;
  for (const auto& [lang, k] : msg.at("k").items())
    k_map[lang] = k.get<int>();
  const std::string mode = msg.at("mode").get<std::string>();
  if (mode == "sync") {
    info.schedule.mode = ScheduleMode::kSync;
    info.schedule.k_per_lang = k_map;
    info.schedule.sync_k();  // validates equal k
  } else if (mode == "async") {
    info.schedule = Schedule::async(k_map);
  } else {
    throw ProtocolError("unknown schedule mode '" + mode + "'");
  }
  return info;
}

inline Packet parse_source_segment(const json& msg) {
  Packet packet;
  packet.index = msg.at("index").get<int>();
  for (const auto& row : msg.at("frames")) {
    FrameVector frame;
    frame.reserve(row.size());
    for (const auto& v : row) frame.push_back(v.get<float>());
    packet.frames.push_back(std::move(frame));
  }
  return packet;
}

}  // namespace wire

namespace detail {

// Line-framed duplex channel over file descriptors. Reads are buffered and
// bounded by a per-message timeout.
class LineChannel {
 public:
  LineChannel(int read_fd, int write_fd, bool owns, int timeout_ms)
      : read_fd_(read_fd),
        write_fd_(write_fd),
        owns_(owns),
        timeout_ms_(timeout_ms) {}

  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;

  ~LineChannel() { close_fds(); }

  void close_fds() {
    if (!owns_) return;
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
  }

  void write_line(const std::string& line) {
    std::string framed = line;
    framed.push_back('\n');
    size_t off = 0;
    while (off < framed.size()) {
      const ssize_t n =
          ::write(write_fd_, framed.data() + off, framed.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
      }
      off += static_cast<size_t>(n);
    }
  }

  // Returns nullopt on clean EOF before any byte of the next line.
  std::optional<std::string> read_line() {
    while (true) {
      const size_t pos = buffer_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      struct pollfd pfd {read_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, timeout_ms_);
      if (pr == 0) throw ProtocolError("timeout waiting for message");
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<size_t>(n));
    }
  }

 private:
  int read_fd_;
  int write_fd_;
  bool owns_;
  int timeout_ms_;
  std::string buffer_;
};

inline int connect_tcp(const std::string& host, int port) {
  struct addrinfo hints {};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  struct addrinfo* res = nullptr;
  const std::string port_str = std::to_string(port);
  const int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res);
  if (rc != 0)
    throw ProtocolError("cannot resolve " + host + ": " + gai_strerror(rc));
  int fd = -1;
  for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw ProtocolError("cannot connect to " + host + ":" + port_str);
  return fd;
}

}  // namespace detail

constexpr int kDefaultWireTimeoutMs = 30000;

// Creates one agent per session; the session id comes from session_start.
using AgentFactory = std::function<std::unique_ptr<Agent>(const SessionInfo&)>;

namespace detail {

// One protocol session on an open channel. Returns false when the peer
// closed before starting a session (clean shutdown).
inline bool serve_one_session(LineChannel& channel,
                              const AgentFactory& factory) {
  using nlohmann::json;
  std::unique_ptr<Agent> agent;
  try {
    while (true) {
      const auto line = channel.read_line();
      if (!line.has_value()) return false;
      if (line->empty()) continue;
      json msg;
      try {
        msg = json::parse(*line);
      } catch (const json::exception&) {
        channel.write_line(wire::error_reply("malformed message").dump());
        throw ProtocolError("malformed message from client");
      }
      const std::string type = msg.value("type", "");
      if (type == "session_start") {
        if (agent) throw ProtocolError("session_start inside a session");
        const SessionInfo info = wire::parse_session_start(msg);
        agent = factory(info);
        if (!agent) throw ProtocolError("no agent for session " + info.utterance_id);
        agent->begin_session(info);
      } else if (type == "source_segment") {
        if (!agent) throw ProtocolError("source_segment before session_start");
        agent->on_source(wire::parse_source_segment(msg));
      } else if (type == "write_request") {
        if (!agent) throw ProtocolError("write_request before session_start");
        const std::string lang = msg.at("lang").get<std::string>();
        const int slot = msg.at("slot").get<int>();
        const auto token = agent->write(lang, slot);
        channel.write_line(token.has_value()
                               ? wire::token_reply(lang, slot, *token).dump()
                               : wire::eos_reply(lang, slot).dump());
      } else if (type == "session_end") {
        if (agent) agent->end_session();
        return true;
      } else {
        channel.write_line(wire::error_reply("unknown message type").dump());
        throw ProtocolError("unknown message type '" + type + "'");
      }
    }
  } catch (const std::exception& e) {
    log::warn(std::string("session aborted: ") + e.what());
    try {
      channel.write_line(wire::error_reply(e.what()).dump());
    } catch (...) {
    }
    return false;
  }
}

}  // namespace detail

// Blocking server over a pair of file descriptors (used for stdio serving
// and in-process tests). Serves sequential sessions until EOF.
inline void serve_agent_fd(const AgentFactory& factory, int read_fd,
                           int write_fd,
                           int timeout_ms = kDefaultWireTimeoutMs) {
  detail::LineChannel channel(read_fd, write_fd, /*owns=*/false, timeout_ms);
  while (detail::serve_one_session(channel, factory)) {
  }
}

// TCP agent server: one session per connection, concurrent connections each
// on their own thread.
class AgentServer {
 public:
  AgentServer(AgentFactory factory, std::string host, int port,
              int timeout_ms = kDefaultWireTimeoutMs)
      : factory_(std::move(factory)),
        host_(std::move(host)),
        port_(port),
        timeout_ms_(timeout_ms) {}

  ~AgentServer() { stop(); }

  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError("cannot create listen socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    struct sockaddr_in addr {};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port_));
    if (host_.empty() || host_ == "0.0.0.0") {
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
    } else if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw ProtocolError("cannot parse listen host " + host_);
    }
    if (::bind(listen_fd_, reinterpret_cast<struct sockaddr*>(&addr),
               sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw ProtocolError("cannot bind/listen on " + host_ + ":" +
                          std::to_string(port_));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<struct sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    log::info("agent server listening on " + host_ + ":" +
              std::to_string(port_));
  }

  // Bound port (useful when constructed with port 0).
  int port() const { return port_; }

  void wait() {
    if (accept_thread_.joinable()) accept_thread_.join();
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (listen_fd_ >= 0) {
      ::shutdown(listen_fd_, SHUT_RDWR);
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      workers.swap(workers_);
    }
    for (auto& t : workers) {
      if (t.joinable()) t.join();
    }
  }

 private:
  void accept_loop() {
    while (running_) {
      const int conn = ::accept(listen_fd_, nullptr, nullptr);
      if (conn < 0) {
        if (running_ && (errno == EINTR || errno == ECONNABORTED)) continue;
        return;
      }
      std::lock_guard<std::mutex> lock(mutex_);
      workers_.emplace_back([this, conn] {
        detail::LineChannel channel(conn, conn, /*owns=*/true, timeout_ms_);
        detail::serve_one_session(channel, factory_);
      });
    }
  }

  AgentFactory factory_;
  std::string host_;
  int port_;
  int timeout_ms_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex mutex_;
  std::vector<std::thread> workers_;
};

struct RemoteAgentOptions {
  int timeout_ms = kDefaultWireTimeoutMs;
  // When set, every line is appended as "> ..." (sent) or "< ..." (received).
  std::vector<std::string>* transcript = nullptr;
};

// Client-side proxy: runs the far side of the wire protocol and behaves as a
// local Agent. TCP endpoints open one connection per session.
class RemoteAgent : public Agent {
 public:
  explicit RemoteAgent(Endpoint endpoint, RemoteAgentOptions options = {})
      : endpoint_(std::move(endpoint)), options_(options) {}

  bool supports(const std::string&) const override { return true; }

  void begin_session(const SessionInfo& info) override {
    if (endpoint_.kind == Endpoint::Kind::kTcp) {
      const int fd = detail::connect_tcp(endpoint_.host, endpoint_.port);
      channel_ = std::make_unique<detail::LineChannel>(fd, fd, /*owns=*/true,
                                                       options_.timeout_ms);
    } else {
      channel_ = std::make_unique<detail::LineChannel>(
          0, 1, /*owns=*/false, options_.timeout_ms);
    }
    send(wire::session_start(info).dump());
  }

  void on_source(const Packet& packet) override {
    send(wire::source_segment(packet).dump());
  }

  std::optional<std::string> write(const std::string& lang,
                                   int slot) override {
    using nlohmann::json;
    send(wire::write_request(lang, slot).dump());
    const auto line = receive();
    if (!line.has_value())
      throw ProtocolError("agent closed connection during write");
    json msg;
    try {
      msg = json::parse(*line);
    } catch (const json::exception&) {
      throw ProtocolError("malformed message");
    }
    const std::string type = msg.value("type", "");
    if (type == "error")
      throw ProtocolError("agent error: " + msg.value("message", "?"));
    if (type != "token" && type != "eos")
      throw ProtocolError("unexpected reply type '" + type + "'");
    if (msg.at("lang").get<std::string>() != lang ||
        msg.at("slot").get<int>() != slot)
      throw ProtocolError("reply does not match write request");
    if (type == "eos") return std::nullopt;
    return msg.at("token").get<std::string>();
  }

  void end_session() override {
    if (!channel_) return;
    try {
      send(wire::session_end().dump());
    } catch (...) {
    }
    if (endpoint_.kind == Endpoint::Kind::kTcp) channel_.reset();
  }

 private:
  void send(const std::string& line) {
    if (!channel_) throw ProtocolError("no active session");
    channel_->write_line(line);
    if (options_.transcript != nullptr)
      options_.transcript->push_back("> " + line);
  }

  std::optional<std::string> receive() {
    if (!channel_) throw ProtocolError("no active session");
    auto line = channel_->read_line();
    if (line.has_value() && options_.transcript != nullptr)
      options_.transcript->push_back("< " + *line);
    return line;
  }

  Endpoint endpoint_;
  RemoteAgentOptions options_;
  std::unique_ptr<detail::LineChannel> channel_;
};

inline std::unique_ptr<Agent> remote_agent(const std::string& endpoint_spec,
                                           RemoteAgentOptions options = {}) {
  return std::make_unique<RemoteAgent>(parse_endpoint(endpoint_spec), options);
}

}  // namespace simulstream

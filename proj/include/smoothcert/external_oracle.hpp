#pragma once

// Oracle living in another process, reached over newline-delimited JSON
// either through a child's stdin/stdout or a TCP connection.
//
//   engine  -> {"type":"hello","protocol":1}
//   adapter -> {"type":"ready","classes":K,"input_dim":D}
//   engine  -> {"type":"classify","id":N,"count":C,"dim":D,"data":[...]}
//   adapter -> {"type":"labels","id":N,"labels":[...]}
//   engine  -> {"type":"bye"}

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoothcert/oracle.hpp"

namespace smoothcert {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TransportError : public OracleError {
 public:
  using OracleError::OracleError;
};
class HandshakeMismatch : public OracleError {
 public:
  using OracleError::OracleError;
};
class MalformedResponse : public OracleError {
 public:
  using OracleError::OracleError;
};
class OracleTimeout : public OracleError {
 public:
  using OracleError::OracleError;
};
/// The adapter answered with an {"type":"error"} object.
class RemoteError : public OracleError {
 public:
  using OracleError::OracleError;
};

struct OracleEndpoint {
  enum class Transport { subprocess, tcp };

  Transport transport = Transport::subprocess;
  std::string command;  // subprocess: run through /bin/sh -c
  std::string host;     // tcp
  std::uint16_t port = 0;
  std::size_t expected_classes = 0;  // 0 = accept what the adapter declares
  std::size_t expected_dim = 0;
  std::chrono::milliseconds handshake_timeout{10'000};
  std::chrono::milliseconds request_timeout{600'000};

  static OracleEndpoint exec(std::string cmd) {
    OracleEndpoint e;
    e.transport = Transport::subprocess;
    e.command = std::move(cmd);
    return e;
  }
  static OracleEndpoint tcp(std::string host, std::uint16_t port) {
    OracleEndpoint e;
    e.transport = Transport::tcp;
    e.host = std::move(host);
    e.port = port;
    return e;
  }
};

namespace detail {

/// Line-oriented duplex channel over a pair of file descriptors.
class LineChannel {
 public:
  LineChannel(int read_fd, int write_fd, bool is_socket)
      : read_fd_(read_fd), write_fd_(write_fd), is_socket_(is_socket) {}
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;
  ~LineChannel() { close_all(); }

  void write_line(std::string_view line) {
    std::string buf(line);
    buf.push_back('\n');
    std::size_t off = 0;
    while (off < buf.size()) {
      ssize_t n;
      if (is_socket_) {
        n = ::send(write_fd_, buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
      } else {
        n = ::write(write_fd_, buf.data() + off, buf.size() - off);
      }
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("oracle write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw OracleTimeout("oracle did not answer in time");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) throw OracleTimeout("oracle did not answer in time");
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("oracle read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        if (!buffer_.empty()) {
          throw MalformedResponse("oracle closed the stream mid-line: '" + buffer_ + "'");
        }
        throw TransportError("oracle closed the connection");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void close_write() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

 private:
  void close_all() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
  }

  int read_fd_;
  int write_fd_;
  bool is_socket_;
  std::string buffer_;
};

inline void append_double(std::string& out, double v) {
  if (!std::isfinite(v)) throw DomainError("cannot serialize non-finite value to the oracle");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

}  // namespace detail

/// Serializes a classify request; floats use the shortest round-trip form.
inline std::string encode_classify_request(std::uint64_t id, std::size_t count, std::size_t dim,
                                           std::span<const double> data) {
  std::string s;
  s.reserve(64 + data.size() * 20);
  s += R"({"type":"classify","id":)";
  s += std::to_string(id);
  s += R"(,"count":)";
  s += std::to_string(count);
  s += R"(,"dim":)";
  s += std::to_string(dim);
  s += R"(,"data":[)";
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i) s.push_back(',');
    detail::append_double(s, data[i]);
  }
  s += "]}";
  return s;
}

/// Parses a labels response, checking id, count and label range.
inline std::vector<int> decode_labels_response(const std::string& line, std::uint64_t id,
                                               std::size_t count, std::size_t classes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedResponse(std::string("unparseable oracle response: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw MalformedResponse("oracle response lacks a type field");
  }
  const auto type = j["type"].get<std::string>();
  if (type == "error") {
    throw RemoteError("oracle reported error: " + j.value("msg", std::string("<no msg>")));
  }
  if (type != "labels") throw MalformedResponse("unexpected response type '" + type + "'");
  if (!j.contains("id") || !j["id"].is_number_unsigned() || j["id"].get<std::uint64_t>() != id) {
    throw MalformedResponse("response id does not match request " + std::to_string(id));
  }
  if (!j.contains("labels") || !j["labels"].is_array() || j["labels"].size() != count) {
    throw MalformedResponse("response must carry exactly " + std::to_string(count) + " labels");
  }
  std::vector<int> labels;
  labels.reserve(count);
  for (const auto& v : j["labels"]) {
    if (!v.is_number_integer()) throw MalformedResponse("non-integer label");
    const auto l = v.get<long long>();
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw MalformedResponse("label " + std::to_string(l) + " out of range");
    }
    labels.push_back(static_cast<int>(l));
  }
  return labels;
}

/// Client side of the wire protocol. One outstanding request at a time; the
/// object is owned by a single worker.
class ExternalOracle final : public ClassifierOracle {
 public:
  explicit ExternalOracle(OracleEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    try {
      connect();
      handshake();
    } catch (...) {
      channel_.reset();
      if (child_ > 0) {
        ::kill(child_, SIGKILL);
        ::waitpid(child_, nullptr, 0);
        child_ = -1;
      }
      throw;
    }
  }

  ExternalOracle(const ExternalOracle&) = delete;
  ExternalOracle& operator=(const ExternalOracle&) = delete;

  ~ExternalOracle() override {
    try {
      if (channel_) channel_->write_line(R"({"type":"bye"})");
    } catch (...) {
    }
    if (channel_) channel_->close_write();
    channel_.reset();
    reap_child();
  }

  std::size_t num_classes() const override { return classes_; }
  std::size_t input_dim() const override { return dim_; }
  const OracleEndpoint& endpoint() const { return endpoint_; }

  std::vector<int> classify_batch(std::span<const double> batch) override {
    const std::size_t count = rows_in(batch);
    const std::uint64_t id = next_id_++;
    channel_->write_line(encode_classify_request(id, count, dim_, batch));
    return decode_labels_response(channel_->read_line(endpoint_.request_timeout), id, count,
                                  classes_);
  }

  std::shared_ptr<VoteOracle> worker_handle() override {
    OracleEndpoint e = endpoint_;
    e.expected_classes = classes_;
    e.expected_dim = dim_;
    return std::make_shared<ExternalOracle>(std::move(e));
  }

 private:
  void connect() {
    if (endpoint_.transport == OracleEndpoint::Transport::subprocess) {
      spawn();
    } else {
      dial();
    }
  }

  void spawn() {
    // A dead adapter must surface as a write error, not kill the engine.
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw TransportError("pipe() failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw TransportError("pipe() failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork() failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", endpoint_.command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
    child_ = pid;
    channel_ = std::make_unique<detail::LineChannel>(from_child[0], to_child[1], false);
  }

  void dial() {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port = std::to_string(endpoint_.port);
    if (const int rc = ::getaddrinfo(endpoint_.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw TransportError("cannot resolve " + endpoint_.host + ": " + ::gai_strerror(rc));
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
    if (fd < 0) {
      throw TransportError("cannot connect to " + endpoint_.host + ":" + port);
    }
    channel_ = std::make_unique<detail::LineChannel>(fd, fd, true);
  }

  void handshake() {
    channel_->write_line(R"({"type":"hello","protocol":1})");
    const std::string line = channel_->read_line(endpoint_.handshake_timeout);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedResponse(std::string("unparseable handshake: ") + e.what());
    }
    if (!j.is_object() || j.value("type", std::string()) != "ready" || !j.contains("classes") ||
        !j.contains("input_dim") || !j["classes"].is_number_integer() ||
        !j["input_dim"].is_number_integer()) {
      throw MalformedResponse("handshake reply is not a ready object: " + line);
    }
    const auto classes = j["classes"].get<long long>();
    const auto dim = j["input_dim"].get<long long>();
    if (classes < 1 || dim < 1) throw MalformedResponse("handshake declares empty shapes");
    classes_ = static_cast<std::size_t>(classes);
    dim_ = static_cast<std::size_t>(dim);
    if (endpoint_.expected_classes != 0 && classes_ != endpoint_.expected_classes) {
      throw HandshakeMismatch("adapter declares " + std::to_string(classes_) +
                              " classes, expected " + std::to_string(endpoint_.expected_classes));
    }
    if (endpoint_.expected_dim != 0 && dim_ != endpoint_.expected_dim) {
      throw HandshakeMismatch("adapter declares input_dim " + std::to_string(dim_) +
                              ", expected " + std::to_string(endpoint_.expected_dim));
    }
  }

  void reap_child() {
    if (child_ <= 0) return;
    // Give the adapter a moment to exit on its own after "bye".
    for (int i = 0; i < 200; ++i) {
      int status = 0;
      const pid_t r = ::waitpid(child_, &status, WNOHANG);
      if (r == child_ || r < 0) {
        child_ = -1;
        return;
      }
      ::usleep(5'000);
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, nullptr, 0);
    child_ = -1;
  }

  OracleEndpoint endpoint_;
  std::unique_ptr<detail::LineChannel> channel_;
  pid_t child_ = -1;
  std::size_t classes_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t next_id_ = 1;
};

inline std::shared_ptr<ExternalOracle> external_oracle(OracleEndpoint endpoint) {
  return std::make_shared<ExternalOracle>(std::move(endpoint));
}

}  // namespace smoothcert

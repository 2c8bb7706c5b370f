#include "blipmeta/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <set>
#include <thread>

#include "blipmeta/error.hpp"
#include "json.hpp"

namespace blipmeta {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = other.release();
    }
    return *this;
  }
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

[[noreturn]] void throw_errno(const std::string& what) {
  throw Error(ErrorCode::io_error, what + ": " + std::strerror(errno));
}

void wait_readable(int fd, Clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw Error(ErrorCode::timeout, "timed out waiting for data");
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (rc > 0) return;
    if (rc < 0 && errno != EINTR) throw_errno("poll");
  }
}

// Reads exactly n bytes; false on EOF before the first byte.
bool read_exact(int fd, char* buffer, std::size_t n, Clock::time_point deadline) {
  std::size_t done = 0;
  while (done < n) {
    wait_readable(fd, deadline);
    const ssize_t got = ::recv(fd, buffer + done, n - done, 0);
    if (got == 0) {
      if (done == 0) return false;
      throw Error(ErrorCode::protocol_error, "connection closed inside a frame");
    }
    if (got < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    done += static_cast<std::size_t>(got);
  }
  return true;
}

json message(std::string_view type, std::string code = {}, std::string detail = {}) {
  json doc{{"type", type}};
  if (!code.empty()) doc["code"] = code;
  if (!detail.empty()) doc["detail"] = detail;
  return doc;
}

json parse_message(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::protocol_error, std::string("frame is not JSON: ") + e.what());
  }
}

}  // namespace

std::chrono::milliseconds default_timeout() {
  if (const char* env = std::getenv("BLIPMETA_TIMEOUT_SECS")) {
    char* end = nullptr;
    const double secs = std::strtod(env, &end);
    if (end != env && secs > 0.0) return std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
  }
  return std::chrono::seconds(30);
}

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) throw Error(ErrorCode::protocol_error, "frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string frame;
  frame.reserve(4 + payload.size());
  for (int shift = 24; shift >= 0; shift -= 8) frame.push_back(static_cast<char>((n >> shift) & 0xff));
  frame.append(payload);
  return frame;
}

void write_frame(int fd, std::string_view payload) {
  const std::string frame = encode_frame(payload);
  std::size_t done = 0;
  while (done < frame.size()) {
    const ssize_t sent = ::send(fd, frame.data() + done, frame.size() - done, MSG_NOSIGNAL);
    if (sent < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    done += static_cast<std::size_t>(sent);
  }
}

std::optional<std::string> read_frame(int fd, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  unsigned char header[4];
  if (!read_exact(fd, reinterpret_cast<char*>(header), 4, deadline)) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFrameBytes) throw Error(ErrorCode::protocol_error, "frame too large");
  std::string payload(n, '\0');
  if (n > 0 && !read_exact(fd, payload.data(), n, deadline)) {
    throw Error(ErrorCode::protocol_error, "connection closed inside a frame");
  }
  return payload;
}

Collector::Collector(CollectOptions options) : options_(std::move(options)) {
  if (options_.expect < 1) throw Error(ErrorCode::invalid_argument, "expect at least one site");
  Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (sock.get() < 0) throw_errno("socket");
  const int yes = 1;
  ::setsockopt(sock.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(options_.port));
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::invalid_argument, "bad listen address '" + options_.host + "'");
  }
  if (::bind(sock.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) throw_errno("bind");
  if (::listen(sock.get(), 64) < 0) throw_errno("listen");
  socklen_t len = sizeof addr;
  ::getsockname(sock.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listen_fd_ = sock.release();
}

Collector::~Collector() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

CollectResult Collector::run() {
  std::mutex mutex;
  CollectResult result;
  std::set<std::string> sites;
  auto last_progress = Clock::now();
  bool stopping = false;

  auto session = [&](Socket conn) {
    try {
      auto hello_text = read_frame(conn.get(), options_.timeout);
      if (!hello_text) return;
      const json hello = parse_message(*hello_text);
      if (hello.value("type", "") != "HELLO") {
        write_frame(conn.get(), message("NACK", "MALFORMED", "expected HELLO").dump());
        return;
      }
      if (hello.value("protocol_version", -1) != kProtocolVersion) {
        write_frame(conn.get(), message("NACK", std::string(to_string(RejectCode::version_mismatch))).dump());
        return;
      }
      if (hello.value("fingerprint", "") != options_.fingerprint) {
        write_frame(conn.get(), message("NACK", std::string(to_string(RejectCode::model_mismatch))).dump());
        return;
      }
      write_frame(conn.get(), message("ACK").dump());
      for (;;) {
        auto frame = read_frame(conn.get(), options_.timeout);
        if (!frame) return;
        if (frame->find("\"type\"") != std::string::npos) {
          const json msg = parse_message(*frame);
          if (msg.value("type", "") == "BYE") return;
        }
        SummaryValidation check = validate_summary(*frame, options_.fingerprint);
        json reply;
        {
          std::lock_guard lock(mutex);
          if (!check.accepted()) {
            reply = message("NACK", std::string(to_string(check.code)), check.detail);
            result.rejections.push_back(std::string(to_string(check.code)) + ": " + check.detail);
          } else if (stopping || !sites.insert(check.summary->site_id).second ||
                     static_cast<int>(result.summaries.size()) >= options_.expect) {
            const std::string detail = "site '" + check.summary->site_id + "' already registered";
            reply = message("NACK", std::string(to_string(RejectCode::duplicate_site)), detail);
            result.rejections.push_back("DUPLICATE_SITE: " + detail);
          } else {
            result.summaries.push_back(std::move(*check.summary));
            last_progress = Clock::now();
            reply = message("ACK");
          }
        }
        write_frame(conn.get(), reply.dump());
      }
    } catch (const Error& e) {
      std::lock_guard lock(mutex);
      result.rejections.push_back(e.what());
    }
  };

  std::vector<std::thread> workers;
  for (;;) {
    {
      std::lock_guard lock(mutex);
      if (static_cast<int>(result.summaries.size()) >= options_.expect) break;
      if (Clock::now() - last_progress > options_.timeout) break;
    }
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 50);
    if (rc < 0 && errno != EINTR) throw_errno("poll");
    if (rc > 0) {
      Socket conn(::accept(listen_fd_, nullptr, nullptr));
      if (conn.get() >= 0) workers.emplace_back(session, std::move(conn));
    }
  }
  {
    std::lock_guard lock(mutex);
    stopping = true;
  }
  for (auto& w : workers) w.join();

  std::sort(result.summaries.begin(), result.summaries.end(),
            [](const SiteSummary& a, const SiteSummary& b) { return a.site_id < b.site_id; });
  result.missing = std::max(0, options_.expect - static_cast<int>(result.summaries.size()));
  if (result.missing > 0 && !options_.allow_partial) {
    throw Error(ErrorCode::timeout, std::to_string(result.missing) + " of " +
                                        std::to_string(options_.expect) +
                                        " sites did not deliver a summary in time");
  }
  return result;
}

std::vector<SendOutcome> send_summaries(const std::string& host, int port,
                                        const std::string& fingerprint,
                                        const std::vector<SiteSummary>& summaries,
                                        std::chrono::milliseconds timeout, int protocol_version) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &found) != 0 || !found) {
    throw Error(ErrorCode::io_error, "cannot resolve '" + host + "'");
  }
  Socket conn(::socket(found->ai_family, found->ai_socktype, found->ai_protocol));
  const int rc = conn.get() >= 0 ? ::connect(conn.get(), found->ai_addr, found->ai_addrlen) : -1;
  ::freeaddrinfo(found);
  if (rc < 0) throw_errno("connect to " + host + ":" + std::to_string(port));

  const json hello{{"type", "HELLO"}, {"protocol_version", protocol_version}, {"fingerprint", fingerprint}};
  write_frame(conn.get(), hello.dump());
  auto reply_text = read_frame(conn.get(), timeout);
  if (!reply_text) throw Error(ErrorCode::protocol_error, "coordinator closed the session");
  const json reply = parse_message(*reply_text);
  if (reply.value("type", "") != "ACK") {
    throw Error(ErrorCode::protocol_error, "session refused: " + reply.value("code", std::string("?")));
  }
  std::vector<SendOutcome> outcomes;
  for (const auto& summary : summaries) {
    write_frame(conn.get(), encode_summary(summary));
    auto answer_text = read_frame(conn.get(), timeout);
    if (!answer_text) throw Error(ErrorCode::protocol_error, "coordinator closed the session");
    const json answer = parse_message(*answer_text);
    outcomes.push_back({summary.site_id, answer.value("type", "") == "ACK",
                        answer.value("code", std::string())});
  }
  write_frame(conn.get(), message("BYE").dump());
  return outcomes;
}

}  // namespace blipmeta

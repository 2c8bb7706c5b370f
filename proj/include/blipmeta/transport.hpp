#ifndef BLIPMETA_TRANSPORT_HPP_
#define BLIPMETA_TRANSPORT_HPP_

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blipmeta/federation.hpp"

namespace blipmeta {

/// Wire frame: 4-byte big-endian payload length, then the payload.
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

/// BLIPMETA_TIMEOUT_SECS when set to a positive number, else 30 s.
std::chrono::milliseconds default_timeout();

std::string encode_frame(std::string_view payload);
void write_frame(int fd, std::string_view payload);
/// Throws Error(timeout) when nothing arrives within `timeout` and
/// Error(protocol_error) on a short or oversized frame; nullopt on clean EOF.
std::optional<std::string> read_frame(int fd, std::chrono::milliseconds timeout);

struct CollectOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  int expect = 1;
  std::string fingerprint;
  std::chrono::milliseconds timeout = default_timeout();
  bool allow_partial = false;
};

struct CollectResult {
  std::vector<SiteSummary> summaries;  // sorted by site id
  std::vector<std::string> rejections;
  int missing = 0;
};

/// Coordinator endpoint. Sites connect, send HELLO {type, protocol_version,
/// fingerprint}, then one frame per summary and a BYE frame; each frame is
/// answered with ACK or NACK {code}. Registration is serialized; duplicates
/// are NACKed with DUPLICATE_SITE.
class Collector {
 public:
  explicit Collector(CollectOptions options);
  ~Collector();
  Collector(const Collector&) = delete;
  Collector& operator=(const Collector&) = delete;

  int port() const { return port_; }
  /// Returns once `expect` summaries are accepted. When no summary arrives
  /// for `timeout`, returns the partial set if allowed, else throws
  /// Error(timeout).
  CollectResult run();

 private:
  CollectOptions options_;
  int listen_fd_ = -1;
  int port_ = 0;
};

struct SendOutcome {
  std::string site_id;
  bool accepted = false;
  std::string code;
};

/// Site endpoint: pushes summaries to a coordinator. Throws
/// Error(protocol_error) when the HELLO is refused.
std::vector<SendOutcome> send_summaries(const std::string& host, int port,
                                        const std::string& fingerprint,
                                        const std::vector<SiteSummary>& summaries,
                                        std::chrono::milliseconds timeout = default_timeout(),
                                        int protocol_version = kProtocolVersion);

}  // namespace blipmeta

#endif  // BLIPMETA_TRANSPORT_HPP_

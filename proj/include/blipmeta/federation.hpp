#ifndef BLIPMETA_FEDERATION_HPP_
#define BLIPMETA_FEDERATION_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blipmeta {

inline constexpr int kProtocolVersion = 1;

struct MapWeight {
  int psi_index = 0;
  double weight = 0.0;

  friend bool operator==(const MapWeight&, const MapWeight&) = default;
};

/// One transmitted estimable blip coefficient and the global psi combination
/// it estimates.
struct SummaryEntry {
  std::string label;
  double estimate = 0.0;
  double sd = 0.0;
  std::vector<MapWeight> map_row;

  friend bool operator==(const SummaryEntry&, const SummaryEntry&) = default;
};

/// Everything a site discloses: aggregate coefficient estimates only.
struct SiteSummary {
  int protocol_version = kProtocolVersion;
  std::string site_id;
  std::string model_fingerprint;
  std::vector<std::string> psi_labels;
  int n_obs = 0;
  int dof = 0;
  std::vector<SummaryEntry> entries;

  friend bool operator==(const SiteSummary&, const SiteSummary&) = default;
};

/// Entries sorted by label, map rows sorted by psi index.
SiteSummary canonicalize(SiteSummary summary);

/// UTF-8 JSON with sorted keys and shortest round-trip floats. The output of
/// canonicalize() and encode_summary() is byte-stable.
std::string encode_summary(const SiteSummary& summary);
/// Structural decode only; throws Error(parse_error) on malformed input.
SiteSummary decode_summary(std::string_view document);

enum class RejectCode {
  malformed,
  version_mismatch,
  model_mismatch,
  degenerate_sd,
  bad_map_row,
  duplicate_site,
};

std::string_view to_string(RejectCode code);

struct SummaryValidation {
  std::optional<SiteSummary> summary;
  RejectCode code = RejectCode::malformed;
  std::string detail;

  bool accepted() const { return summary.has_value(); }
};

SummaryValidation validate_summary(std::string_view document,
                                   const std::string& expected_fingerprint);

/// Reads every `*.summary.json` in `directory` (sorted by file name), validates
/// each, and rejects duplicate site ids. Throws Error(protocol_error) on the
/// first rejection.
std::vector<SiteSummary> load_summary_directory(const std::string& directory,
                                                const std::string& expected_fingerprint);

/// Number of measured scalars a summary discloses (header integers plus an
/// estimate and sd per entry).
int transmitted_scalar_count(const SiteSummary& summary);

}  // namespace blipmeta

#endif  // BLIPMETA_FEDERATION_HPP_

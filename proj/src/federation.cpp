#include "blipmeta/federation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "json.hpp"

namespace blipmeta {

using nlohmann::json;

SiteSummary canonicalize(SiteSummary summary) {
  for (auto& entry : summary.entries) {
    std::sort(entry.map_row.begin(), entry.map_row.end(),
              [](const MapWeight& a, const MapWeight& b) { return a.psi_index < b.psi_index; });
  }
  std::sort(summary.entries.begin(), summary.entries.end(),
            [](const SummaryEntry& a, const SummaryEntry& b) { return a.label < b.label; });
  return summary;
}

std::string encode_summary(const SiteSummary& input) {
  const SiteSummary summary = canonicalize(input);
  json doc;
  doc["protocol_version"] = summary.protocol_version;
  doc["site_id"] = summary.site_id;
  doc["model_fingerprint"] = summary.model_fingerprint;
  doc["psi_labels"] = summary.psi_labels;
  doc["n_obs"] = summary.n_obs;
  doc["dof"] = summary.dof;
  json entries = json::array();
  for (const auto& entry : summary.entries) {
    json row = json::array();
    for (const auto& w : entry.map_row) {
      row.push_back({{"psi_index", w.psi_index}, {"weight", w.weight}});
    }
    entries.push_back(
        {{"label", entry.label}, {"estimate", entry.estimate}, {"sd", entry.sd}, {"map_row", row}});
  }
  doc["entries"] = entries;
  // nlohmann::json keeps object keys in std::map order and prints doubles
  // with the shortest round-trip representation.
  return doc.dump();
}

SiteSummary decode_summary(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("summary is not JSON: ") + e.what());
  }
  try {
    SiteSummary summary;
    summary.protocol_version = doc.at("protocol_version").get<int>();
    summary.site_id = doc.at("site_id").get<std::string>();
    summary.model_fingerprint = doc.at("model_fingerprint").get<std::string>();
    summary.psi_labels = doc.at("psi_labels").get<std::vector<std::string>>();
    summary.n_obs = doc.at("n_obs").get<int>();
    summary.dof = doc.at("dof").get<int>();
    for (const auto& item : doc.at("entries")) {
      SummaryEntry entry;
      entry.label = item.at("label").get<std::string>();
      entry.estimate = item.at("estimate").get<double>();
      entry.sd = item.at("sd").get<double>();
      for (const auto& w : item.at("map_row")) {
        entry.map_row.push_back({w.at("psi_index").get<int>(), w.at("weight").get<double>()});
      }
      summary.entries.push_back(std::move(entry));
    }
    return summary;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("summary schema violation: ") + e.what());
  }
}

std::string_view to_string(RejectCode code) {
  switch (code) {
    case RejectCode::malformed: return "MALFORMED";
    case RejectCode::version_mismatch: return "VERSION_MISMATCH";
    case RejectCode::model_mismatch: return "MODEL_MISMATCH";
    case RejectCode::degenerate_sd: return "DEGENERATE_SD";
    case RejectCode::bad_map_row: return "BAD_MAP_ROW";
    case RejectCode::duplicate_site: return "DUPLICATE_SITE";
  }
  return "UNKNOWN";
}

SummaryValidation validate_summary(std::string_view document,
                                   const std::string& expected_fingerprint) {
  SummaryValidation result;
  auto reject = [&](RejectCode code, std::string detail) {
    result.code = code;
    result.detail = std::move(detail);
    return result;
  };

  SiteSummary summary;
  try {
    summary = decode_summary(document);
  } catch (const Error& e) {
    return reject(RejectCode::malformed, e.what());
  }
  if (summary.protocol_version != kProtocolVersion) {
    return reject(RejectCode::version_mismatch,
                  "protocol version " + std::to_string(summary.protocol_version));
  }
  if (summary.model_fingerprint != expected_fingerprint) {
    return reject(RejectCode::model_mismatch, "fingerprint " + summary.model_fingerprint +
                                                  " != expected " + expected_fingerprint);
  }
  if (summary.site_id.empty() || summary.n_obs < 1 || summary.dof < 1 ||
      summary.psi_labels.empty()) {
    return reject(RejectCode::malformed, "missing site id, sample size or psi labels");
  }
  std::set<std::string> labels;
  const int psi_count = static_cast<int>(summary.psi_labels.size());
  for (const auto& entry : summary.entries) {
    if (!labels.insert(entry.label).second) {
      return reject(RejectCode::malformed, "duplicate entry '" + entry.label + "'");
    }
    if (!std::isfinite(entry.estimate)) {
      return reject(RejectCode::malformed, "non-finite estimate for '" + entry.label + "'");
    }
    if (!(entry.sd > 0.0) || !std::isfinite(entry.sd)) {
      return reject(RejectCode::degenerate_sd, "sd of '" + entry.label + "' is not positive");
    }
    std::set<int> seen;
    bool nonzero = false;
    for (const auto& w : entry.map_row) {
      if (w.psi_index < 0 || w.psi_index >= psi_count || !seen.insert(w.psi_index).second ||
          !std::isfinite(w.weight)) {
        return reject(RejectCode::bad_map_row, "invalid map row for '" + entry.label + "'");
      }
      nonzero = nonzero || w.weight != 0.0;
    }
    if (!nonzero) {
      return reject(RejectCode::bad_map_row, "zero map row for '" + entry.label + "'");
    }
  }
  if (summary.entries.empty()) {
    return reject(RejectCode::malformed, "summary carries no entries");
  }
  result.summary = canonicalize(std::move(summary));
  return result;
}

std::vector<SiteSummary> load_summary_directory(const std::string& directory,
                                                const std::string& expected_fingerprint) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) {
    throw Error(ErrorCode::io_error, "'" + directory + "' is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto& item : fs::directory_iterator(directory)) {
    const auto name = item.path().filename().string();
    const std::string suffix = ".summary.json";
    if (item.is_regular_file() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      files.push_back(item.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<SiteSummary> summaries;
  std::set<std::string> sites;
  for (const auto& file : files) {
    auto check = validate_summary(read_text_file(file.string()), expected_fingerprint);
    if (!check.accepted()) {
      throw Error(ErrorCode::protocol_error, file.string() + ": " +
                                                 std::string(to_string(check.code)) + ": " +
                                                 check.detail);
    }
    if (!sites.insert(check.summary->site_id).second) {
      throw Error(ErrorCode::protocol_error,
                  file.string() + ": " + std::string(to_string(RejectCode::duplicate_site)) +
                      ": site '" + check.summary->site_id + "' already loaded");
    }
    summaries.push_back(std::move(*check.summary));
  }
  return summaries;
}

int transmitted_scalar_count(const SiteSummary& summary) {
  // protocol_version, n_obs, dof, then estimate + sd per entry. Map weights
  // are structural integers fixed by the sparsity pattern, not measurements.
  return 3 + 2 * static_cast<int>(summary.entries.size());
}

}  // namespace blipmeta

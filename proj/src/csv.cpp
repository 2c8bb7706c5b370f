#include "blipmeta/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "blipmeta/error.hpp"

namespace blipmeta {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

}  // namespace

NumericTable parse_numeric_csv(std::string_view text, const std::string& origin) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(start, nl - start));
    if (!line.empty()) lines.push_back(line);
    start = nl + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::parse_error, origin + ": empty CSV");

  NumericTable table;
  for (auto cell : split(lines.front())) table.header.emplace_back(cell);
  const auto width = static_cast<Eigen::Index>(table.header.size());
  table.values.resize(static_cast<Eigen::Index>(lines.size() - 1), width);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cells = split(lines[r]);
    if (static_cast<Eigen::Index>(cells.size()) != width) {
      throw Error(ErrorCode::parse_error,
                  origin + ": row " + std::to_string(r + 1) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(width));
    }
    for (Eigen::Index c = 0; c < width; ++c) {
      auto cell = cells[static_cast<std::size_t>(c)];
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::parse_error, origin + ": row " + std::to_string(r + 1) +
                                                ": '" + std::string(cell) +
                                                "' is not a number");
      }
      table.values(static_cast<Eigen::Index>(r - 1), c) = value;
    }
  }
  return table;
}

NumericTable read_numeric_csv(const std::string& path) {
  return parse_numeric_csv(read_text_file(path), path);
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[32];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

std::string format_numeric_csv(const NumericTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c) out += ',';
    out += table.header[c];
  }
  out += '\n';
  for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      if (c) out += ',';
      out += format_double(table.values(r, c));
    }
    out += '\n';
  }
  return out;
}

void write_numeric_csv(const std::string& path, const NumericTable& table) {
  write_text_file(path, format_numeric_csv(table));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::io_error, "short write to '" + path + "'");
}

}  // namespace blipmeta

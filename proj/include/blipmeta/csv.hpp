#ifndef BLIPMETA_CSV_HPP_
#define BLIPMETA_CSV_HPP_

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

namespace blipmeta {

struct NumericTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

NumericTable read_numeric_csv(const std::string& path);
NumericTable parse_numeric_csv(std::string_view text, const std::string& origin = "<memory>");
void write_numeric_csv(const std::string& path, const NumericTable& table);
std::string format_numeric_csv(const NumericTable& table);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace blipmeta

#endif  // BLIPMETA_CSV_HPP_

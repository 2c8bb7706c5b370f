#ifndef BLIPMETA_ERROR_HPP_
#define BLIPMETA_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace blipmeta {

enum class ErrorCode {
  invalid_argument,
  invalid_model,
  missing_column,
  non_finite_value,
  invalid_indicator,
  degenerate_site,
  saturated_fit,
  unmappable_sparsity,
  degenerate_sd,
  not_positive_definite,
  improper_posterior,
  undefined_rule,
  heterogeneity_out_of_range,
  io_error,
  parse_error,
  protocol_error,
  timeout,
  study_aborted,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the toolkit carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace blipmeta

#endif  // BLIPMETA_ERROR_HPP_

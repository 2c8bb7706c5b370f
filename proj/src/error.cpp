#include "blipmeta/error.hpp"

namespace blipmeta {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "INVALID_ARGUMENT";
    case ErrorCode::invalid_model: return "INVALID_MODEL";
    case ErrorCode::missing_column: return "MISSING_COLUMN";
    case ErrorCode::non_finite_value: return "NON_FINITE_VALUE";
    case ErrorCode::invalid_indicator: return "INVALID_INDICATOR";
    case ErrorCode::degenerate_site: return "DEGENERATE_SITE";
    case ErrorCode::saturated_fit: return "SATURATED_FIT";
    case ErrorCode::unmappable_sparsity: return "UNMAPPABLE_SPARSITY";
    case ErrorCode::degenerate_sd: return "DEGENERATE_SD";
    case ErrorCode::not_positive_definite: return "NOT_POSITIVE_DEFINITE";
    case ErrorCode::improper_posterior: return "IMPROPER_POSTERIOR";
    case ErrorCode::undefined_rule: return "UNDEFINED_RULE";
    case ErrorCode::heterogeneity_out_of_range: return "HETEROGENEITY_OUT_OF_RANGE";
    case ErrorCode::io_error: return "IO_ERROR";
    case ErrorCode::parse_error: return "PARSE_ERROR";
    case ErrorCode::protocol_error: return "PROTOCOL_ERROR";
    case ErrorCode::timeout: return "TIMEOUT";
    case ErrorCode::study_aborted: return "STUDY_ABORTED";
  }
  return "UNKNOWN";
}

}  // namespace blipmeta

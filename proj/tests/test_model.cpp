#include <cmath>
#include <filesystem>

#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "blipmeta/model.hpp"
#include "doctest.h"

using namespace blipmeta;

namespace {

ModelSpec binary_spec() {
  return ModelSpec(TreatmentKind::binary,
                   {Term::intercept(), Term::numeric("x1"), Term::indicator("x2")},
                   {Term::intercept(), Term::numeric("x1")});
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::invalid_argument;
}

SiteDataset tiny_site() {
  SiteDataset d;
  d.site_id = "s";
  d.column_names = {"x1", "x2"};
  d.covariates.resize(4, 2);
  d.covariates << 1, 0, 2, 1, 3, 0, 4, 1;
  d.treatment = Eigen::Vector4d(0, 1, 1, 0);
  d.outcome = Eigen::Vector4d(1, 2, 3, 4);
  return d;
}

}  // namespace

TEST_CASE("psi labels run linear block then quadratic block") {
  const ModelSpec spec(TreatmentKind::continuous_quadratic,
                       {Term::intercept(), Term::numeric("x1")},
                       {Term::intercept(), Term::numeric("x1")},
                       {Term::intercept(), Term::numeric("x1")});
  CHECK(spec.psi_count() == 4);
  CHECK(spec.psi_label(0) == "a");
  CHECK(spec.psi_label(1) == "a:x1");
  CHECK(spec.psi_label(2) == "a2");
  CHECK(spec.psi_label(3) == "a2:x1");
  CHECK(spec.is_main_effect(0));
  CHECK(spec.is_main_effect(2));
  CHECK_FALSE(spec.is_main_effect(3));
  for (int t = 0; t < spec.psi_count(); ++t) {
    CHECK(spec.psi_index(spec.psi_coefficient(t)) == t);
  }
  CHECK(spec.psi_index({CoefficientKind::treatment_free, 1}) == -1);
}

TEST_CASE("model invariants are enforced") {
  using V = std::vector<Term>;
  const auto bad = [](auto make) { return code_of([&] { make(); }); };
  CHECK(bad([] { ModelSpec(TreatmentKind::binary, {Term::intercept()}, {Term::numeric("x1")}); }) ==
        ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::binary, V{Term::intercept()}, V{Term::intercept(), Term::numeric("x1")});
        }) == ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::binary, V{Term::intercept()}, V{Term::intercept()}, V{Term::intercept()});
        }) == ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::continuous_quadratic, V{Term::intercept()}, V{Term::intercept()}, V{});
        }) == ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::binary, V{Term::intercept(), Term::numeric("x"), Term::indicator("x")},
                    V{Term::intercept()});
        }) == ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::binary, V{Term::intercept(), Term::numeric("a")}, V{Term::intercept()});
        }) == ErrorCode::invalid_model);
  CHECK(bad([] {
          ModelSpec(TreatmentKind::binary, V{Term::intercept(), Term::intercept()}, V{Term::intercept()});
        }) == ErrorCode::invalid_model);
}

TEST_CASE("fingerprint is stable and sensitive to the model") {
  const auto a = binary_spec();
  const auto b = binary_spec();
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  const ModelSpec c(TreatmentKind::binary, {Term::intercept(), Term::numeric("x1")},
                    {Term::intercept(), Term::numeric("x1")});
  CHECK(a.fingerprint() != c.fingerprint());
  // FNV-1a reference values.
  CHECK(fnv1a64_hex("") == "cbf29ce484222325");
  CHECK(fnv1a64_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("design matrix multiplies blip terms by treatment") {
  const auto spec = binary_spec();
  const auto d = tiny_site();
  const auto design = build_design_matrix(spec, d);
  REQUIRE(design.cols() == 5);
  CHECK(design.labels[3] == "a");
  CHECK(design.labels[4] == "a:x1");
  for (int r = 0; r < 4; ++r) {
    CHECK(design.x(r, 0) == 1.0);
    CHECK(design.x(r, 1) == d.covariates(r, 0));
    CHECK(design.x(r, 2) == d.covariates(r, 1));
    CHECK(design.x(r, 3) == d.treatment[r]);
    CHECK(design.x(r, 4) == d.treatment[r] * d.covariates(r, 0));
  }
}

TEST_CASE("quadratic design columns use a squared") {
  const ModelSpec spec(TreatmentKind::continuous_quadratic, {Term::intercept(), Term::numeric("x1")},
                       {Term::intercept(), Term::numeric("x1")}, {Term::intercept()});
  auto d = tiny_site();
  d.treatment = Eigen::Vector4d(0.5, -1, 2, 3);
  const auto design = build_design_matrix(spec, d);
  REQUIRE(design.cols() == 5);
  for (int r = 0; r < 4; ++r) CHECK(design.x(r, 4) == d.treatment[r] * d.treatment[r]);
}

TEST_CASE("dataset validation reports the failing condition") {
  const auto spec = binary_spec();
  auto d = tiny_site();
  validate_dataset(spec, d);
  auto nan = d;
  nan.outcome[1] = NAN;
  CHECK(code_of([&] { validate_dataset(spec, nan); }) == ErrorCode::non_finite_value);
  auto ind = d;
  ind.covariates(0, 1) = 0.5;
  CHECK(code_of([&] { validate_dataset(spec, ind); }) == ErrorCode::invalid_indicator);
  auto missing = d;
  missing.column_names = {"x1", "z"};
  CHECK(code_of([&] { validate_dataset(spec, missing); }) == ErrorCode::missing_column);
  auto treat = d;
  treat.treatment[0] = 2.0;
  CHECK_THROWS_AS(validate_dataset(spec, treat), Error);
}

TEST_CASE("site CSV round trip") {
  const auto spec = binary_spec();
  const auto d = tiny_site();
  const auto path = std::filesystem::temp_directory_path() / "blipmeta_site_roundtrip.csv";
  write_site_csv(path.string(), spec, d);
  const auto back = read_site_csv(path.string(), spec, "s");
  CHECK(back.covariates == d.covariates);
  CHECK(back.treatment == d.treatment);
  CHECK(back.outcome == d.outcome);
  std::filesystem::remove(path);
}

TEST_CASE("numeric CSV parsing and shortest doubles") {
  const auto table = parse_numeric_csv("a,b\n1,2.5\n-3,1e-3\n");
  CHECK(table.header == std::vector<std::string>{"a", "b"});
  CHECK(table.values(1, 1) == 1e-3);
  CHECK(code_of([] { parse_numeric_csv("a,b\n1\n"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_numeric_csv("a\nfoo\n"); }) == ErrorCode::parse_error);
  for (double x : {0.1, 1.0 / 3.0, 2.5, -1e-300, 123456789.123}) {
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(code_of([] { read_text_file("/nonexistent/blipmeta"); }) == ErrorCode::io_error);
}

TEST_CASE("error messages carry the code name") {
  const Error e(ErrorCode::degenerate_sd, "x");
  CHECK(std::string(e.what()).rfind("DEGENERATE_SD", 0) == 0);
}

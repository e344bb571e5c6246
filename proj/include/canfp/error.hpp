#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace canfp {

enum class Errc {
  malformed_line,
  length_mismatch,
  id_out_of_range,
  io_failure,
  empty_intersection,
  too_few_points,
  window_too_long,
  sample_too_short,
  trace_too_short,
  empty_class,
  filter_too_long,
  shape_mismatch,
  degenerate_batch,
  label_out_of_range,
  non_finite_value,
  config_infeasible,
  empty_dataset,
  inconsistent_experts,
  missing_channel,
  empty_input,
  not_enough_subsets,
  missing_meta,
  hash_mismatch,
  bad_format,
  invalid_argument,
};

std::string_view errc_name(Errc code);

// Every failure raised by the library carries one of the codes above so that
// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace canfp

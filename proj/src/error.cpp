#include "canfp/error.hpp"

namespace canfp {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::malformed_line: return "MalformedLine";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::id_out_of_range: return "IdOutOfRange";
    case Errc::io_failure: return "IoFailure";
    case Errc::empty_intersection: return "EmptyIntersection";
    case Errc::too_few_points: return "TooFewPoints";
    case Errc::window_too_long: return "WindowTooLong";
    case Errc::sample_too_short: return "SampleTooShort";
    case Errc::trace_too_short: return "TraceTooShort";
    case Errc::empty_class: return "EmptyClass";
    case Errc::filter_too_long: return "FilterTooLong";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::degenerate_batch: return "DegenerateBatch";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::non_finite_value: return "NonFiniteValue";
    case Errc::config_infeasible: return "ConfigInfeasible";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::inconsistent_experts: return "InconsistentExperts";
    case Errc::missing_channel: return "MissingChannel";
    case Errc::empty_input: return "EmptyInput";
    case Errc::not_enough_subsets: return "NotEnoughSubsets";
    case Errc::missing_meta: return "MissingMeta";
    case Errc::hash_mismatch: return "HashMismatch";
    case Errc::bad_format: return "BadFormat";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace canfp

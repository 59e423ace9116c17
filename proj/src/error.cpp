#include "barseg/error.h"

namespace barseg {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::file_not_found: return "file_not_found";
    case Errc::io_error: return "io_error";
    case Errc::unsupported_codec: return "unsupported_codec";
    case Errc::malformed_file: return "malformed_file";
    case Errc::empty_audio: return "empty_audio";
    case Errc::parse_error: return "parse_error";
    case Errc::non_monotonic: return "non_monotonic";
    case Errc::too_few_entries: return "too_few_entries";
    case Errc::out_of_range: return "out_of_range";
    case Errc::gap_or_overlap: return "gap_or_overlap";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::kind_mismatch: return "kind_mismatch";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::infeasible: return "infeasible";
    case Errc::empty_corpus: return "empty_corpus";
  }
  return "unknown";
}

}  // namespace barseg

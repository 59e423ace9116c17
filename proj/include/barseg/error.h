#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace barseg {

/// Error categories raised across the pipeline. Each distinct failure mode
/// the callers may want to branch on gets its own value.
enum class Errc {
  file_not_found,
  io_error,
  unsupported_codec,
  malformed_file,
  empty_audio,
  parse_error,
  non_monotonic,
  too_few_entries,
  out_of_range,
  gap_or_overlap,
  invalid_argument,
  kind_mismatch,
  shape_mismatch,
  non_finite,
  infeasible,
  empty_corpus,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Error(Errc code, std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message),
        code_(code),
        stage_(std::move(stage)) {}

  Errc code() const noexcept { return code_; }
  /// Pipeline stage that raised the error, empty outside the pipeline.
  const std::string& stage() const noexcept { return stage_; }

 private:
  Errc code_;
  std::string stage_;
};

}  // namespace barseg

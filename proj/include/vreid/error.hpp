#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vreid {

enum class Errc {
  file_missing,
  io_failure,
  format_error,
  size_mismatch,
  non_finite,
  duplicate_image,
  inconsistent_tracklet,
  length_mismatch,
  invalid_argument,
  zero_row,
  unknown_camera,
  missing_tracklet,
  missing_image,
  misaligned,
  dim_mismatch,
  shape_mismatch,
  not_normalized,
  gallery_too_small,
  asymmetric,
  empty_candidates,
  config_error,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace vreid

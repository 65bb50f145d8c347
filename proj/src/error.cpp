#include "vreid/error.hpp"

namespace vreid {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::file_missing: return "file-missing";
    case Errc::io_failure: return "io-failure";
    case Errc::format_error: return "format-error";
    case Errc::size_mismatch: return "size-mismatch";
    case Errc::non_finite: return "non-finite";
    case Errc::duplicate_image: return "duplicate-image";
    case Errc::inconsistent_tracklet: return "inconsistent-tracklet";
    case Errc::length_mismatch: return "length-mismatch";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::zero_row: return "zero-row";
    case Errc::unknown_camera: return "unknown-camera";
    case Errc::missing_tracklet: return "missing-tracklet";
    case Errc::missing_image: return "missing-image";
    case Errc::misaligned: return "misaligned";
    case Errc::dim_mismatch: return "dim-mismatch";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::not_normalized: return "not-normalized";
    case Errc::gallery_too_small: return "gallery-too-small";
    case Errc::asymmetric: return "asymmetric";
    case Errc::empty_candidates: return "empty-candidates";
    case Errc::config_error: return "config-error";
  }
  return "unknown";
}

}  // namespace vreid

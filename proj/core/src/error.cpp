#include "misclass/common.hpp"

namespace misclass {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::truncated_file: return "truncated file";
    case Errc::invalid_label: return "invalid label";
    case Errc::empty_input: return "empty input";
    case Errc::degenerate_channel: return "degenerate channel";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::diverged: return "training diverged";
    case Errc::schema: return "schema error";
    case Errc::consistency: return "consistency error";
    case Errc::config: return "configuration error";
    case Errc::io: return "i/o error";
    case Errc::infinite_t: return "infinite t statistic";
    case Errc::not_found: return "not found";
  }
  return "unknown error";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

}  // namespace misclass

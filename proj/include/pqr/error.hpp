#pragma once

#include <stdexcept>
#include <string>

namespace pqr {

// Failure categories. The CLI maps these onto process exit codes, so the
// set is part of the external contract.
enum class Errc {
  invalid_parameter,
  out_of_range,
  degenerate_quantizer,
  singular_fit,
  divergent_loss,
  invalid_architecture,
  invalid_input,
  numerical_failure,
  unsupported_format,
  corrupt_checkpoint,
  undefined_correlation,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_parameter: return "invalid-parameter";
    case Errc::out_of_range: return "out-of-range";
    case Errc::degenerate_quantizer: return "degenerate-quantizer";
    case Errc::singular_fit: return "singular-fit";
    case Errc::divergent_loss: return "divergent-loss";
    case Errc::invalid_architecture: return "invalid-architecture";
    case Errc::invalid_input: return "invalid-input";
    case Errc::numerical_failure: return "numerical-failure";
    case Errc::unsupported_format: return "unsupported-format";
    case Errc::corrupt_checkpoint: return "corrupt-checkpoint";
    case Errc::undefined_correlation: return "undefined-correlation";
    case Errc::io_error: return "io-error";
  }
  return "unknown";
}

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, std::string(errc_name(code)) + ": " + message);
}

}  // namespace pqr

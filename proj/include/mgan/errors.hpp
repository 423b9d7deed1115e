#pragma once

#include <stdexcept>
#include <string>

namespace mgan {

// Maps onto the service's ApiError codes; every thrown mgan::Error carries one.
enum class ErrorCode { bad_request, not_found, state_error, provenance_error, numeric_error };

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string kind, const std::string& message)
      : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}

  ErrorCode code() const { return code_; }
  /// Short machine-readable category, e.g. "dimension" or "corruption".
  const std::string& kind() const { return kind_; }

 private:
  ErrorCode code_;
  std::string kind_;
};

#define MGAN_DEFINE_ERROR(Name, code, kind)                                  \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& message) : Error(code, kind, message) {} \
  };

MGAN_DEFINE_ERROR(DimensionError, ErrorCode::bad_request, "dimension")
MGAN_DEFINE_ERROR(ConfigError, ErrorCode::bad_request, "configuration")
MGAN_DEFINE_ERROR(ProtocolError, ErrorCode::bad_request, "protocol")
MGAN_DEFINE_ERROR(NotFoundError, ErrorCode::not_found, "not_found")
MGAN_DEFINE_ERROR(StateError, ErrorCode::state_error, "state")
MGAN_DEFINE_ERROR(CompositionError, ErrorCode::state_error, "composition")
MGAN_DEFINE_ERROR(ProvenanceError, ErrorCode::provenance_error, "provenance")
MGAN_DEFINE_ERROR(NumericError, ErrorCode::numeric_error, "numeric")
MGAN_DEFINE_ERROR(TrainingError, ErrorCode::numeric_error, "training")
MGAN_DEFINE_ERROR(FormatError, ErrorCode::bad_request, "format")
MGAN_DEFINE_ERROR(CorruptionError, ErrorCode::bad_request, "corruption")

#undef MGAN_DEFINE_ERROR

}  // namespace mgan

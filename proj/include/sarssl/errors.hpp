#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sarssl {

// Base of every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string_view kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SARSSL_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

SARSSL_DEFINE_ERROR(DimensionError, "dimension")
SARSSL_DEFINE_ERROR(ParameterError, "parameter")
SARSSL_DEFINE_ERROR(NumericError, "numeric")
SARSSL_DEFINE_ERROR(StateError, "state")
SARSSL_DEFINE_ERROR(DataError, "data")
SARSSL_DEFINE_ERROR(ConfigError, "config")
SARSSL_DEFINE_ERROR(VerificationError, "verification")
SARSSL_DEFINE_ERROR(IoError, "io")

#undef SARSSL_DEFINE_ERROR

}  // namespace sarssl

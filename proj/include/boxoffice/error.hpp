#pragma once

#include <stdexcept>
#include <string>

namespace boxoffice {

/// Base class for every error raised by the library. `code()` is a short,
/// stable identifier that the CLI prints in its single-line error report.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define BOXOFFICE_DEFINE_ERROR(Name, Code)                                 \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message) : Error(Code, message) {}    \
  }

BOXOFFICE_DEFINE_ERROR(ParseError, "parse");
BOXOFFICE_DEFINE_ERROR(SchemaError, "schema");
BOXOFFICE_DEFINE_ERROR(ConflictError, "conflict");
BOXOFFICE_DEFINE_ERROR(ContractError, "contract");
BOXOFFICE_DEFINE_ERROR(ShapeError, "shape");
BOXOFFICE_DEFINE_ERROR(CorruptFileError, "corrupt-file");
BOXOFFICE_DEFINE_ERROR(DataError, "data");
BOXOFFICE_DEFINE_ERROR(VocabularyError, "vocabulary");
BOXOFFICE_DEFINE_ERROR(NotFinetunedError, "not-finetuned");
BOXOFFICE_DEFINE_ERROR(ConvergenceError, "convergence");
BOXOFFICE_DEFINE_ERROR(TrainingError, "training");
BOXOFFICE_DEFINE_ERROR(ConfigError, "config");
BOXOFFICE_DEFINE_ERROR(IoError, "io");

#undef BOXOFFICE_DEFINE_ERROR

}  // namespace boxoffice

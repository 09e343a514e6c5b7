#pragma once

#include <stdexcept>
#include <string>

namespace priorforge {

// Base for every error the library raises. `kind()` is a stable
// machine-readable tag used by the CLI's single-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define PRIORFORGE_ERROR(Name)                                     \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

PRIORFORGE_ERROR(SizeError);
PRIORFORGE_ERROR(SchemaError);
PRIORFORGE_ERROR(DegenerateFitError);
PRIORFORGE_ERROR(DimError);
PRIORFORGE_ERROR(SingleClassError);
PRIORFORGE_ERROR(IncompleteGridError);
PRIORFORGE_ERROR(IngestError);
PRIORFORGE_ERROR(CapError);
PRIORFORGE_ERROR(ConfigError);
PRIORFORGE_ERROR(IoError);

#undef PRIORFORGE_ERROR

}  // namespace priorforge

#pragma once

#include <stdexcept>
#include <string>

namespace cardioseg {

/// Base of every error raised by the library. `kind()` names the error class
/// so command-line tools can map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CARDIOSEG_DEFINE_ERROR(Name, Kind) \
  class Name : public Error {              \
   public:                                 \
    explicit Name(const std::string& what) \
        : Error(Kind, what) {}             \
  };

CARDIOSEG_DEFINE_ERROR(SizeError, "size")
CARDIOSEG_DEFINE_ERROR(ShapeError, "shape")
CARDIOSEG_DEFINE_ERROR(AxisError, "axis")
CARDIOSEG_DEFINE_ERROR(DomainError, "domain")
CARDIOSEG_DEFINE_ERROR(TapeError, "tape")
CARDIOSEG_DEFINE_ERROR(ParameterError, "parameter")
CARDIOSEG_DEFINE_ERROR(StatisticsError, "statistics")
CARDIOSEG_DEFINE_ERROR(LabelError, "label")
CARDIOSEG_DEFINE_ERROR(DataError, "data")
CARDIOSEG_DEFINE_ERROR(FormatError, "format")
CARDIOSEG_DEFINE_ERROR(UnsupportedError, "unsupported")
CARDIOSEG_DEFINE_ERROR(CompatibilityError, "compatibility")
CARDIOSEG_DEFINE_ERROR(IoError, "io")
CARDIOSEG_DEFINE_ERROR(PairingError, "pairing")
CARDIOSEG_DEFINE_ERROR(DegenerateStudyError, "degenerate-study")
CARDIOSEG_DEFINE_ERROR(UndefinedCorrelationError, "undefined-correlation")
CARDIOSEG_DEFINE_ERROR(NumericalError, "numerical")
CARDIOSEG_DEFINE_ERROR(UsageError, "usage")

#undef CARDIOSEG_DEFINE_ERROR

}  // namespace cardioseg

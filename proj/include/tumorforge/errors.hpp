#pragma once

#include <stdexcept>
#include <string>

namespace tumorforge {

/// Failure families. The numeric value doubles as the CLI exit status.
enum class ErrorClass : int {
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
};

/// Base of every error raised by the library. `name()` is the stable,
/// machine-parsable category (e.g. "CorruptRecord"); `detail()` is free text.
class Error : public std::runtime_error {
 public:
  Error(std::string name, ErrorClass error_class, std::string detail)
      : std::runtime_error(name + ": " + detail),
        name_(std::move(name)),
        detail_(std::move(detail)),
        class_(error_class) {}

  const std::string& name() const noexcept { return name_; }
  const std::string& detail() const noexcept { return detail_; }
  ErrorClass error_class() const noexcept { return class_; }
  int exit_code() const noexcept { return static_cast<int>(class_); }

 private:
  std::string name_;
  std::string detail_;
  ErrorClass class_;
};

#define TUMORFORGE_ERROR(Name, Class)                  \
  class Name : public Error {                          \
   public:                                             \
    explicit Name(std::string detail = {})             \
        : Error(#Name, ErrorClass::Class, std::move(detail)) {} \
  }

// core_data
TUMORFORGE_ERROR(DegenerateStd, kNumeric);
TUMORFORGE_ERROR(IOFailure, kData);
TUMORFORGE_ERROR(CorruptRecord, kData);
TUMORFORGE_ERROR(UnknownVersion, kData);
TUMORFORGE_ERROR(ValidationError, kData);
TUMORFORGE_ERROR(DimensionMismatch, kData);
// geometry
TUMORFORGE_ERROR(EmptyMask, kData);
// networks / losses
TUMORFORGE_ERROR(BackboneUnavailable, kData);
TUMORFORGE_ERROR(ShapeMismatch, kNumeric);
TUMORFORGE_ERROR(OutOfRange, kNumeric);
// training
TUMORFORGE_ERROR(EmptyDataset, kData);
TUMORFORGE_ERROR(NoCheckpoints, kNumeric);
TUMORFORGE_ERROR(InvalidConfig, kUsage);
// synthesis
TUMORFORGE_ERROR(UntrainedModel, kNumeric);
TUMORFORGE_ERROR(RejectionBudgetExceeded, kNumeric);
// evaluation
TUMORFORGE_ERROR(TooFewSamples, kData);
TUMORFORGE_ERROR(SplitOverlap, kData);
// cli
TUMORFORGE_ERROR(UnknownCommand, kUsage);
TUMORFORGE_ERROR(UnknownOption, kUsage);
TUMORFORGE_ERROR(MissingRequired, kUsage);
TUMORFORGE_ERROR(InvalidValue, kUsage);

#undef TUMORFORGE_ERROR

}  // namespace tumorforge

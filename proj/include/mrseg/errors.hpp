#pragma once

#include <stdexcept>
#include <string>

namespace mrseg {

/// Broad failure category, used by the CLI to pick an exit code.
enum class ErrorCategory { Input, Config, Numerics, Io, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define MRSEG_DEFINE_ERROR(Name, Category)                                  \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what)                                  \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
  }

// volume I/O and preprocessing
MRSEG_DEFINE_ERROR(UnsupportedFormat, Input);
MRSEG_DEFINE_ERROR(CorruptFile, Input);
MRSEG_DEFINE_ERROR(UnsupportedShape, Input);
MRSEG_DEFINE_ERROR(IoError, Io);
MRSEG_DEFINE_ERROR(InvalidRange, Config);
MRSEG_DEFINE_ERROR(InvalidMode, Config);

// tensor / network
MRSEG_DEFINE_ERROR(ShapeError, Internal);
MRSEG_DEFINE_ERROR(InvalidRate, Config);
MRSEG_DEFINE_ERROR(AlignmentError, Input);

// sampling
MRSEG_DEFINE_ERROR(GridError, Input);
MRSEG_DEFINE_ERROR(LabelError, Input);

// learning
MRSEG_DEFINE_ERROR(InvalidK, Config);
MRSEG_DEFINE_ERROR(NumericsError, Numerics);
MRSEG_DEFINE_ERROR(ConfigError, Config);

// evaluation / data
MRSEG_DEFINE_ERROR(StatError, Input);
MRSEG_DEFINE_ERROR(MissingCase, Io);
MRSEG_DEFINE_ERROR(GeometryError, Input);

#undef MRSEG_DEFINE_ERROR

}  // namespace mrseg

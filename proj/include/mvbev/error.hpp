#pragma once

#include <stdexcept>
#include <string>

namespace mvbev {

/// Base of every error raised by the library. `kind()` names the failure
/// class so callers (and tests) can branch without RTTI on the subclass.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MVBEV_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  };

MVBEV_DEFINE_ERROR(BehindCamera)
MVBEV_DEFINE_ERROR(DegenerateCamera)
MVBEV_DEFINE_ERROR(InvalidCalibration)
MVBEV_DEFINE_ERROR(InvalidArgument)
MVBEV_DEFINE_ERROR(ShapeMismatch)
MVBEV_DEFINE_ERROR(GridTooSmall)
MVBEV_DEFINE_ERROR(IoError)
MVBEV_DEFINE_ERROR(CorruptDataset)
MVBEV_DEFINE_ERROR(NoActiveViews)
MVBEV_DEFINE_ERROR(PositionOutOfGrid)
MVBEV_DEFINE_ERROR(CacheMismatch)
MVBEV_DEFINE_ERROR(StepOutOfRange)
MVBEV_DEFINE_ERROR(EmptyDataset)
MVBEV_DEFINE_ERROR(NoGroundTruth)
MVBEV_DEFINE_ERROR(ConfigError)

#undef MVBEV_DEFINE_ERROR

}  // namespace mvbev

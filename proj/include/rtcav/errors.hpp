#pragma once

#include <stdexcept>
#include <string>

namespace rtcav {

// Base of every error raised by the library. `kind()` names the failed check
// so callers (and the CLI) can report it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define RTCAV_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  };

// tensors
RTCAV_DEFINE_ERROR(IoError)
RTCAV_DEFINE_ERROR(UnsupportedDtype)
RTCAV_DEFINE_ERROR(BadMagic)
RTCAV_DEFINE_ERROR(VersionMismatch)
RTCAV_DEFINE_ERROR(TruncatedPayload)
RTCAV_DEFINE_ERROR(MalformedHeader)
RTCAV_DEFINE_ERROR(ZeroVector)
RTCAV_DEFINE_ERROR(EmptyMatrix)
RTCAV_DEFINE_ERROR(LengthMismatch)
RTCAV_DEFINE_ERROR(ShapeMismatch)

// rasterprep
RTCAV_DEFINE_ERROR(CenterOutOfBounds)
RTCAV_DEFINE_ERROR(MissingCoordinates)
RTCAV_DEFINE_ERROR(NonSquareRotation)

// refnet
RTCAV_DEFINE_ERROR(InvalidLabel)
RTCAV_DEFINE_ERROR(EmptySplit)
RTCAV_DEFINE_ERROR(InvalidConfig)

// cavengine / relrank
RTCAV_DEFINE_ERROR(DegenerateCav)
RTCAV_DEFINE_ERROR(EmptyInput)
RTCAV_DEFINE_ERROR(TooFewSamples)
RTCAV_DEFINE_ERROR(DegeneratePair)

// evalcli
RTCAV_DEFINE_ERROR(SingleClass)
RTCAV_DEFINE_ERROR(InsufficientData)
RTCAV_DEFINE_ERROR(WindowTooLarge)
RTCAV_DEFINE_ERROR(ValidationError)

#undef RTCAV_DEFINE_ERROR

}  // namespace rtcav

#pragma once

#include <stdexcept>
#include <string>

namespace semmap {

// Base for every error the library raises. Callers that only care about
// "something in the input was wrong" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SEMMAP_DECLARE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

SEMMAP_DECLARE_ERROR(InvalidDistribution);
SEMMAP_DECLARE_ERROR(ConfigError);
SEMMAP_DECLARE_ERROR(FrameShapeError);
SEMMAP_DECLARE_ERROR(PoseError);
SEMMAP_DECLARE_ERROR(FeatureError);
SEMMAP_DECLARE_ERROR(FilterShapeError);
SEMMAP_DECLARE_ERROR(SeedError);
SEMMAP_DECLARE_ERROR(ConsistencyError);
SEMMAP_DECLARE_ERROR(OracleSizeError);
SEMMAP_DECLARE_ERROR(ShapeError);
SEMMAP_DECLARE_ERROR(EmptyEvalError);
SEMMAP_DECLARE_ERROR(InputError);

#undef SEMMAP_DECLARE_ERROR

}  // namespace semmap

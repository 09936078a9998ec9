#pragma once

#include <stdexcept>
#include <string>

namespace amcn {

// Root of every error the library throws. Callers that only care about
// "something in the engine failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AMCN_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

// vecmath
AMCN_DEFINE_ERROR(ZeroVector)
AMCN_DEFINE_ERROR(NonPositiveTemperature)
AMCN_DEFINE_ERROR(NotUnitNorm)
AMCN_DEFINE_ERROR(DimensionMismatch)

// prompt bank
AMCN_DEFINE_ERROR(EmptyPromptError)
AMCN_DEFINE_ERROR(UnknownClass)
AMCN_DEFINE_ERROR(NameCollision)
AMCN_DEFINE_ERROR(InvalidBank)

// losses
AMCN_DEFINE_ERROR(DegenerateRatio)
AMCN_DEFINE_ERROR(NonFiniteGradient)
AMCN_DEFINE_ERROR(InvalidHyperParams)

// distribution
AMCN_DEFINE_ERROR(InsufficientSamples)
AMCN_DEFINE_ERROR(DegenerateDenominator)
AMCN_DEFINE_ERROR(MissingStats)

// trainer
AMCN_DEFINE_ERROR(CensusViolation)
AMCN_DEFINE_ERROR(InvalidConfig)

// eval / io
AMCN_DEFINE_ERROR(EmptyScoreSet)
AMCN_DEFINE_ERROR(BadMagic)
AMCN_DEFINE_ERROR(TruncatedFile)
AMCN_DEFINE_ERROR(LabelOutOfRange)
AMCN_DEFINE_ERROR(IoError)

#undef AMCN_DEFINE_ERROR

}  // namespace amcn

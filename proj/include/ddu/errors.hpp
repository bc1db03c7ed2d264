#pragma once

#include <stdexcept>
#include <string>

namespace ddu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DDU_DEFINE_ERROR(Name)               \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(std::string(#Name ": ") + what) {} \
  }

DDU_DEFINE_ERROR(NotPositiveDefinite);
DDU_DEFINE_ERROR(EmptyInput);
DDU_DEFINE_ERROR(DomainError);
DDU_DEFINE_ERROR(ZeroMatrix);
DDU_DEFINE_ERROR(ShapeMismatch);
DDU_DEFINE_ERROR(InvalidCount);
DDU_DEFINE_ERROR(InvalidRate);
DDU_DEFINE_ERROR(ExhaustedSampling);
DDU_DEFINE_ERROR(DivergedLoss);
DDU_DEFINE_ERROR(ClassUnderpopulated);
DDU_DEFINE_ERROR(InvalidDistribution);
DDU_DEFINE_ERROR(EmptyValidation);
DDU_DEFINE_ERROR(PreconditionViolated);
DDU_DEFINE_ERROR(LengthMismatch);
DDU_DEFINE_ERROR(IndexOutOfRange);
DDU_DEFINE_ERROR(IndexConflict);
DDU_DEFINE_ERROR(InfeasibleMI);
DDU_DEFINE_ERROR(Diverged);
DDU_DEFINE_ERROR(DegenerateComponent);
DDU_DEFINE_ERROR(PoolExhausted);
DDU_DEFINE_ERROR(MissingGda);
DDU_DEFINE_ERROR(ConfigError);
DDU_DEFINE_ERROR(UnknownExperiment);
DDU_DEFINE_ERROR(ParseError);

#undef DDU_DEFINE_ERROR

}  // namespace ddu

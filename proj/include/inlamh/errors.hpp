#pragma once

#include <stdexcept>
#include <string>

namespace inlamh {

// Root of every error the library throws. The CLI maps the three families
// below onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: configuration, files, data shapes.
class InputError : public Error {
 public:
  using Error::Error;
};

// A numerical routine could not produce a result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

#define INLAMH_DEFINE_ERROR(Name, Base) \
  class Name : public Base {            \
   public:                              \
    using Base::Base;                   \
  };

INLAMH_DEFINE_ERROR(ConfigError, InputError)
INLAMH_DEFINE_ERROR(ParseError, InputError)
INLAMH_DEFINE_ERROR(AsymmetryError, InputError)
INLAMH_DEFINE_ERROR(IslandError, InputError)
INLAMH_DEFINE_ERROR(DimensionMismatch, InputError)
INLAMH_DEFINE_ERROR(UnsupportedFamily, InputError)
INLAMH_DEFINE_ERROR(OutOfRange, InputError)
INLAMH_DEFINE_ERROR(NameMismatch, InputError)
INLAMH_DEFINE_ERROR(IndexNotTracked, InputError)
INLAMH_DEFINE_ERROR(CovariateNotFound, InputError)
INLAMH_DEFINE_ERROR(EmptyChain, InputError)
INLAMH_DEFINE_ERROR(EmptyList, InputError)
INLAMH_DEFINE_ERROR(ZeroScale, InputError)
INLAMH_DEFINE_ERROR(Unnormalized, InputError)
INLAMH_DEFINE_ERROR(GridOverflow, InputError)
INLAMH_DEFINE_ERROR(NonPositiveDelta, InputError)
INLAMH_DEFINE_ERROR(NonPositiveD, OutOfRange)

INLAMH_DEFINE_ERROR(NotPositiveDefinite, NumericalError)
INLAMH_DEFINE_ERROR(IndefiniteStructure, NumericalError)
INLAMH_DEFINE_ERROR(NonConvergence, NumericalError)
INLAMH_DEFINE_ERROR(OutOfSupport, NumericalError)
INLAMH_DEFINE_ERROR(NonFinite, NumericalError)
INLAMH_DEFINE_ERROR(NonFiniteEta, NonFinite)
INLAMH_DEFINE_ERROR(NewtonDivergence, NumericalError)
INLAMH_DEFINE_ERROR(ModeSearchFailure, NumericalError)
INLAMH_DEFINE_ERROR(GridTooCoarse, NumericalError)

#undef INLAMH_DEFINE_ERROR

}  // namespace inlamh

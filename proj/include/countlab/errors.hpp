#pragma once

#include <stdexcept>
#include <string>

namespace countlab {

/// Base class for every error raised by the library. The CLI maps
/// ValidationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, inconsistent dimensions, bad flags.
class ValidationError : public Error {
 public:
  using Error::Error;
};

#define COUNTLAB_DEFINE_ERROR(Name, Base)  \
  class Name : public Base {               \
   public:                                 \
    using Base::Base;                      \
  }

// scene-core / stimulus-gen
COUNTLAB_DEFINE_ERROR(OccupiedCell, Error);
COUNTLAB_DEFINE_ERROR(InsufficientFreeCells, Error);
COUNTLAB_DEFINE_ERROR(ConstraintUnsatisfiable, Error);

// harness
COUNTLAB_DEFINE_ERROR(TransportError, Error);
COUNTLAB_DEFINE_ERROR(Timeout, TransportError);
COUNTLAB_DEFINE_ERROR(ProtocolError, TransportError);
COUNTLAB_DEFINE_ERROR(ExhaustedRetries, TransportError);

// metrics-report
COUNTLAB_DEFINE_ERROR(EmptyInput, ValidationError);
COUNTLAB_DEFINE_ERROR(IncompleteGrid, ValidationError);

// probe-lab / head-tuner
COUNTLAB_DEFINE_ERROR(FormatError, ValidationError);
COUNTLAB_DEFINE_ERROR(DimensionMismatch, ValidationError);
COUNTLAB_DEFINE_ERROR(NonFiniteValue, ValidationError);
COUNTLAB_DEFINE_ERROR(DegenerateLabels, ValidationError);
COUNTLAB_DEFINE_ERROR(InsufficientClassCount, ValidationError);
COUNTLAB_DEFINE_ERROR(NonFiniteLoss, Error);

// bpc-builder
COUNTLAB_DEFINE_ERROR(NoValidRecords, ValidationError);

#undef COUNTLAB_DEFINE_ERROR

}  // namespace countlab

#pragma once

#include <stdexcept>
#include <string>

namespace sagefm {

/// Base class for every domain error raised by the library. The CLI maps
/// these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SAGEFM_DEFINE_ERROR(Name)        \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

// data-core
SAGEFM_DEFINE_ERROR(LoadError);
SAGEFM_DEFINE_ERROR(VocabularyMismatch);
SAGEFM_DEFINE_ERROR(CorruptData);
SAGEFM_DEFINE_ERROR(TooFewSamples);

// graph-builder
SAGEFM_DEFINE_ERROR(InvalidBandwidth);

// gcn-engine
SAGEFM_DEFINE_ERROR(ShapeError);
SAGEFM_DEFINE_ERROR(NumericError);
SAGEFM_DEFINE_ERROR(EmptyMask);
SAGEFM_DEFINE_ERROR(CorruptCheckpoint);
SAGEFM_DEFINE_ERROR(IncompatibleCheckpoint);

// pretrain
SAGEFM_DEFINE_ERROR(InvalidFraction);
SAGEFM_DEFINE_ERROR(EmptyTrainingSet);
SAGEFM_DEFINE_ERROR(DivergenceError);

// stats-kit
SAGEFM_DEFINE_ERROR(DegenerateInput);
SAGEFM_DEFINE_ERROR(TooFewObservations);
SAGEFM_DEFINE_ERROR(InvalidP);

// imputation-eval
SAGEFM_DEFINE_ERROR(EmptyCurve);

// embed-analytics
SAGEFM_DEFINE_ERROR(InvalidLayer);
SAGEFM_DEFINE_ERROR(InvalidComponents);
SAGEFM_DEFINE_ERROR(InvalidK);
SAGEFM_DEFINE_ERROR(DegenerateCentroid);
SAGEFM_DEFINE_ERROR(LabelMismatch);
SAGEFM_DEFINE_ERROR(NoComparableTissues);
SAGEFM_DEFINE_ERROR(MissingClass);

// perturb-lab
SAGEFM_DEFINE_ERROR(UnknownGene);
SAGEFM_DEFINE_ERROR(TooFewGenes);

// synthlab
SAGEFM_DEFINE_ERROR(ConfigError);

// Generic precondition failure that has no dedicated name.
SAGEFM_DEFINE_ERROR(InvalidArgument);

#undef SAGEFM_DEFINE_ERROR

}  // namespace sagefm

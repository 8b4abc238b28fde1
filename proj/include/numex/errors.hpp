#pragma once

#include <stdexcept>
#include <string>

namespace numex {

/// Base class for all numex failures. Subclasses name the condition; the
/// message carries the offending line/id/path.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// annotation
struct MalformedLine : Error { using Error::Error; };
struct SurfaceMismatch : Error { using Error::Error; };
struct DanglingRelation : Error { using Error::Error; };
struct MisalignedEntity : Error { using Error::Error; };

// preprocess
struct UnparseableNumeral : Error { using Error::Error; };

// dataset
struct EmptyCorpus : Error { using Error::Error; };
struct NotANumeral : Error { using Error::Error; };
struct OversizeInstance : Error { using Error::Error; };
struct TooFewInstances : Error { using Error::Error; };

// tagger
struct IndexOutOfVocab : Error { using Error::Error; };
struct StaleCache : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };

// metrics
struct EmptyEvalSet : Error { using Error::Error; };

// file plumbing
struct IoError : Error { using Error::Error; };

}  // namespace numex

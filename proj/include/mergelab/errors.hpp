#pragma once

#include <stdexcept>
#include <string>

namespace mergelab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- container format -------------------------------------------------

struct FormatError : Error {
    using Error::Error;
};
struct MalformedHeader : FormatError {
    using FormatError::FormatError;
};
struct OffsetError : FormatError {
    using FormatError::FormatError;
};
struct DuplicateName : FormatError {
    using FormatError::FormatError;
};
struct UnknownTensor : FormatError {
    using FormatError::FormatError;
};

// ---- merging ----------------------------------------------------------

struct MergeError : Error {
    using Error::Error;
};
struct IncompatibleCheckpoints : MergeError {
    using MergeError::MergeError;
};
struct IntTensorMismatch : MergeError {
    using MergeError::MergeError;
};
struct AlphaOutOfRange : MergeError {
    using MergeError::MergeError;
};
struct EmptyModelList : MergeError {
    using MergeError::MergeError;
};
struct InvalidSweepSpec : MergeError {
    using MergeError::MergeError;
};

// ---- toy models -------------------------------------------------------

struct ModelError : Error {
    using Error::Error;
};
struct InvalidSpec : ModelError {
    using ModelError::ModelError;
};
struct InvalidConfig : ModelError {
    using ModelError::ModelError;
};
struct ShapeMismatch : ModelError {
    using ModelError::ModelError;
};
struct NonFiniteLoss : ModelError {
    using ModelError::ModelError;
};
struct TokenOutOfRange : ModelError {
    using ModelError::ModelError;
};

// ---- evaluation -------------------------------------------------------

struct EvalError : Error {
    using Error::Error;
};
struct ZeroVector : EvalError {
    using EvalError::EvalError;
};
struct LengthMismatch : EvalError {
    using EvalError::EvalError;
};
struct EmptySentenceSet : EvalError {
    using EvalError::EvalError;
};
struct TooFewPoints : EvalError {
    using EvalError::EvalError;
};
struct WrongModelCount : EvalError {
    using EvalError::EvalError;
};

// ---- I/O and configuration --------------------------------------------

struct IoError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace mergelab

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace uq {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor/layer shapes do not compose; message names the offending axes.
struct DimensionError : Error {
  using Error::Error;
};

/// An argument is outside its valid range (stride, temperature, scale, ...).
struct ParameterError : Error {
  using Error::Error;
};

/// Graph structure violates a precondition (e.g. batchnorm without a
/// preceding parametric layer).
struct StructureError : Error {
  using Error::Error;
};

/// Operation called out of order (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

/// Calibration/evaluation data is missing or inconsistent.
struct DataError : Error {
  using Error::Error;
};

/// A dense-oracle budget was exceeded.
struct SizeError : Error {
  using Error::Error;
};

/// Model container: manifest is malformed.
struct ManifestError : Error {
  using Error::Error;
};

/// Model container: a tensor record does not fit the blob.
struct BlobLengthError : Error {
  using Error::Error;
};

/// Model container: manifest names a layer kind this build does not know.
struct UnknownKindError : Error {
  using Error::Error;
};

/// IDX stream: magic number does not match the expected file role.
struct BadMagicError : Error {
  using Error::Error;
};

/// IDX stream: payload shorter than the declared dimensions imply.
struct TruncationError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace uq

#pragma once

#include <stdexcept>
#include <string>

namespace gpia {

// Every failure path in the library throws a typed error derived from Error,
// so the CLI can map failures to exit codes without string matching.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files or JSON.
struct ParseError : Error { using Error::Error; };
// Out-of-range ids, indices or values.
struct RangeError : Error { using Error::Error; };
// Cross-field contract violations (row counts, duplicate ids, ...).
struct ConsistencyError : Error { using Error::Error; };
// Violated operation precondition.
struct PreconditionError : Error { using Error::Error; };
// PropertySpec refers to values outside the declared value set.
struct SpecError : Error { using Error::Error; };
// Rejection sampler ran out of attempts.
struct SamplingError : Error { using Error::Error; };
// Train/test split constraints unsatisfiable.
struct SplitError : Error { using Error::Error; };
// Densification could not reach the target flag.
struct DensifyError : Error { using Error::Error; };
// Bad model/architecture configuration or shape mismatch at model boundaries.
struct ConfigError : Error { using Error::Error; };
// NaN/Inf encountered during training.
struct DivergenceError : Error { using Error::Error; };
// Matrix dimension mismatch in data-path operations.
struct ShapeError : Error { using Error::Error; };
// API misuse (wrong method family, incompatible defense/attack pairing).
struct UsageError : Error { using Error::Error; };
// Adversary knowledge contradicts the attack id's requirements.
struct KnowledgeError : Error { using Error::Error; };
// Feature alignment infeasible.
struct AlignmentError : Error { using Error::Error; };
// Degenerate data: single-class labels, identical rows, undefined statistics.
struct DegenerateError : Error { using Error::Error; };

}  // namespace gpia

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace megu {

// Base for all engine errors. Subtypes map onto CLI exit codes:
// ConfigError -> 2, MissingArtifactError -> 3, everything else -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration or parameter value detected before any work starts.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A required upstream artifact (checkpoint, matrix, map, cache) is absent.
class MissingArtifactError : public Error {
public:
    explicit MissingArtifactError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data; carries the byte offset where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit ParseError(const std::string& msg) : Error(msg), offset(0) {}
    std::size_t offset;
};

// Tensor/layer shape disagreement.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Value outside its admissible domain (label out of range, score > 1, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Oracle score table has no entry for the requested key.
class LookupError : public Error {
public:
    explicit LookupError(const std::string& msg) : Error(msg) {}
};

// Remote oracle transport failure (timeout, non-2xx, malformed body,
// retry budget exhausted). Never silently mapped to a default score.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& msg) : Error(msg) {}
};

// Task specification cannot be applied to the dataset.
class TaskError : public Error {
public:
    explicit TaskError(const std::string& msg) : Error(msg) {}
};

// Noise cache provenance or payload problems.
class CacheError : public Error {
public:
    explicit CacheError(const std::string& msg) : Error(msg) {}
};

// Evaluation on an empty or degenerate sample set.
class EvalError : public Error {
public:
    explicit EvalError(const std::string& msg) : Error(msg) {}
};

// Numerical failure mid-optimization (non-finite loss or gradient).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace megu

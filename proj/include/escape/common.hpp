#pragma once

#include <stdexcept>
#include <string>

namespace escape {

// Error taxonomy. Every failure mode the library reports maps onto one of
// these; the CLI translates them to process exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied value (counts, rates, empty index sets, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Non-finite coordinates where a valid pose is required.
class InvalidPoseError : public Error {
public:
    using Error::Error;
};

// Joint-count / index-layout mismatch between poses, schemas, or deltas.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Training sample lacks the ground truth a supervised path needs.
class SupervisionUnavailableError : public Error {
public:
    using Error::Error;
};

class BatchTooSmallError : public Error {
public:
    using Error::Error;
};

// backward() called with a trace that no longer matches the network.
class SequencingError : public Error {
public:
    using Error::Error;
};

// Optimizer refused a non-finite gradient; parameters were left untouched.
class UpdateRejectedError : public Error {
public:
    using Error::Error;
};

class IncompatibleCheckpointError : public Error {
public:
    using Error::Error;
};

class CorruptCheckpointError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class DependencyError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

} // namespace escape

#pragma once

#include <stdexcept>
#include <string>

namespace svpipe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition of an operation was not met by the caller.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class IngestError : public Error {
public:
    using Error::Error;
};

class WeightsError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Raised when the heart locator finds no foreground in any slice.
class CropFailure : public Error {
public:
    using Error::Error;
};

class EmptySegmentation : public Error {
public:
    using Error::Error;
};

class StatsError : public Error {
public:
    using Error::Error;
};

}  // namespace svpipe

#pragma once

#include <stdexcept>
#include <string>

namespace rig {

// Error taxonomy mirrors the CLI exit-code contract:
//   UsageError   -> 1 (bad flags / unknown subcommand)
//   DataError    -> 2 (missing files, schema violations, manifest mismatches)
//   ConfigError  -> 2 (invalid or unknown configuration values)
//   NumericError -> 3 (non-finite values, generation failures)
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

}  // namespace rig

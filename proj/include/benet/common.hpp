#pragma once

#include <stdexcept>
#include <string>

namespace benet {

// Error taxonomy shared across the library. The CLI maps these onto exit codes
// (config -> 2, data/io -> 3, numerical divergence -> 4, checkpoint -> 5).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInputError : Error { using Error::Error; };   // rejected input
struct ConfigError : Error { using Error::Error; };         // bad option / key / range
struct NumericalError : Error { using Error::Error; };      // non-finite state
struct InvariantError : Error { using Error::Error; };      // broken internal invariant
struct DataError : Error { using Error::Error; };           // dataset missing or corrupt
struct CheckpointError : Error { using Error::Error; };     // checkpoint missing or corrupt
struct StateError : Error { using Error::Error; };          // call on wrong state

}  // namespace benet

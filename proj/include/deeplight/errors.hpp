#pragma once

#include <stdexcept>
#include <string>

namespace deeplight {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ManifestError : Error {
  using Error::Error;
};

struct StorageError : Error {
  using Error::Error;
};

struct CoverageError : Error {
  using Error::Error;
};

struct FetchError : Error {
  using Error::Error;
};

struct TrainError : Error {
  using Error::Error;
};

}  // namespace deeplight

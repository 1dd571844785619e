#pragma once
// Error taxonomy shared by the library and the command line tool.
//   ConfigError  -> bad or inconsistent user input (CLI exit code 2)
//   NumericError -> non-finite values or diverged optimization (CLI exit code 3)
//   IoError      -> missing or malformed files (CLI exit code 4)

#include <stdexcept>
#include <string>

namespace dfmr {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dfmr

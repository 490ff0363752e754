#pragma once

#include <stdexcept>
#include <string>

namespace t2drisk {

// Error families map one-to-one onto CLI exit codes (usage 1, data 2, numeric 3).

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace t2drisk

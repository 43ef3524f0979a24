#pragma once

#include <stdexcept>
#include <string>

namespace twinpair {

/// Invalid model or run parameter (mode counts, efficiencies, extents...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Probability vector could not be truncated within the requested tail mass.
class TruncationError : public std::runtime_error {
 public:
  TruncationError(const std::string& what, std::size_t suggested_n_max)
      : std::runtime_error(what), suggested_n_max_(suggested_n_max) {}

  std::size_t suggested_n_max() const noexcept { return suggested_n_max_; }

 private:
  std::size_t suggested_n_max_;
};

/// Loss of precision that could not be recovered.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (frame files, histogram CSVs, config files).
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")"
                                : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Estimation step could not produce a result from the supplied data.
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twinpair

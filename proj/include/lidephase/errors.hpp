#ifndef LIDEPHASE_ERRORS_HPP
#define LIDEPHASE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace lidephase {

/// Input outside the domain where a model or operation is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Evaluation point too close to a current-carrying conductor.
class SingularityError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Quadrature or other numerical procedure failed to meet its tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares fit did not converge.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Measured data failed a quality gate (too many outliers, bad timing).
class DataQualityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unknown configuration entry. key() names the offender.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message),
        key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Input file that does not exist or cannot be opened.
class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(std::string path, const std::string& what = "cannot open file")
      : std::runtime_error(what + ": " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed input file. line() is 1-based, 0 when not line-specific.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, std::size_t line, const std::string& message)
      : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string()) +
                           ": " + message),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

}  // namespace lidephase

#endif  // LIDEPHASE_ERRORS_HPP

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace diffpf {

// Base error carrying a stable machine-checkable code next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Case-text or file-schema error with a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(std::string code, const std::string& message, int line, int col)
      : Error(std::move(code), message + " (line " + std::to_string(line) +
                                   ", col " + std::to_string(col) + ")"),
        line_(line),
        col_(col) {}

  int line() const noexcept { return line_; }
  int col() const noexcept { return col_; }

 private:
  int line_;
  int col_;
};

// Solver abort: the linearized system for one sample is numerically rank-deficient.
class SingularJacobian : public Error {
 public:
  SingularJacobian(int sample, int step, double rcond)
      : Error("SingularJacobian",
              "sample " + std::to_string(sample) + ", step " + std::to_string(step) +
                  ", rcond " + std::to_string(rcond)),
        sample(sample),
        step(step),
        rcond(rcond) {}

  int sample;
  int step;
  double rcond;
};

// Iterative solve finished without meeting tolerance for the listed samples.
class NoConvergence : public Error {
 public:
  NoConvergence(std::vector<int> failed_samples, const std::string& detail)
      : Error("NoConvergence", detail), failed(std::move(failed_samples)) {}

  std::vector<int> failed;
};

}  // namespace diffpf

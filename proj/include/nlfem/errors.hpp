#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nlfem {

/// Pipeline stage an error originated from; used to tag CLI diagnostics.
enum class Stage { config, mesh, kernel, quadrature, assembly, solve, error, io };

std::string_view to_string(Stage stage);

class Error : public std::runtime_error {
 public:
  Error(Stage stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}

  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// Invalid input: violated preconditions on parameters or configuration.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown: singular kernels, degenerate constraints, failed solves.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace nlfem

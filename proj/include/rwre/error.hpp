#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace rwre {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category, used by the CLI error JSON.
  virtual const char* kind() const noexcept { return "error"; }
};

#define RWRE_DEFINE_ERROR(Name, tag)                                           \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
    const char* kind() const noexcept override { return tag; }                 \
  };

RWRE_DEFINE_ERROR(ParameterDomainError, "parameter_domain")
RWRE_DEFINE_ERROR(DimensionError, "dimension")
RWRE_DEFINE_ERROR(ShapeError, "shape_mismatch")
RWRE_DEFINE_ERROR(GridMismatchError, "grid_mismatch")
RWRE_DEFINE_ERROR(CapExceededError, "cap_exceeded")
RWRE_DEFINE_ERROR(DegeneracyError, "degeneracy")
RWRE_DEFINE_ERROR(EmptySampleError, "empty_sample")
RWRE_DEFINE_ERROR(DivergenceError, "divergence")
RWRE_DEFINE_ERROR(GuardExceededError, "guard_exceeded")
RWRE_DEFINE_ERROR(ConfigError, "config")
RWRE_DEFINE_ERROR(FormatError, "format")

#undef RWRE_DEFINE_ERROR

namespace detail {
inline std::string format_residual(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", r);
  return buf;
}
}  // namespace detail

/// Iterative or integrator failure; carries the last residual reached.
class NumericalFailure : public Error {
public:
  NumericalFailure(const std::string& what, double residual)
      : Error(what + " (residual " + detail::format_residual(residual) + ")"),
        residual_(residual) {}
  const char* kind() const noexcept override { return "numerical_failure"; }
  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

/// Least-squares fit rejected; the message holds the diagnostics.
class FitQualityError : public Error {
public:
  FitQualityError(const std::string& what, double r_squared, int points)
      : Error(what), r_squared_(r_squared), points_(points) {}
  const char* kind() const noexcept override { return "fit_quality"; }
  double r_squared() const noexcept { return r_squared_; }
  int points() const noexcept { return points_; }

private:
  double r_squared_;
  int points_;
};

}  // namespace rwre

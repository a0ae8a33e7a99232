#ifndef SPACINGS_ERRORS_HPP
#define SPACINGS_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace spacings {

/// Error categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  domain,               // argument outside a function's domain
  accuracy,             // quadrature / numeric refinement did not settle
  configuration,        // invalid run configuration (m > n, bad flags)
  capability,           // model or phi cannot do what was asked
  parameter_domain,     // theta outside the model's parameter box
  invalid_phi,
  unsupported_phi,
  estimation_failure,
  internal_consistency,
  constraint,
  information_singular,
  degenerate_geometry,
  data,
  harness,
  non_convergence,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::accuracy: return "accuracy";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::capability: return "capability";
    case ErrorKind::parameter_domain: return "parameter_domain";
    case ErrorKind::invalid_phi: return "invalid_phi";
    case ErrorKind::unsupported_phi: return "unsupported_phi";
    case ErrorKind::estimation_failure: return "estimation_failure";
    case ErrorKind::internal_consistency: return "internal_consistency";
    case ErrorKind::constraint: return "constraint";
    case ErrorKind::information_singular: return "information_singular";
    case ErrorKind::degenerate_geometry: return "degenerate_geometry";
    case ErrorKind::data: return "data";
    case ErrorKind::harness: return "harness";
    case ErrorKind::non_convergence: return "non_convergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Quadrature refinement failure; carries both estimates.
class AccuracyError : public Error {
 public:
  AccuracyError(const std::string& what, double coarse, double fine)
      : Error(ErrorKind::accuracy, what + " (coarse=" + std::to_string(coarse) +
                                       ", fine=" + std::to_string(fine) + ")"),
        coarse_(coarse),
        fine_(fine) {}
  double coarse() const noexcept { return coarse_; }
  double fine() const noexcept { return fine_; }

 private:
  double coarse_;
  double fine_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace spacings

#endif  // SPACINGS_ERRORS_HPP

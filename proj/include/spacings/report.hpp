#ifndef SPACINGS_REPORT_HPP
#define SPACINGS_REPORT_HPP

#include <optional>
#include <string>
#include <vector>

namespace spacings {

struct TestDiagnostics {
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  bool converged = true;
  double stationarity = 0.0;
  int ties = 0;         // spacings (or xi values) floored before phi
  int mc_reps = 0;      // uniformity test only
};

/// Outcome of any test in the library. Optional members are filled only by
/// the tests they belong to.
struct TestReport {
  std::string kind;     // simple, two-phi, composite, uniformity, mv-simple, mv-composite, lrt
  std::size_t n = 0;
  double raw_T = 0.0;
  double T_tilde = 0.0;
  int df = 0;
  double p_value = 1.0;
  double critical_value = 0.0;
  std::vector<double> estimate;
  std::optional<std::vector<double>> restricted_estimate;
  std::optional<std::vector<double>> theta0;
  int m = 1;
  std::string phi;
  std::optional<std::string> phi_estimate;  // two-phi: phi used for estimation
  double sigma2 = 1.0;
  double e2 = 1.0;
  bool reject = false;
  double level = 0.05;
  // Multivariate extras.
  std::optional<double> b_phi;
  std::optional<double> sigma_q2;
  std::optional<int> dimension;
  TestDiagnostics diagnostics;

  std::string decision() const { return reject ? "reject" : "accept"; }
};

}  // namespace spacings

#endif  // SPACINGS_REPORT_HPP

#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace maxtomo {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kEps0 = 8.8541878128e-12;   // F/m
inline constexpr double kMu0 = 1.25663706212e-6;    // H/m
inline const double kC0 = 1.0 / std::sqrt(kEps0 * kMu0);
inline constexpr double kLarmor7T = 297.2e6;         // Hz

inline double angular(double frequency_hz) { return 2.0 * kPi * frequency_hz; }
inline double wavenumber(double omega) { return omega / kC0; }

/// Thrown for violated preconditions on user-supplied data.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an iterative or direct solve does not reach its target.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, double residual)
      : std::runtime_error(what + " (relative residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace maxtomo

#pragma once

#include <span>
#include <vector>

namespace spcnn {

/// Regularized incomplete beta I_x(a, b) by continued fraction (modified
/// Lentz). `one_minus_x` is passed separately so callers can supply it
/// without cancellation.
double regularized_incomplete_beta(double a, double b, double x, double one_minus_x);
double regularized_incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with `dof` degrees of freedom (dof may be
/// fractional). Throws ParameterError for dof <= 0.
double student_t_cdf(double t, double dof);

/// P(T > t), evaluated without the 1 - cdf cancellation.
double student_t_upper_tail(double t, double dof);

struct TTestResult {
    double t_stat = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    bool degenerate = false;
};

/// One-sided Welch test of H1: mean(a) > mean(b). When both samples have zero
/// variance the result is decided by the means alone: p = 0, 1 or 0.5 for
/// greater, smaller or equal (t_stat is +inf, -inf or 0, dof 0).
TTestResult welch_t_one_sided(std::span<const double> a, std::span<const double> b);

/// Benjamini-Hochberg step-up at level alpha. Returns the rejection mask in
/// input order; tied p-values always share a verdict.
std::vector<bool> bh_fdr(std::span<const double> p_values, double alpha);

}  // namespace spcnn

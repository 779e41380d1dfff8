#pragma once

#include <vector>

namespace btsnet {

// Regularized incomplete beta function I_x(a, b), continued-fraction form.
double regularized_incomplete_beta(double a, double b, double x);

// P(T <= t) for Student's t with nu degrees of freedom (nu > 0, not
// necessarily integral, as produced by the Welch-Satterthwaite formula).
double student_t_cdf(double t, double nu);

struct WelchResult {
    double mean_a = 0.0;
    double mean_b = 0.0;
    double t = 0.0;         // (mean_a - mean_b) / pooled standard error
    double df = 0.0;        // Welch-Satterthwaite degrees of freedom
    double p_two_sided = 1.0;
};

// Two-sample t-test without the equal-variance assumption. Each sample needs
// at least two values and nonzero combined variance.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace btsnet

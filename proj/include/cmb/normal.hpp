#pragma once

namespace cmb {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Standard normal CDF, accurate to double precision in both tails.
double norm_cdf(double x);

/// Standard normal log density.
double norm_logpdf(double x);

/// Inverse of norm_cdf on (0, 1). Throws DomainError outside the open interval.
double norm_quantile(double p);

/// log N(x; mean, var)
double normal_logpdf(double x, double mean, double var);

}  // namespace cmb

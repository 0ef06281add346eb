#pragma once

#include <span>
#include <vector>

namespace msfpt {

enum class KendallVariant { tau_a, tau_b };

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

// All correlations take equal-length, finite inputs with n >= 2
// (ContractError otherwise). A constant input makes the coefficient
// undefined and raises UndefinedCorrelationError instead of returning NaN.

/// Pearson linear correlation.
double plcc(std::span<const double> pred, std::span<const double> mos);
/// Spearman rank correlation: Pearson correlation of average ranks.
double srcc(std::span<const double> pred, std::span<const double> mos);
/// Kendall rank correlation, tie-corrected tau-b by default.
double krcc(std::span<const double> pred, std::span<const double> mos,
            KendallVariant variant = KendallVariant::tau_b);

/// Challenge main score: PLCC + SRCC.
double main_score(double plcc_value, double srcc_value);

}  // namespace msfpt

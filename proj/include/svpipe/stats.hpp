#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svpipe/image.hpp"

namespace svpipe::stats {

/// 2|A∩B| / (|A|+|B|) over non-zero entries; 1 when both are empty.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// |A∩B| / |A∪B| over non-zero entries; 1 when both are empty.
double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
double dice(const Mask& a, const Mask& b);
double iou(const Mask& a, const Mask& b);

using Pair = std::pair<double, double>;

struct BlandAltman {
    double bias = 0;
    double sd = 0;
    double loa_low = 0;
    double loa_high = 0;
    int n = 0;
};

struct TTest {
    double t_stat = 0;
    double p_value = 1;
    int dof = 0;
};

struct ChiSquared {
    double chi2 = 0;
    double p_value = 1;
    int dof = 0;
};

/// Method agreement of paired measurements (x = method A, y = method B).
struct AgreementStats {
    double bias = 0;
    double loa_low = 0;
    double loa_high = 0;
    double pearson_r = 0;
    double t_stat = 0;
    double p_value = 1;
    int n = 0;
    /// False when a degenerate input left r or the t-test undefined.
    bool pearson_defined = true;
    bool t_test_defined = true;
};

inline constexpr double kLoaMultiplier = 1.96;

/// Differences d = x - y; bias = mean(d); limits = bias ± 1.96·SD(d), n-1 SD.
BlandAltman bland_altman(const std::vector<Pair>& pairs);
/// Two-sided paired t-test on d = x - y with n-1 degrees of freedom.
TTest paired_t_test(const std::vector<Pair>& pairs);
double pearson_r(const std::vector<Pair>& pairs);
/// Pearson chi-squared test of independence on an r×c contingency table.
ChiSquared chi_squared(const std::vector<std::vector<double>>& table);
/// All of the above that are defined for the input; n >= 2 required.
AgreementStats agreement(const std::vector<Pair>& pairs);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);
/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

/// Linear-interpolation percentile (q in [0,1]) of unsorted values.
double percentile(std::vector<double> v, double q);
double median(std::vector<double> v);

struct Summary {
    double median = 0;
    double q1 = 0;
    double q3 = 0;
    double min = 0;
    double max = 0;
    int n = 0;
};
Summary summarize(const std::vector<double>& v);

/// Scatter plot with identity line, as standalone SVG.
std::string scatter_svg(const std::vector<Pair>& pairs, const std::string& title, const std::string& x_label,
                        const std::string& y_label);
/// Mean vs difference plot with bias and limit-of-agreement lines.
std::string bland_altman_svg(const std::vector<Pair>& pairs, const std::string& title, const std::string& units);

}  // namespace svpipe::stats

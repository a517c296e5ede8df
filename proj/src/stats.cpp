#include "svpipe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "svpipe/error.hpp"

namespace svpipe::stats {

namespace {

struct Overlap {
    std::size_t a = 0, b = 0, both = 0;
};

Overlap count_overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size())
        throw StatsError("mask size mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    Overlap o;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        o.a += x;
        o.b += y;
        o.both += x && y;
    }
    return o;
}

void check_shape(const Mask& a, const Mask& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw StatsError("mask shape mismatch: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

void require_pairs(const std::vector<Pair>& pairs, const char* what) {
    if (pairs.size() < 2) throw StatsError(std::string(what) + " needs at least 2 pairs");
    for (const auto& [x, y] : pairs)
        if (!std::isfinite(x) || !std::isfinite(y)) throw StatsError(std::string(what) + ": non-finite value");
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sample standard deviation (n-1), two-pass.
double sd_of(const std::vector<double>& v, double mean) {
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// A spread that is zero up to rounding of the values themselves.
bool negligible_spread(const std::vector<double>& v, double sd) {
    double scale = 0;
    for (double x : v) scale = std::max(scale, std::abs(x));
    return sd <= 1e-13 * std::max(scale, std::numeric_limits<double>::min());
}

std::vector<double> differences(const std::vector<Pair>& pairs) {
    std::vector<double> d;
    d.reserve(pairs.size());
    for (const auto& [x, y] : pairs) d.push_back(x - y);
    return d;
}

constexpr int kMaxIterations = 10000;
constexpr double kTiny = 1e-300;
constexpr double kEps = 1e-16;

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1;
    double d = 1 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < kEps) return h;
    }
    throw StatsError("incomplete beta continued fraction did not converge");
}

double gamma_series(double a, double x) {
    double ap = a, sum = 1 / a, del = sum;
    for (int n = 0; n < kMaxIterations; ++n) {
        ap += 1;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw StatsError("incomplete gamma series did not converge");
}

double gamma_continued_fraction(double a, double x) {
    double b = x + 1 - a, c = 1 / kTiny, d = 1 / b, h = d;
    for (int i = 1; i <= kMaxIterations; ++i) {
        const double an = -i * (i - a);
        b += 2;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < kEps) return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    }
    throw StatsError("incomplete gamma continued fraction did not converge");
}

}  // namespace

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const Overlap o = count_overlap(a, b);
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const Overlap o = count_overlap(a, b);
    const std::size_t uni = o.a + o.b - o.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(o.both) / static_cast<double>(uni);
}

double dice(const Mask& a, const Mask& b) {
    check_shape(a, b);
    return dice(std::span<const std::uint8_t>(a.data), std::span<const std::uint8_t>(b.data));
}

double iou(const Mask& a, const Mask& b) {
    check_shape(a, b);
    return iou(std::span<const std::uint8_t>(a.data), std::span<const std::uint8_t>(b.data));
}

BlandAltman bland_altman(const std::vector<Pair>& pairs) {
    require_pairs(pairs, "bland_altman");
    const auto d = differences(pairs);
    BlandAltman r;
    r.n = static_cast<int>(d.size());
    r.bias = mean_of(d);
    r.sd = sd_of(d, r.bias);
    r.loa_low = r.bias - kLoaMultiplier * r.sd;
    r.loa_high = r.bias + kLoaMultiplier * r.sd;
    return r;
}

TTest paired_t_test(const std::vector<Pair>& pairs) {
    require_pairs(pairs, "paired_t_test");
    const auto d = differences(pairs);
    const double m = mean_of(d);
    const double sd = sd_of(d, m);
    if (negligible_spread(d, sd)) throw StatsError("degenerate differences: zero variance");
    TTest r;
    r.dof = static_cast<int>(d.size()) - 1;
    r.t_stat = m / (sd / std::sqrt(static_cast<double>(d.size())));
    r.p_value = student_t_two_sided_p(r.t_stat, r.dof);
    return r;
}

double pearson_r(const std::vector<Pair>& pairs) {
    require_pairs(pairs, "pearson_r");
    std::vector<double> xs, ys;
    for (const auto& [x, y] : pairs) {
        xs.push_back(x);
        ys.push_back(y);
    }
    const double mx = mean_of(xs), my = mean_of(ys);
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double denom = static_cast<double>(xs.size() - 1);
    if (negligible_spread(xs, std::sqrt(sxx / denom)) || negligible_spread(ys, std::sqrt(syy / denom)))
        throw StatsError("pearson_r: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ChiSquared chi_squared(const std::vector<std::vector<double>>& table) {
    const std::size_t R = table.size();
    if (R == 0 || table[0].empty()) throw StatsError("chi_squared: empty table");
    const std::size_t C = table[0].size();
    std::vector<double> rows(R, 0.0), cols(C, 0.0);
    double total = 0;
    for (std::size_t i = 0; i < R; ++i) {
        if (table[i].size() != C) throw StatsError("chi_squared: ragged table");
        for (std::size_t j = 0; j < C; ++j) {
            const double v = table[i][j];
            if (!std::isfinite(v) || v < 0) throw StatsError("chi_squared: counts must be finite and non-negative");
            rows[i] += v;
            cols[j] += v;
            total += v;
        }
    }
    if (R < 2 || C < 2) throw StatsError("chi_squared: zero degrees of freedom");
    for (double m : rows)
        if (m <= 0) throw StatsError("chi_squared: zero marginal");
    for (double m : cols)
        if (m <= 0) throw StatsError("chi_squared: zero marginal");
    ChiSquared r;
    r.dof = static_cast<int>((R - 1) * (C - 1));
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) {
            const double e = rows[i] * cols[j] / total;
            r.chi2 += (table[i][j] - e) * (table[i][j] - e) / e;
        }
    r.p_value = gamma_q(r.dof / 2.0, r.chi2 / 2.0);
    return r;
}

AgreementStats agreement(const std::vector<Pair>& pairs) {
    const BlandAltman ba = bland_altman(pairs);
    AgreementStats s;
    s.n = ba.n;
    s.bias = ba.bias;
    s.loa_low = ba.loa_low;
    s.loa_high = ba.loa_high;
    try {
        s.pearson_r = pearson_r(pairs);
    } catch (const StatsError&) {
        s.pearson_defined = false;
        s.pearson_r = 0;
    }
    try {
        const TTest t = paired_t_test(pairs);
        s.t_stat = t.t_stat;
        s.p_value = t.p_value;
    } catch (const StatsError&) {
        s.t_test_defined = false;
        s.t_stat = 0;
        s.p_value = 1;
    }
    return s;
}

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0 && b > 0)) throw StatsError("incomplete_beta: a and b must be positive");
    if (!(x >= 0 && x <= 1)) throw StatsError("incomplete_beta: x outside [0,1]");
    if (x == 0) return 0;
    if (x == 1) return 1;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1) / (a + b + 2)) return front * beta_continued_fraction(a, b, x) / a;
    return 1 - front * beta_continued_fraction(b, a, 1 - x) / b;
}

double gamma_p(double a, double x) {
    if (!(a > 0)) throw StatsError("gamma_p: a must be positive");
    if (!(x >= 0)) throw StatsError("gamma_p: x must be non-negative");
    if (x == 0) return 0;
    if (x < a + 1) return gamma_series(a, x);
    return 1 - gamma_continued_fraction(a, x);
}

double gamma_q(double a, double x) {
    if (!(a > 0)) throw StatsError("gamma_q: a must be positive");
    if (!(x >= 0)) throw StatsError("gamma_q: x must be non-negative");
    if (x == 0) return 1;
    if (x < a + 1) return 1 - gamma_series(a, x);
    return gamma_continued_fraction(a, x);
}

double student_t_two_sided_p(double t, double dof) {
    if (!(dof > 0)) throw StatsError("student t: degrees of freedom must be positive");
    if (std::isinf(t)) return 0;
    return std::clamp(incomplete_beta(dof / 2, 0.5, dof / (dof + t * t)), 0.0, 1.0);
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw StatsError("percentile of an empty sample");
    if (!(q >= 0 && q <= 1)) throw StatsError("percentile: q outside [0,1]");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

Summary summarize(const std::vector<double>& v) {
    if (v.empty()) throw StatsError("summary of an empty sample");
    Summary s;
    s.n = static_cast<int>(v.size());
    s.median = percentile(v, 0.5);
    s.q1 = percentile(v, 0.25);
    s.q3 = percentile(v, 0.75);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    return s;
}

}  // namespace svpipe::stats

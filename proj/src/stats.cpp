#include "spcnn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "spcnn/errors.hpp"

namespace spcnn {

namespace {

constexpr int kMaxIterations = 100000;
constexpr double kEpsilon = 1e-16;
constexpr double kTiny = 1e-300;

// Continued fraction for I_x(a, b), valid (fast-converging) for
// x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kEpsilon) return h;
    }
    throw StatisticsError("incomplete beta continued fraction did not converge");
}

double beta_front(double a, double b, double x, double one_minus_x) {
    return std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                    b * std::log(one_minus_x));
}

double sample_mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Two-pass sample variance; exactly zero when all values are identical.
double sample_variance(std::span<const double> v, double mean) {
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x, double one_minus_x) {
    if (!(a > 0.0 && b > 0.0)) throw ParameterError("incomplete beta needs a, b > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw ParameterError("incomplete beta needs x in [0, 1]");
    if (x == 0.0) return 0.0;
    if (one_minus_x == 0.0) return 1.0;
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return beta_front(a, b, x, one_minus_x) * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - beta_front(a, b, x, one_minus_x) * beta_continued_fraction(b, a, one_minus_x) / b;
}

double regularized_incomplete_beta(double a, double b, double x) {
    return regularized_incomplete_beta(a, b, x, 1.0 - x);
}

namespace {

// P(T > |t|) = I_x(dof/2, 1/2) / 2 with x = dof / (dof + t^2).
double two_sided_half(double t, double dof) {
    if (!(dof > 0.0)) throw ParameterError("student t needs dof > 0, got " + std::to_string(dof));
    if (std::isnan(t)) throw ParameterError("student t evaluated at NaN");
    if (std::isinf(t)) return 0.0;
    const double t2 = t * t;
    const double denom = dof + t2;
    return 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / denom, t2 / denom);
}

}  // namespace

double student_t_cdf(double t, double dof) {
    const double tail = two_sided_half(t, dof);
    return t > 0.0 ? 1.0 - tail : tail;
}

double student_t_upper_tail(double t, double dof) {
    const double tail = two_sided_half(t, dof);
    return t > 0.0 ? tail : 1.0 - tail;
}

TTestResult welch_t_one_sided(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw StatisticsError("welch t-test needs at least 2 values per sample");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = sample_mean(a), mb = sample_mean(b);
    const double va = sample_variance(a, ma) / na;
    const double vb = sample_variance(b, mb) / nb;

    TTestResult r;
    if (va == 0.0 && vb == 0.0) {
        r.degenerate = true;
        r.dof = 0.0;
        if (ma > mb) {
            r.t_stat = std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
        } else if (ma < mb) {
            r.t_stat = -std::numeric_limits<double>::infinity();
            r.p_value = 1.0;
        } else {
            r.t_stat = 0.0;
            r.p_value = 0.5;
        }
        return r;
    }
    const double se2 = va + vb;
    r.t_stat = (ma - mb) / std::sqrt(se2);
    r.dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    r.p_value = std::clamp(student_t_upper_tail(r.t_stat, r.dof), 0.0, 1.0);
    return r;
}

std::vector<bool> bh_fdr(std::span<const double> p_values, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("FDR level alpha must lie in (0, 1)");
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("p-value outside [0, 1]: " + std::to_string(p));
    }
    const std::size_t m = p_values.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });
    std::size_t k = 0;  // number of rejections
    for (std::size_t rank = m; rank >= 1; --rank) {
        const double threshold = static_cast<double>(rank) * alpha / static_cast<double>(m);
        if (p_values[order[rank - 1]] <= threshold) {
            k = rank;
            break;
        }
    }
    std::vector<bool> reject(m, false);
    for (std::size_t r = 0; r < k; ++r) reject[order[r]] = true;
    return reject;
}

}  // namespace spcnn

#include "btsnet/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace btsnet {

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
// Converges quickly for x < (a+1)/(a+b+2); the caller uses the symmetry
// I_x(a,b) = 1 - I_{1-x}(b,a) for the other half.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
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
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("regularized_incomplete_beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete beta: a, b must be > 0");
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete beta: x must be in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
    if (!(nu > 0.0)) throw std::invalid_argument("student_t_cdf: nu must be > 0");
    if (t == 0.0) return 0.5;
    const double x = nu / (nu + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(0.5 * nu, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t na = a.size(), nb = b.size();
    if (na < 2 || nb < 2)
        throw std::invalid_argument("welch_t_test: each sample needs at least two values");

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto var_of = [](const std::vector<double>& v, double mean) {
        double s = 0.0;
        for (double x : v) s += (x - mean) * (x - mean);
        return s / static_cast<double>(v.size() - 1);   // unbiased
    };

    WelchResult r;
    r.mean_a = mean_of(a);
    r.mean_b = mean_of(b);
    const double va = var_of(a, r.mean_a) / static_cast<double>(na);
    const double vb = var_of(b, r.mean_b) / static_cast<double>(nb);
    const double se2 = va + vb;
    if (se2 <= 0.0) {
        // Degenerate: both samples constant. Identical means carry p = 1;
        // different means are separated with certainty.
        r.t = r.mean_a == r.mean_b ? 0.0 : std::numeric_limits<double>::infinity() *
                                               (r.mean_a > r.mean_b ? 1.0 : -1.0);
        r.df = static_cast<double>(na + nb - 2);
        r.p_two_sided = r.mean_a == r.mean_b ? 1.0 : 0.0;
        return r;
    }
    r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
    const double denom = va * va / static_cast<double>(na - 1) +
                         vb * vb / static_cast<double>(nb - 1);
    r.df = se2 * se2 / denom;
    r.p_two_sided = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), r.df));
    if (r.p_two_sided < 0.0) r.p_two_sided = 0.0;
    if (r.p_two_sided > 1.0) r.p_two_sided = 1.0;
    return r;
}

}  // namespace btsnet

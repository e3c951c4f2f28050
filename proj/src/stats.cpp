#include "biasrec/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biasrec/errors.hpp"

namespace biasrec {

namespace {

double lchoose(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
    return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
           std::lgamma(static_cast<double>(n - k + 1));
}

// U statistic from x's perspective, ties counting one half.
double u_statistic(const std::vector<double>& x, const std::vector<double>& y) {
    double u = 0.0;
    for (double xi : x) {
        for (double yj : y) {
            if (xi > yj)
                u += 1.0;
            else if (xi == yj)
                u += 0.5;
        }
    }
    return u;
}

}  // namespace

double fisher_exact(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw Error("fisher_exact: negative cell");
    const std::int64_t r1 = a + b;
    const std::int64_t r2 = c + d;
    const std::int64_t c1 = a + c;
    const std::int64_t n = r1 + r2;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c1 == n) return 1.0;

    const std::int64_t lo = std::max<std::int64_t>(0, c1 - r2);
    const std::int64_t hi = std::min(r1, c1);
    const double l_obs = lchoose(r1, a) + lchoose(r2, c1 - a) - lchoose(n, c1);
    // log(1 + 1e-7) of slack on the inclusion comparison.
    const double slack = 1e-7;
    double p = 0.0;
    for (std::int64_t x = lo; x <= hi; ++x) {
        const double lx = lchoose(r1, x) + lchoose(r2, c1 - x) - lchoose(n, c1);
        if (lx <= l_obs + slack) p += std::exp(lx);
    }
    return std::min(p, 1.0);
}

double mann_whitney_exact(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw Error("mann_whitney: empty sample");
    const std::size_t n1 = x.size();
    const std::size_t n = n1 + y.size();

    std::vector<double> pool;
    pool.reserve(n);
    pool.insert(pool.end(), x.begin(), x.end());
    pool.insert(pool.end(), y.begin(), y.end());

    const double mu = static_cast<double>(n1) * static_cast<double>(n - n1) / 2.0;
    const double observed = std::abs(u_statistic(x, y) - mu);

    // Walk every way of assigning n1 pooled values to the first sample.
    std::vector<std::size_t> comb(n1);
    std::iota(comb.begin(), comb.end(), std::size_t{0});
    std::vector<bool> in_x(n);
    std::uint64_t total = 0;
    std::uint64_t extreme = 0;
    while (true) {
        std::fill(in_x.begin(), in_x.end(), false);
        for (std::size_t i : comb) in_x[i] = true;
        double u = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_x[i]) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (in_x[j]) continue;
                if (pool[i] > pool[j])
                    u += 1.0;
                else if (pool[i] == pool[j])
                    u += 0.5;
            }
        }
        ++total;
        if (std::abs(u - mu) >= observed - 1e-9) ++extreme;

        // next combination in lexicographic order
        std::size_t k = n1;
        while (k > 0) {
            --k;
            if (comb[k] != k + n - n1) {
                ++comb[k];
                for (std::size_t j = k + 1; j < n1; ++j) comb[j] = comb[j - 1] + 1;
                break;
            }
            if (k == 0) {
                return static_cast<double>(extreme) / static_cast<double>(total);
            }
        }
    }
}

double mann_whitney_normal(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw Error("mann_whitney: empty sample");
    const double n1 = static_cast<double>(x.size());
    const double n2 = static_cast<double>(y.size());
    const double n = n1 + n2;

    const double u = u_statistic(x, y);
    const double mu = n1 * n2 / 2.0;

    // Tie correction over the pooled sample.
    std::vector<double> pool;
    pool.reserve(static_cast<std::size_t>(n));
    pool.insert(pool.end(), x.begin(), x.end());
    pool.insert(pool.end(), y.begin(), y.end());
    std::sort(pool.begin(), pool.end());
    double tie_sum = 0.0;
    for (std::size_t i = 0; i < pool.size();) {
        std::size_t j = i;
        while (j < pool.size() && pool[j] == pool[i]) ++j;
        const double t = static_cast<double>(j - i);
        tie_sum += t * t * t - t;
        i = j;
    }
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if (var <= 0.0) return 1.0;

    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

double mann_whitney(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw Error("mann_whitney: empty sample");
    if (x.size() + y.size() <= kMannWhitneyExactLimit) return mann_whitney_exact(x, y);
    return mann_whitney_normal(x, y);
}

}  // namespace biasrec

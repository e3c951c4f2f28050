#pragma once

#include <cstdint>
#include <vector>

namespace biasrec {

// Two-sided Fisher exact test on the 2x2 table
//
//       recommended   not
//  pre       a         b
//  post      c         d
//
// p = sum of hypergeometric probabilities of all tables (with the same
// margins) whose probability does not exceed the observed one. A relative
// slack of 1e-7 on the inclusion rule absorbs floating-point noise on
// equal-probability tables, the same convention R uses. Result is in (0, 1].
double fisher_exact(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d);

// Two-sided Mann-Whitney U test. Exact permutation enumeration when
// |x| + |y| <= kMannWhitneyExactLimit, otherwise normal approximation with
// tie and continuity corrections. Ties contribute 1/2 to U.
inline constexpr std::size_t kMannWhitneyExactLimit = 16;

double mann_whitney(const std::vector<double>& x, const std::vector<double>& y);

// Both branches exposed so the boundary behaviour is testable directly.
double mann_whitney_exact(const std::vector<double>& x, const std::vector<double>& y);
double mann_whitney_normal(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace biasrec

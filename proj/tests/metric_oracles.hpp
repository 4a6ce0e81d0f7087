// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Scalar-loop references for the text metrics.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace mmpaint::testing {

inline std::vector<std::string> grams(const std::vector<std::string>& t, int n) {
  std::vector<std::string> out;
  for (int i = 0; i + n <= static_cast<int>(t.size()); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += t[static_cast<std::size_t>(i + k)] + "\x1f";
    out.push_back(g);
  }
  return out;
}

inline int count_of(const std::vector<std::string>& v, const std::string& g) {
  int c = 0;
  for (const auto& x : v) c += x == g;
  return c;
}

inline double oracle_bleu(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs,
                   int max_n, double eps) {
  if (cand.empty()) return 0;
  const int orders = std::min<int>(max_n, static_cast<int>(cand.size()));
  double prod = 1;
  for (int n = 1; n <= orders; ++n) {
    const auto cg = grams(cand, n);
    double clipped = 0;
    std::vector<std::string> seen;
    for (const auto& g : cg) {
      if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
      seen.push_back(g);
      int best = 0;
      for (const auto& r : refs) best = std::max(best, count_of(grams(r, n), g));
      clipped += std::min(count_of(cg, g), best);
    }
    prod *= (clipped > 0 ? clipped : eps) / static_cast<double>(cg.size());
  }
  std::size_t r = refs[0].size();
  for (const auto& ref : refs) {
    const long d1 = std::labs(static_cast<long>(ref.size()) - static_cast<long>(cand.size()));
    const long d0 = std::labs(static_cast<long>(r) - static_cast<long>(cand.size()));
    if (d1 < d0 || (d1 == d0 && ref.size() < r)) r = ref.size();
  }
  const double bp = cand.size() > r ? 1 : std::exp(1 - static_cast<double>(r) / cand.size());
  return bp * std::pow(prod, 1.0 / orders);
}

inline double oracle_distinct(const std::vector<std::string>& t, int n) {
  const auto g = grams(t, n);
  if (g.empty()) return 0;
  int unique = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    bool dup = false;
    for (std::size_t j = 0; j < i; ++j) dup = dup || g[j] == g[i];
    unique += !dup;
  }
  return static_cast<double>(unique) / g.size();
}

inline std::size_t oracle_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b, std::size_t i = 0,
                       std::size_t j = 0) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + oracle_lcs(a, b, i + 1, j + 1);
  return std::max(oracle_lcs(a, b, i + 1, j), oracle_lcs(a, b, i, j + 1));
}

inline std::string random_sentence(std::mt19937& g, int vocab, int min_len, int max_len) {
  static const char* words[] = {"a", "red", "boat", "on", "the", "water", "tall", "tree", "sky", "cloud", "house", "old"};
  const int len = std::uniform_int_distribution<int>(min_len, max_len)(g);
  std::string s;
  for (int i = 0; i < len; ++i) s += std::string(i ? " " : "") + words[std::uniform_int_distribution<int>(0, vocab - 1)(g)];
  return s;
}

}  // namespace mmpaint::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sizerec/layers.hpp"

// Test-only oracles, independent of the library's computation paths.
namespace testsupport {

struct FdReport {
  double max_rel = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
};

// Central finite differences against reverse-mode gradients. `skip` marks
// pinned entries (the PAD rows of embedding tables) that are constants by
// contract, not free parameters.
template <class LossFn>
FdReport fd_check(std::vector<std::pair<std::string, sizerec::nn::Tensor>> params,
                  LossFn loss_fn, double eps = 1e-5,
                  std::function<bool(const std::string&, size_t)> skip = nullptr) {
  using namespace sizerec::nn;
  for (auto& [name, p] : params) p.clear_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> grads;
  for (auto& [name, p] : params)
    grads.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));

  FdReport rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    sizerec::nn::Tensor& p = params[pi].second;
    for (size_t j = 0; j < p.size(); ++j) {
      if (skip && skip(params[pi].first, j)) continue;
      double orig = p.data()[j];
      double lp, lm;
      {
        NoGradGuard guard;
        p.data()[j] = orig + eps;
        lp = loss_fn().item();
        p.data()[j] = orig - eps;
        lm = loss_fn().item();
        p.data()[j] = orig;
      }
      double fd = (lp - lm) / (2.0 * eps);
      double ad = grads[pi][j];
      double denom = std::max({std::abs(fd), std::abs(ad), 1e-3});
      double rel = std::abs(fd - ad) / denom;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst_param = params[pi].first;
        rep.worst_index = j;
      }
    }
  }
  for (auto& [name, p] : params) p.clear_grad();
  return rep;
}

inline bool skip_pad_row(const std::string& name, size_t idx, size_t dim) {
  return name.find("weight") != std::string::npos && idx < dim;
}

// Scalar Adam reference (bias-corrected, decoupled weight decay).
struct AdamOracle {
  double lr, wd, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double param, double grad) {
    ++t;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    double mhat = m / (1 - std::pow(b1, t));
    double vhat = v / (1 - std::pow(b2, t));
    return param - lr * (mhat / (std::sqrt(vhat) + eps) + wd * param);
  }
};

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double out = 0.0;
  for (size_t i = 0; i < a.size() && i < b.size(); ++i)
    out = std::max(out, std::abs(a[i] - b[i]));
  if (a.size() != b.size()) return 1e300;
  return out;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

}  // namespace testsupport

#include <map>

#include "sizerec/models.hpp"

namespace testsupport {

// Brute-force hierarchical-mode oracle: rescans the raw training list per
// query instead of using fitted tables.
inline std::vector<int> pmcv_oracle_rank(const std::vector<sizerec::Query>& train,
                                         const sizerec::Query& q) {
  using sizerec::Query;
  struct Tmpl {
    bool user, category, brand;
  };
  static const Tmpl kTemplates[] = {{true, true, true},  {true, false, true},
                                    {true, true, false}, {true, false, false},
                                    {false, true, true}, {false, false, true}};
  auto counts_for = [&](const Tmpl& t, bool* key_exists) {
    std::map<int, int64_t> counts;
    *key_exists = false;
    for (const Query& r : train) {
      if (t.user && r.raw_user != q.raw_user) continue;
      if (t.category && r.raw_category != q.raw_category) continue;
      if (t.brand && r.raw_brand != q.raw_brand) continue;
      *key_exists = true;
      ++counts[r.label];
    }
    return counts;
  };
  auto ordered = [](const std::map<int, int64_t>& counts) {
    std::vector<std::pair<int, int64_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    return v;
  };
  std::map<int, int64_t> global;
  for (const Query& r : train) ++global[r.label];

  std::vector<int> ranking;
  std::vector<char> used(q.scale_len, 0);
  auto push = [&](int pos) {
    if (pos < q.scale_len && !used[pos]) {
      used[pos] = 1;
      ranking.push_back(pos);
    }
  };
  for (const Tmpl& t : kTemplates) {
    bool exists = false;
    auto counts = counts_for(t, &exists);
    if (!exists) continue;
    auto ord = ordered(counts);
    bool feasible = std::any_of(ord.begin(), ord.end(),
                                [&](const auto& pc) { return pc.first < q.scale_len; });
    if (!feasible) continue;
    for (const auto& [pos, c] : ord) push(pos);
    break;
  }
  if (ranking.empty())
    for (const auto& [pos, c] : ordered(global)) push(pos);
  for (const auto& [pos, c] : ordered(global)) push(pos);
  for (int pos = 0; pos < q.scale_len; ++pos) push(pos);
  return ranking;
}

}  // namespace testsupport

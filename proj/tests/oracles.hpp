#pragma once

// Brute-force reference implementations. They recompute everything from
// scratch per query (no cached norms, no partial sorts) but use the same
// per-element arithmetic, so results must agree bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace oracle {

using lookwhen::Tensor;

inline std::size_t rows_of(const Tensor& f) { return f.numel() / f.shape().back(); }

inline double dot(const Tensor& f, std::size_t p, std::size_t q) {
  const std::size_t d = f.shape().back();
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += f[p * d + i] * f[q * d + i];
  return s;
}

inline double cosine(const Tensor& f, std::size_t p, std::size_t q) {
  return dot(f, p, q) / (std::sqrt(dot(f, p, p)) * std::sqrt(dot(f, q, q)));
}

inline std::vector<double> top1(const Tensor& f) {
  const std::size_t m = rows_of(f);
  std::vector<double> u(m);
  for (std::size_t p = 0; p < m; ++p) {
    double best = -2.0;
    for (std::size_t q = 0; q < m; ++q)
      if (q != p) best = std::max(best, cosine(f, p, q));
    u[p] = 1.0 - best;
  }
  return u;
}

inline std::vector<double> topk(const Tensor& f, std::size_t k) {
  const std::size_t m = rows_of(f);
  std::vector<double> u(m);
  for (std::size_t p = 0; p < m; ++p) {
    std::vector<double> sims;
    for (std::size_t q = 0; q < m; ++q)
      if (q != p) sims.push_back(cosine(f, p, q));
    std::sort(sims.begin(), sims.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += 1.0 - sims[i];
    u[p] = s / static_cast<double>(k);
  }
  return u;
}

// Farthest-point order by recomputing every min-distance from the chosen set
// at every step.
inline std::vector<std::size_t> fps_order(const Tensor& f, bool feature) {
  const std::size_t m = rows_of(f), d = f.shape().back();
  std::vector<double> mean(d, 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t i = 0; i < d; ++i) mean[i] += f[p * d + i];
  for (double& v : mean) v /= static_cast<double>(m);

  auto dist_vec = [&](std::size_t p, const std::vector<double>& v) {
    if (feature) {
      double pv = 0.0, vv = 0.0;
      for (std::size_t i = 0; i < d; ++i) pv += f[p * d + i] * v[i];
      for (std::size_t i = 0; i < d; ++i) vv += v[i] * v[i];
      const double vn = std::sqrt(vv);
      if (!(vn > 0.0)) return 1.0;
      return 1.0 - pv / (std::sqrt(dot(f, p, p)) * vn);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (f[p * d + i] - v[i]) * (f[p * d + i] - v[i]);
    return std::sqrt(s);
  };
  auto dist = [&](std::size_t p, std::size_t q) {
    return dist_vec(p, std::vector<double>(f.data().begin() + static_cast<std::ptrdiff_t>(q * d),
                                           f.data().begin() + static_cast<std::ptrdiff_t>((q + 1) * d)));
  };

  std::vector<std::size_t> order;
  std::size_t first = 0;
  for (std::size_t p = 1; p < m; ++p)
    if (dist_vec(p, mean) > dist_vec(first, mean)) first = p;
  order.push_back(first);
  while (order.size() < m) {
    std::size_t best = m;
    double best_d = -1.0;
    for (std::size_t p = 0; p < m; ++p) {
      if (std::find(order.begin(), order.end(), p) != order.end()) continue;
      double md = INFINITY;
      for (std::size_t q : order) md = std::min(md, dist(p, q));
      if (md > best_d) {
        best_d = md;
        best = p;
      }
    }
    order.push_back(best);
  }
  return order;
}

inline std::vector<double> kcenter(const Tensor& f, bool feature) {
  const auto order = fps_order(f, feature);
  const std::size_t m = order.size();
  std::vector<double> u(m);
  for (std::size_t i = 0; i < m; ++i)
    u[order[i]] = m == 1 ? 1.0 : static_cast<double>(m - 1 - i) / static_cast<double>(m - 1);
  return u;
}

inline std::vector<double> delta_attn(const Tensor& a) {
  const std::size_t t = a.dim(0), plane = a.numel() / t;
  std::vector<double> u(a.numel());
  for (std::size_t f = 0; f < t; ++f) {
    const std::size_t cur = f == 0 ? 1 : f;
    for (std::size_t i = 0; i < plane; ++i) u[f * plane + i] = std::abs(a[cur * plane + i] - a[(cur - 1) * plane + i]);
  }
  return u;
}

// Position of each element in the ascending (score, index) order, as i/(M-1).
inline std::vector<double> ranks(const std::vector<double>& s) {
  const std::size_t m = s.size();
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < m; ++i) v.emplace_back(s[i], i);
  std::sort(v.begin(), v.end());
  std::vector<double> r(m);
  for (std::size_t i = 0; i < m; ++i)
    r[v[i].second] = m == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(m - 1);
  return r;
}

inline std::vector<double> even_spacing(std::size_t m) {
  std::vector<double> r(m);
  for (std::size_t i = 0; i < m; ++i) r[i] = m == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(m - 1);
  return r;
}

}  // namespace oracle

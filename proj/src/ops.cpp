#include "ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "error.hpp"

namespace lookwhen {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Tape* same_tape(std::span<const Var> vars, const char* op) {
  if (vars.empty()) throw InvalidArgument(std::string(op) + ": no inputs");
  Tape* t = vars.front().tape;
  for (const Var& v : vars) {
    if (v.tape != t || t == nullptr) throw InvalidArgument(std::string(op) + ": inputs on different tapes");
  }
  return t;
}

std::size_t last_dim(const Tensor& t) { return t.ndim() == 0 ? 1 : t.shape().back(); }

// acc += a * b^T for a [m x n], b [k x n] -> acc [m x k]
void accumulate_a_bt(const Tensor& a, const Tensor& b, Tensor& acc) {
  const std::size_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * b[p * n + j];
      acc[i * k + p] += s;
    }
  }
}

// acc += a^T * b for a [m x k], b [m x n] -> acc [k x n]
void accumulate_at_b(const Tensor& a, const Tensor& b, Tensor& acc) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) acc[p * n + j] += aip * b[i * n + j];
    }
  }
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
    }
  }
  return c;
}

Tensor softmax(const Tensor& x) {
  Tensor y = x;
  const std::size_t n = last_dim(x);
  for (std::size_t r = 0; r < x.numel() / n; ++r) {
    const std::size_t base = r * n;
    double mx = x[base];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[base + j] = std::exp(x[base + j] - mx);
      z += y[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[base + j] /= z;
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = last_dim(x);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor y = x;
  for (std::size_t r = 0; r < x.numel() / d; ++r) {
    const std::size_t base = r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[base + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[base + j] - mean) * (x[base + j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      y[base + j] = (x[base + j] - mean) * inv * gamma[j] + beta[j];
    }
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * normal_cdf(x[i]);
  return y;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return y;
}

Var matmul(Var a, Var b) {
  Tape* t = same_tape(std::array{a, b}, "matmul");
  return t->record("matmul", matmul(a.value(), b.value()), {a, b},
                   [t, a, b](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     if (gin[0]) accumulate_a_bt(g, t->value(b), *gin[0]);
                     if (gin[1]) accumulate_at_b(t->value(a), g, *gin[1]);
                   });
}

Var add(Var a, Var b) {
  Tape* t = same_tape(std::array{a, b}, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return t->record("add", std::move(out), {a, b},
                   [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     for (Tensor* gi : gin) {
                       if (!gi) continue;
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
                     }
                   });
}

Var sub(Var a, Var b) {
  Tape* t = same_tape(std::array{a, b}, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return t->record("sub", std::move(out), {a, b},
                   [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     if (gin[0])
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gin[1])[i] -= g[i];
                   });
}

Var add_bias(Var x, Var b) {
  Tape* t = same_tape(std::array{x, b}, "add_bias");
  const std::size_t n = last_dim(x.value());
  if (b.value().numel() != n || b.value().ndim() != 1) {
    throw DimensionError("add_bias: bias " + shape_str(b.value().shape()) + " for input " +
                         shape_str(x.value().shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i % n];
  return t->record("add_bias", std::move(out), {x, b},
                   [n](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     if (gin[0])
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gin[1])[i % n] += g[i];
                   });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return x.tape->record("scale", std::move(out), {x},
                        [c](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                          for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += c * g[i];
                        });
}

Var gelu(Var x) {
  Tape* t = x.tape;
  return t->record("gelu", gelu(x.value()), {x},
                   [t, x](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     const Tensor& xv = t->value(x);
                     constexpr double inv_sqrt_2pi = 0.3989422804014327;
                     for (std::size_t i = 0; i < g.numel(); ++i) {
                       const double v = xv[i];
                       const double d = normal_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
                       (*gin[0])[i] += g[i] * d;
                     }
                   });
}

Var softmax(Var x) {
  return x.tape->record("softmax", softmax(x.value()), {x},
                        [](const Tensor& s, const Tensor& g, std::span<Tensor* const> gin) {
                          const std::size_t n = last_dim(s);
                          for (std::size_t r = 0; r < s.numel() / n; ++r) {
                            const std::size_t base = r * n;
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * s[base + j];
                            for (std::size_t j = 0; j < n; ++j) {
                              (*gin[0])[base + j] += s[base + j] * (g[base + j] - dot);
                            }
                          }
                        });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape* t = same_tape(std::array{x, gamma, beta}, "layer_norm");
  Tensor out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  return t->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [t, x, gamma, eps](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& xv = t->value(x);
        const Tensor& gv = t->value(gamma);
        const std::size_t d = last_dim(xv);
        const double dd = static_cast<double>(d);
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < xv.numel() / d; ++r) {
          const std::size_t base = r * d;
          double mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) mean += xv[base + j];
          mean /= dd;
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) var += (xv[base + j] - mean) * (xv[base + j] - mean);
          var /= dd;
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xv[base + j] - mean) * inv;
            dxhat[j] = g[base + j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
            if (gin[1]) (*gin[1])[j] += g[base + j] * xhat[j];
            if (gin[2]) (*gin[2])[j] += g[base + j];
          }
          mean_dxhat /= dd;
          mean_dxhat_xhat /= dd;
          if (gin[0]) {
            for (std::size_t j = 0; j < d; ++j) {
              (*gin[0])[base + j] += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Var transpose(Var x) {
  return x.tape->record("transpose", transpose(x.value()), {x},
                        [](const Tensor& out, const Tensor& g, std::span<Tensor* const> gin) {
                          const std::size_t n = out.dim(0), m = out.dim(1);
                          for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t i = 0; i < m; ++i) (*gin[0])[i * n + j] += g[j * m + i];
                        });
}

Var reshape(Var x, Shape shape) {
  return x.tape->record("reshape", x.value().reshaped(std::move(shape)), {x},
                        [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                          for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
                        });
}

Var gather(Var x, Shape out_shape, std::vector<std::size_t> src) {
  const Tensor& xv = x.value();
  if (shape_numel(out_shape) != src.size()) {
    throw DimensionError("gather: " + std::to_string(src.size()) + " indices for output " +
                         shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= xv.numel()) {
      throw DimensionError("gather: source index " + std::to_string(src[i]) + " out of range for " +
                           shape_str(xv.shape()));
    }
    out[i] = xv[src[i]];
  }
  return x.tape->record("gather", std::move(out), {x},
                        [src = std::move(src)](const Tensor&, const Tensor& g,
                                               std::span<Tensor* const> gin) {
                          for (std::size_t i = 0; i < src.size(); ++i) (*gin[0])[src[i]] += g[i];
                        });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "gather_rows");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: no rows requested");
  std::vector<std::size_t> src;
  src.reserve(rows.size() * n);
  for (std::size_t r : rows) {
    if (r >= m) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(xv.shape()));
    }
    for (std::size_t j = 0; j < n; ++j) src.push_back(r * n + j);
  }
  return gather(x, {rows.size(), n}, std::move(src));
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "slice_rows");
  if (begin >= end || end > xv.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(1);
  Tensor out({end - begin, n},
             std::vector<double>(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                                 xv.data().begin() + static_cast<std::ptrdiff_t>(end * n)));
  return x.tape->record("slice_rows", std::move(out), {x},
                        [begin, n](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                          for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[begin * n + i] += g[i];
                        });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "slice_cols");
  if (begin >= end || end > xv.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.dim(0), n = xv.dim(1), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * n + begin + j];
  return x.tape->record("slice_cols", std::move(out), {x},
                        [begin, n, w](const Tensor& o, const Tensor& g, std::span<Tensor* const> gin) {
                          for (std::size_t i = 0; i < o.dim(0); ++i)
                            for (std::size_t j = 0; j < w; ++j) (*gin[0])[i * n + begin + j] += g[i * w + j];
                        });
}

Var concat_rows(std::span<const Var> parts) {
  Tape* t = same_tape(parts, "concat_rows");
  require_rank(parts.front().value(), 2, "concat_rows");
  const std::size_t n = parts.front().value().dim(1);
  std::size_t rows = 0;
  std::vector<double> data;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_rank(v, 2, "concat_rows");
    if (v.dim(1) != n) {
      throw DimensionError("concat_rows: width " + std::to_string(v.dim(1)) + " vs " + std::to_string(n));
    }
    rows += v.dim(0);
    data.insert(data.end(), v.data().begin(), v.data().end());
    sizes.push_back(v.numel());
  }
  return t->record("concat_rows", Tensor({rows, n}, std::move(data)),
                   std::vector<Var>(parts.begin(), parts.end()),
                   [sizes = std::move(sizes)](const Tensor&, const Tensor& g,
                                              std::span<Tensor* const> gin) {
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < sizes.size(); ++p) {
                       if (gin[p])
                         for (std::size_t i = 0; i < sizes[p]; ++i) (*gin[p])[i] += g[off + i];
                       off += sizes[p];
                     }
                   });
}

Var concat_cols(std::span<const Var> parts) {
  Tape* t = same_tape(parts, "concat_cols");
  require_rank(parts.front().value(), 2, "concat_cols");
  const std::size_t m = parts.front().value().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_rank(v, 2, "concat_cols");
    if (v.dim(0) != m) {
      throw DimensionError("concat_cols: height " + std::to_string(v.dim(0)) + " vs " + std::to_string(m));
    }
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor out({m, total});
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * total + col + j] = v[i * widths[p] + j];
    col += widths[p];
  }
  return t->record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [widths = std::move(widths), m, total](const Tensor&, const Tensor& g,
                                                          std::span<Tensor* const> gin) {
                     std::size_t col = 0;
                     for (std::size_t p = 0; p < widths.size(); ++p) {
                       if (gin[p])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < widths[p]; ++j)
                             (*gin[p])[i * widths[p] + j] += g[i * total + col + j];
                       col += widths[p];
                     }
                   });
}

Var mse(Var a, Var b) {
  Tape* t = same_tape(std::array{a, b}, "mse");
  require_same_shape(a.value(), b.value(), "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv_n = 1.0 / static_cast<double>(av.numel());
  return t->record("mse", Tensor::scalar(s * inv_n), {a, b},
                   [t, a, b, inv_n](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                     const Tensor& av = t->value(a);
                     const Tensor& bv = t->value(b);
                     const double c = 2.0 * inv_n * g[0];
                     for (std::size_t i = 0; i < av.numel(); ++i) {
                       const double d = c * (av[i] - bv[i]);
                       if (gin[0]) (*gin[0])[i] += d;
                       if (gin[1]) (*gin[1])[i] -= d;
                     }
                   });
}

Var bce_with_logits(Var logits, const Tensor& target) {
  const Tensor& x = logits.value();
  require_same_shape(x, target, "bce_with_logits");
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    s += std::max(v, 0.0) - v * target[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tape* t = logits.tape;
  return t->record("bce_with_logits", Tensor::scalar(s * inv_n), {logits},
                   [t, logits, target, inv_n](const Tensor&, const Tensor& g,
                                              std::span<Tensor* const> gin) {
                     const Tensor& x = t->value(logits);
                     for (std::size_t i = 0; i < x.numel(); ++i) {
                       const double sig = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                                      : std::exp(x[i]) / (1.0 + std::exp(x[i]));
                       (*gin[0])[i] += g[0] * inv_n * (sig - target[i]);
                     }
                   });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  require_rank(x, 2, "softmax_cross_entropy");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
    }
  }
  const Tensor probs = softmax(x);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * c;
    double mx = x[base];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[base + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[base + j] - mx);
    s += mx + std::log(z) - x[base + static_cast<std::size_t>(labels[i])];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record("softmax_cross_entropy", Tensor::scalar(s * inv_n), {logits},
                             [probs, lab = std::move(lab), c, inv_n](const Tensor&, const Tensor& g,
                                                                     std::span<Tensor* const> gin) {
                               for (std::size_t i = 0; i < lab.size(); ++i)
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                                   (*gin[0])[i * c + j] += g[0] * inv_n * (probs[i * c + j] - onehot);
                                 }
                             });
}

}  // namespace lookwhen

#include "cgan/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cgan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using Backward = std::function<void(detail::Node&)>;

Tensor finish(const char* op, Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, Backward backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward = std::move(backward);
  return out;
}

bool wants(const detail::Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

double* pgrad(detail::Node& self, std::size_t i) { return self.parents[i]->grad_data(); }

const std::vector<double>& pval(const detail::Node& self, std::size_t i) {
  return self.parents[i]->value;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

struct TimeDims {
  std::size_t batch, time, hidden;
};

TimeDims time_dims(const char* op, const Tensor& h, std::span<const std::size_t> lengths) {
  require_rank(op, h, 3);
  TimeDims d{h.dim(0), h.dim(1), h.dim(2)};
  if (!lengths.empty()) {
    if (lengths.size() != d.batch) {
      throw ShapeError(op, "lengths has " + std::to_string(lengths.size()) +
                               " entries for batch " + std::to_string(d.batch));
    }
    for (auto len : lengths) {
      if (len == 0 || len > d.time) {
        throw ShapeError(op, "length " + std::to_string(len) + " outside 1.." +
                                 std::to_string(d.time));
      }
    }
  }
  return d;
}

std::size_t length_of(std::span<const std::size_t> lengths, std::size_t b, std::size_t t) {
  return lengths.empty() ? t : lengths[b];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() =
      MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return finish("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    MapC g(self.grad.data(), m, n);
    if (wants(self, 0)) {
      Map(pgrad(self, 0), m, k).noalias() += g * MapC(pval(self, 1).data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      Map(pgrad(self, 1), k, n).noalias() += MapC(pval(self, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt", a.shape(), b.shape());
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() =
      MapC(a.values().data(), m, k) * MapC(b.values().data(), n, k).transpose();
  return finish("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    MapC g(self.grad.data(), m, n);
    if (wants(self, 0)) {
      Map(pgrad(self, 0), m, k).noalias() += g * MapC(pval(self, 1).data(), n, k);
    }
    if (wants(self, 1)) {
      Map(pgrad(self, 1), n, k).noalias() += g.transpose() * MapC(pval(self, 0).data(), m, k);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return finish("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      double* g = pgrad(self, p);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return finish("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (wants(self, 0)) {
      double* g = pgrad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      double* g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return finish("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = pval(self, 0);
    const auto& bv = pval(self, 1);
    if (wants(self, 0)) {
      double* g = pgrad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      double* g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  const auto n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) throw ShapeError("add_bias", x.shape(), bias.shape());
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.at(i % n);
  return finish("add_bias", x.shape(), std::move(out), {x, bias}, [n](detail::Node& self) {
    if (wants(self, 0)) {
      double* g = pgrad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      double* g = pgrad(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return finish("scale", x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + value;
  return finish("add_scalar", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return finish("sigmoid", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.at(i));
  return finish("tanh", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.at(i));
  return finish("relu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    const auto& in = pval(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in[i] > 0) g[i] += self.grad[i];
    }
  });
}

Tensor apply_mask(const Tensor& x, std::span<const double> mask) {
  if (mask.size() != x.size()) {
    throw ShapeError("apply_mask", "mask has " + std::to_string(mask.size()) +
                                       " entries for " + shape_string(x.shape()));
  }
  std::vector<double> m(mask.begin(), mask.end());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * m[i];
  return finish("apply_mask", x.shape(), std::move(out), {x},
                [m = std::move(m)](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * m[i];
                });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat", "axis out of range for " + shape_string(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) throw ShapeError("concat", first, p.shape());
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat", first, p.shape());
    widths.push_back(p.dim(axis) * inner);
    total += p.dim(axis);
  }
  Shape shape = first;
  shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * widths[k], widths[k], out.begin() + o * row + offset);
    }
    offset += widths[k];
  }
  return finish("concat", std::move(shape), std::move(out), parts,
                [widths, outer, row](detail::Node& self) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    if (wants(self, k)) {
                      double* g = pgrad(self, k);
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                          g[o * widths[k] + j] += self.grad[o * row + off + j];
                        }
                      }
                    }
                    off += widths[k];
                  }
                });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                  ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t start = begin * inner;
  std::vector<double> out(outer * width);
  auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + o * src_row + start, width, out.begin() + o * width);
  }
  Shape shape = s;
  shape[axis] = end - begin;
  return finish("slice", std::move(shape), std::move(out), {x},
                [outer, src_row, width, start](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t j = 0; j < width; ++j) {
                      g[o * src_row + start + j] += self.grad[o * width + j];
                    }
                  }
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return finish("reshape", std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor swap_leading(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("swap_leading", "needs rank >= 2, got " + shape_string(x.shape()));
  const auto a = x.dim(0), b = x.dim(1);
  const auto inner = x.size() / (a * b);
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(v.begin() + (i * b + j) * inner, inner, out.begin() + (j * a + i) * inner);
    }
  }
  Shape shape = x.shape();
  std::swap(shape[0], shape[1]);
  return finish("swap_leading", std::move(shape), std::move(out), {x}, [a, b, inner](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        for (std::size_t k = 0; k < inner; ++k) {
          g[(i * b + j) * inner + k] += self.grad[(j * a + i) * inner + k];
        }
      }
    }
  });
}

Tensor stack_time(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ShapeError("stack_time", "no time steps");
  require_rank("stack_time", steps[0], 2);
  const auto batch = steps[0].dim(0), hidden = steps[0].dim(1), time = steps.size();
  for (const auto& s : steps) require_same("stack_time", steps[0], s);
  std::vector<double> out(batch * time * hidden);
  for (std::size_t t = 0; t < time; ++t) {
    auto v = steps[t].values();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(v.begin() + b * hidden, hidden, out.begin() + (b * time + t) * hidden);
    }
  }
  return finish("stack_time", {batch, time, hidden}, std::move(out), steps,
                [batch, time, hidden](detail::Node& self) {
                  for (std::size_t t = 0; t < time; ++t) {
                    if (!wants(self, t)) continue;
                    double* g = pgrad(self, t);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t j = 0; j < hidden; ++j) {
                        g[b * hidden + j] += self.grad[(b * time + t) * hidden + j];
                      }
                    }
                  }
                });
}

Tensor embedding(const Tensor& weight, std::span<const int> ids) {
  require_rank("embedding", weight, 2);
  const auto vocab = weight.dim(0), width = weight.dim(1);
  if (ids.empty()) throw ShapeError("embedding", "empty id list");
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * width);
  auto w = weight.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(rows[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(w.begin() + rows[i] * width, width, out.begin() + i * width);
  }
  const std::size_t count = rows.size();
  return finish("embedding", {count, width}, std::move(out), {weight},
                [rows = std::move(rows), width](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    for (std::size_t j = 0; j < width; ++j) {
                      g[rows[i] * width + j] += self.grad[i * width + j];
                    }
                  }
                });
}

Tensor max_pool_time(const Tensor& h, std::span<const std::size_t> lengths) {
  const auto d = time_dims("max_pool_time", h, lengths);
  std::vector<double> out(d.batch * d.hidden);
  std::vector<std::size_t> argmax(d.batch * d.hidden);
  auto v = h.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    const auto len = length_of(lengths, b, d.time);
    for (std::size_t j = 0; j < d.hidden; ++j) {
      std::size_t best = b * d.time * d.hidden + j;
      for (std::size_t t = 1; t < len; ++t) {
        const auto idx = (b * d.time + t) * d.hidden + j;
        if (v[idx] > v[best]) best = idx;
      }
      out[b * d.hidden + j] = v[best];
      argmax[b * d.hidden + j] = best;
    }
  }
  return finish("max_pool_time", {d.batch, d.hidden}, std::move(out), {h},
                [argmax = std::move(argmax)](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
                });
}

Tensor mean_pool_time(const Tensor& h, std::span<const std::size_t> lengths) {
  const auto d = time_dims("mean_pool_time", h, lengths);
  std::vector<std::size_t> lens(d.batch);
  for (std::size_t b = 0; b < d.batch; ++b) lens[b] = length_of(lengths, b, d.time);
  std::vector<double> out(d.batch * d.hidden, 0.0);
  auto v = h.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < lens[b]; ++t) {
      for (std::size_t j = 0; j < d.hidden; ++j) {
        out[b * d.hidden + j] += v[(b * d.time + t) * d.hidden + j];
      }
    }
    for (std::size_t j = 0; j < d.hidden; ++j) out[b * d.hidden + j] /= static_cast<double>(lens[b]);
  }
  return finish("mean_pool_time", {d.batch, d.hidden}, std::move(out), {h},
                [d, lens = std::move(lens)](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t b = 0; b < d.batch; ++b) {
                    const double inv = 1.0 / static_cast<double>(lens[b]);
                    for (std::size_t t = 0; t < lens[b]; ++t) {
                      for (std::size_t j = 0; j < d.hidden; ++j) {
                        g[(b * d.time + t) * d.hidden + j] += self.grad[b * d.hidden + j] * inv;
                      }
                    }
                  }
                });
}

Tensor last_time(const Tensor& h, std::span<const std::size_t> lengths) {
  const auto d = time_dims("last_time", h, lengths);
  std::vector<std::size_t> src(d.batch);
  std::vector<double> out(d.batch * d.hidden);
  auto v = h.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    src[b] = (b * d.time + length_of(lengths, b, d.time) - 1) * d.hidden;
    std::copy_n(v.begin() + src[b], d.hidden, out.begin() + b * d.hidden);
  }
  return finish("last_time", {d.batch, d.hidden}, std::move(out), {h},
                [d, src = std::move(src)](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  for (std::size_t b = 0; b < d.batch; ++b) {
                    for (std::size_t j = 0; j < d.hidden; ++j) {
                      g[src[b] + j] += self.grad[b * d.hidden + j];
                    }
                  }
                });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax", "rank-0 input");
  const auto n = x.shape().back();
  const auto rows = x.size() / n;
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return finish("softmax", x.shape(), std::move(out), {x}, [rows, n](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax", "rank-0 input");
  const auto n = x.shape().back();
  const auto rows = x.size() / n;
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lse;
  }
  return finish("log_softmax", x.shape(), std::move(out), {x}, [rows, n](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) total += gy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool train) {
  require_rank("batch_norm", x, 2);
  const auto batch = x.dim(0), features = x.dim(1);
  if (gamma.shape() != Shape{features}) throw ShapeError("batch_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{features}) throw ShapeError("batch_norm", x.shape(), beta.shape());
  if (stats.running_mean.size() != features || stats.running_var.size() != features) {
    throw ShapeError("batch_norm", "running statistics sized for " +
                                       std::to_string(stats.running_mean.size()) + " features, input " +
                                       shape_string(x.shape()));
  }
  if (train && batch < 2) {
    throw ShapeError("batch_norm", "train mode needs batch size >= 2, got " + std::to_string(batch) +
                                       "; use eval mode for single examples");
  }
  auto v = x.values();
  std::vector<double> mu(features, 0.0), inv_std(features);
  if (train) {
    std::vector<double> var(features, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t f = 0; f < features; ++f) mu[f] += v[b * features + f];
    for (auto& m : mu) m /= static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < features; ++f) {
        const double d = v[b * features + f] - mu[f];
        var[f] += d * d;
      }
    }
    for (std::size_t f = 0; f < features; ++f) {
      const double biased = var[f] / static_cast<double>(batch);
      const double unbiased = var[f] / static_cast<double>(batch - 1);
      inv_std[f] = 1.0 / std::sqrt(biased + stats.eps);
      stats.running_mean[f] = (1 - stats.momentum) * stats.running_mean[f] + stats.momentum * mu[f];
      stats.running_var[f] = (1 - stats.momentum) * stats.running_var[f] + stats.momentum * unbiased;
    }
  } else {
    mu = stats.running_mean;
    for (std::size_t f = 0; f < features; ++f) {
      inv_std[f] = 1.0 / std::sqrt(stats.running_var[f] + stats.eps);
    }
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < features; ++f) {
      const auto i = b * features + f;
      xhat[i] = (v[i] - mu[f]) * inv_std[f];
      out[i] = gamma.at(f) * xhat[i] + beta.at(f);
    }
  }
  return finish(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [batch, features, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gam = pval(self, 1);
        const auto& g = self.grad;
        if (wants(self, 1)) {
          double* gg = pgrad(self, 1);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % features] += g[i] * xhat[i];
        }
        if (wants(self, 2)) {
          double* gb = pgrad(self, 2);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % features] += g[i];
        }
        if (!wants(self, 0)) return;
        double* gx = pgrad(self, 0);
        if (!train) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * gam[i % features] * inv_std[i % features];
          }
          return;
        }
        const double n = static_cast<double>(batch);
        for (std::size_t f = 0; f < features; ++f) {
          double sum_d = 0, sum_dx = 0;
          for (std::size_t b = 0; b < batch; ++b) {
            const auto i = b * features + f;
            const double dxhat = g[i] * gam[f];
            sum_d += dxhat;
            sum_dx += dxhat * xhat[i];
          }
          for (std::size_t b = 0; b < batch; ++b) {
            const auto i = b * features + f;
            const double dxhat = g[i] * gam[f];
            gx[i] += inv_std[f] / n * (n * dxhat - sum_d - xhat[i] * sum_dx);
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2);
  const auto rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy", "targets has " + std::to_string(targets.size()) +
                                          " entries for logits " + shape_string(logits.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(logits.size());
  auto v = logits.values();
  double loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[r]) +
                              " outside " + std::to_string(n) + " classes");
    }
    const double* in = v.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (probs[r * n + j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= z;
    loss -= in[tgt[r]] - mx - std::log(z);
  }
  loss /= static_cast<double>(rows);
  return finish("cross_entropy", {1}, {loss}, {logits},
                [rows, n, tgt = std::move(tgt), probs = std::move(probs)](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  const double scale = self.grad[0] / static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) g[r * n + j] += scale * probs[r * n + j];
                    g[r * n + tgt[r]] -= scale;
                  }
                });
}

Tensor pick(const Tensor& x, std::span<const int> ids) {
  require_rank("pick", x, 2);
  const auto rows = x.dim(0), n = x.dim(1);
  if (ids.size() != rows) {
    throw ShapeError("pick", "ids has " + std::to_string(ids.size()) + " entries for " +
                                 shape_string(x.shape()));
  }
  std::vector<std::size_t> src(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= n) {
      throw std::out_of_range("pick: id " + std::to_string(ids[r]) + " outside " + std::to_string(n));
    }
    src[r] = r * n + ids[r];
    out[r] = x.at(src[r]);
  }
  return finish("pick", {rows}, std::move(out), {x}, [src = std::move(src)](detail::Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t r = 0; r < src.size(); ++r) g[src[r]] += self.grad[r];
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  if (labels.size() != logits.size()) {
    throw ShapeError("bce_with_logits", "labels has " + std::to_string(labels.size()) +
                                            " entries for " + shape_string(logits.shape()));
  }
  std::vector<double> y(labels.begin(), labels.end());
  const double n = static_cast<double>(y.size());
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double z = logits.at(i);
    loss += std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return finish("bce_with_logits", {1}, {loss / n}, {logits},
                [y = std::move(y), n](detail::Node& self) {
                  double* g = pgrad(self, 0);
                  const auto& z = pval(self, 0);
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    const double s = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                               : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                    g[i] += self.grad[0] * (s - y[i]) / n;
                  }
                });
}

Tensor sum(const Tensor& x) {
  double total = 0;
  for (double v : x.values()) total += v;
  return finish("sum", {1}, {total}, {x}, [](detail::Node& self) {
    double* g = pgrad(self, 0);
    const auto count = self.parents[0]->value.size();
    for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

}  // namespace cgan

#include "stclip/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stclip/error.hpp"

namespace stclip {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  return push(std::move(value), false, nullptr);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_ && !p.frozen;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
#ifndef NDEBUG
  if (!value.all_finite()) throw NumericError("non-finite value produced by forward op");
#endif
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

Tensor* Tape::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ShapeError("backward on a Var from another tape");
  const Tensor& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + lv.shape_str());
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_slot(loss.id)->fill(1.0);
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
  }
  for (Node& n : nodes_) {
    if (n.param && n.requires_grad && !n.grad.empty()) {
      if (n.param->grad.empty()) n.param->zero_grad();
      n.param->grad.add_inplace(n.grad);
    }
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ShapeError("operands recorded on different tapes");
  return *a.tape;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + " " + a.shape_str() + " vs " + b.shape_str());
  }
}

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (t.requires_grad(v)) return true;
  }
  return false;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul " + av.shape_str() + " x " + bv.shape_str());
  Tensor out(av.rows(), bv.cols());
  gemm_nn(av, bv, out);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) gemm_nt(g, tp.value(b), *ga);
    if (Tensor* gb = tp.grad_slot(b.id)) gemm_tn(tp.value(a), g, *gb);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt " + av.shape_str() + " x " + bv.shape_str() + "^T");
  }
  Tensor out(av.rows(), bv.rows());
  gemm_nt(av, bv, out);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) gemm_nn(g, tp.value(b), *ga);
    if (Tensor* gb = tp.grad_slot(b.id)) gemm_tn(g, tp.value(a), *gb);
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  require_same(av, t.value(b), "add");
  Tensor out = av;
  out.add_inplace(t.value(b));
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) ga->add_inplace(g);
    if (Tensor* gb = tp.grad_slot(b.id)) gb->add_inplace(g);
  });
}

Var add_row(Var a, Var bias_row) {
  Tape& t = same_tape(a, bias_row);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(bias_row);
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_row " + av.shape_str() + " + " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return t.push(std::move(out), any_grad(t, {a, bias_row}),
                [a, bias_row](Tape& tp, std::uint32_t self) {
                  const Tensor& g = tp.grad(self);
                  if (Tensor* ga = tp.grad_slot(a.id)) ga->add_inplace(g);
                  if (Tensor* gb = tp.grad_slot(bias_row.id)) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      auto row = g.row(r);
                      for (std::size_t c = 0; c < row.size(); ++c) (*gb)[c] += row[c];
                    }
                  }
                });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (auto& v : out.data()) v *= s;
  return t.push(std::move(out), t.requires_grad(a), [a, s](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (auto& v : out.data()) v = std::tanh(v);
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(a);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double d = 0.5 * (1.0 + th) +
                         0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        (*ga)[i] += g[i] * d;
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(bias);
  const std::size_t n = xv.cols();
  if (gv.rows() != 1 || gv.cols() != n || !gv.same_shape(bv)) {
    throw ShapeError("layer_norm " + xv.shape_str() + " gain " + gv.shape_str() + " bias " +
                     bv.shape_str());
  }
  Tensor xhat(xv.rows(), n);
  std::vector<double> inv(xv.rows());
  Tensor out(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (in[c] - mean) * inv[r];
      out(r, c) = gv[c] * xhat(r, c) + bv[c];
    }
  }
  const bool rg = any_grad(t, {x, gain, bias});
  return t.push(std::move(out), rg,
                [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp,
                                                                              std::uint32_t self) {
                  const Tensor& g = tp.grad(self);
                  const Tensor& gv2 = tp.value(gain);
                  const std::size_t cols = g.cols();
                  const double nd = static_cast<double>(cols);
                  if (Tensor* gg = tp.grad_slot(gain.id)) {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += g(r, c) * xhat(r, c);
                  }
                  if (Tensor* gb = tp.grad_slot(bias.id)) {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g(r, c);
                  }
                  if (Tensor* gx = tp.grad_slot(x.id)) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double sum_d = 0.0, sum_dx = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv2[c];
                        sum_d += d;
                        sum_dx += d * xhat(r, c);
                      }
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv2[c];
                        (*gx)(r, c) += inv[r] / nd * (nd * d - sum_d - xhat(r, c) * sum_dx);
                      }
                    }
                  }
                });
}

namespace {

Var softmax_impl(Var a, const std::vector<bool>* key_valid) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (key_valid && key_valid->size() != x.cols()) {
    throw ShapeError("masked_softmax_rows mask length " + std::to_string(key_valid->size()) +
                     " vs " + x.shape_str());
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (!key_valid || (*key_valid)[c]) mx = std::max(mx, in[c]);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax row with no valid entries");
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      if (key_valid && !(*key_valid)[c]) {
        o[c] = 0.0;
        continue;
      }
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    for (auto& v : o) v /= s;
  }
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
      }
    }
  });
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, nullptr); }

Var masked_softmax_rows(Var a, const std::vector<bool>& key_valid) {
  return softmax_impl(a, &key_valid);
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rows() == 0) throw ShapeError("mean_rows of empty tensor");
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto& v : out.data()) v *= inv;
  return t.push(std::move(out), t.requires_grad(a), [a, inv](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t r = 0; r < ga->rows(); ++r)
        for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g[c] * inv;
    }
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.push(Tensor(1, 1, s), t.requires_grad(a), [a](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (auto& v : ga->data()) v += g;
    }
  });
}

Var squared_norm(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).data()) s += v * v;
  return t.push(Tensor(1, 1, s), t.requires_grad(a), [a](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    const Tensor& x = tp.value(a);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += 2.0 * g * x[i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = *parts[0].tape;
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    same_tape(parts[0], p);
    const Tensor& v = t.value(p);
    if (v.rows() != rows) {
      throw ShapeError("concat_cols " + t.value(parts[0]).shape_str() + " vs " + v.shape_str());
    }
    cols += v.cols();
    rg = rg || t.requires_grad(p);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ps = std::move(ps)](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    std::size_t o = 0;
    for (Var p : ps) {
      const std::size_t w = tp.value(p).cols();
      if (Tensor* gp = tp.grad_slot(p.id)) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*gp)(r, c) += g(r, o + c);
      }
      o += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = *parts[0].tape;
  const std::size_t cols = t.value(parts[0]).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    same_tape(parts[0], p);
    const Tensor& v = t.value(p);
    if (v.cols() != cols) {
      throw ShapeError("concat_rows " + t.value(parts[0]).shape_str() + " vs " + v.shape_str());
    }
    rows += v.rows();
    rg = rg || t.requires_grad(p);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) {
    const auto& d = t.value(p).data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(Tensor(rows, cols, std::move(data)), rg,
                [ps = std::move(ps)](Tape& tp, std::uint32_t self) {
                  const Tensor& g = tp.grad(self);
                  std::size_t off = 0;
                  for (Var p : ps) {
                    const std::size_t n = tp.value(p).size();
                    if (Tensor* gp = tp.grad_slot(p.id)) {
                      for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
                    }
                    off += n;
                  }
                });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (start + count > x.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") of " + x.shape_str());
  }
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, start + c);
  return t.push(std::move(out), t.requires_grad(a), [a, start](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_slot(a.id)) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(r, start + c) += g(r, c);
    }
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (start + count > x.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") of " + x.shape_str());
  }
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols());
  std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(count * x.cols()));
  return t.push(Tensor(count, x.cols(), std::move(data)), t.requires_grad(a),
                [a, start](Tape& tp, std::uint32_t self) {
                  const Tensor& g = tp.grad(self);
                  if (Tensor* ga = tp.grad_slot(a.id)) {
                    const std::size_t off = start * g.cols();
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
                  }
                });
}

Var select_row(Var a, std::size_t r) { return slice_rows(a, r, 1); }

Var gather_row(Var table, std::size_t index) {
  const Tensor& x = table.tape->value(table);
  if (index >= x.rows()) {
    throw LookupError("embedding index " + std::to_string(index) + " out of range for table " +
                      x.shape_str());
  }
  return slice_rows(table, index, 1);
}

Var cosine_similarity(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rows() != 1 || !av.same_shape(bv)) {
    throw ShapeError("cosine_similarity " + av.shape_str() + " vs " + bv.shape_str());
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na += av[i] * av[i];
    nb += bv[i] * bv[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine similarity of a zero-norm vector");
  const double la = std::sqrt(na), lb = std::sqrt(nb);
  const double c = dot / (la * lb);
  return t.push(Tensor(1, 1, c), any_grad(t, {a, b}),
                [a, b, la, lb, c](Tape& tp, std::uint32_t self) {
                  const double g = tp.grad(self)[0];
                  const Tensor& x = tp.value(a);
                  const Tensor& y = tp.value(b);
                  if (Tensor* ga = tp.grad_slot(a.id)) {
                    for (std::size_t i = 0; i < x.size(); ++i)
                      (*ga)[i] += g * (y[i] / (la * lb) - c * x[i] / (la * la));
                  }
                  if (Tensor* gb = tp.grad_slot(b.id)) {
                    for (std::size_t i = 0; i < y.size(); ++i)
                      (*gb)[i] += g * (x[i] / (la * lb) - c * y[i] / (lb * lb));
                  }
                });
}

Var cross_entropy(Var probs, std::size_t target) {
  Tape& t = *probs.tape;
  const Tensor& p = t.value(probs);
  if (p.rows() != 1 || target >= p.cols()) {
    throw ShapeError("cross_entropy target " + std::to_string(target) + " for " + p.shape_str());
  }
  const double pt = p[target];
  const bool clamped = pt < kProbabilityFloor;
  const double loss = -std::log(clamped ? kProbabilityFloor : pt);
  return t.push(Tensor(1, 1, loss), t.requires_grad(probs) && !clamped,
                [probs, target, pt](Tape& tp, std::uint32_t self) {
                  const double g = tp.grad(self)[0];
                  if (Tensor* gp = tp.grad_slot(probs.id)) (*gp)[target] += -g / pt;
                });
}

Var sum(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("sum of nothing");
  Tape& t = *parts[0].tape;
  Tensor out = t.value(parts[0]);
  bool rg = t.requires_grad(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    same_tape(parts[0], parts[i]);
    require_same(out, t.value(parts[i]), "sum");
    out.add_inplace(t.value(parts[i]));
    rg = rg || t.requires_grad(parts[i]);
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ps = std::move(ps)](Tape& tp, std::uint32_t self) {
    const Tensor& g = tp.grad(self);
    for (Var p : ps) {
      if (Tensor* gp = tp.grad_slot(p.id)) gp->add_inplace(g);
    }
  });
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& scalar_fn,
                           std::span<Parameter* const> params, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check eps must be positive");
  for (Parameter* p : params) p->zero_grad();

  auto evaluate = [&scalar_fn]() {
    Tape t(false);
    const double v = scalar_fn(t).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check objective is not finite");
    return v;
  };

  {
    Tape t(true);
    Var out = scalar_fn(t);
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("grad_check needs a scalar objective");
    if (!std::isfinite(out.value()[0])) throw NumericError("grad_check objective is not finite");
    t.backward(out);
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    if (p->frozen) {
      for (double g : p->grad.data()) {
        if (g != 0.0) ++report.frozen_grad_entries;
      }
      continue;
    }
    GradCheckParam entry;
    entry.name = p->name;
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double fp = evaluate();
      p->value[i] = saved - eps;
      const double fm = evaluate();
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(analytic[i]));
      ++entry.coords;
    }
    report.coords_checked += entry.coords;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace stclip

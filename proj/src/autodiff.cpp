#include "mtl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtl {

template <typename S>
Var<S> Tape<S>::push_leaf(TensorT value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  Node node;
  node.op = requires_grad ? "variable" : "constant";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<S>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename S>
Var<S> Tape<S>::record(std::string_view op, std::vector<int> inputs, ForwardFn forward,
                       BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = forward(*this);
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite output");
  }
  for (int id : inputs) node.requires_grad = node.requires_grad || needs_grad(id);
  node.inputs = std::move(inputs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<S>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename S>
void Tape<S>::accumulate(int id, const TensorT& g) {
  const auto i = static_cast<std::size_t>(id);
  if (!nodes_[i].requires_grad) return;
  auto& slot = grads_[i];
  if (!slot) {
    slot = g;
  } else {
    slot->data() += g.data();
  }
}

template <typename S>
void Tape<S>::backward(const Var<S>& root) {
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be scalar, got " + shape_string(root.shape()));
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), std::nullopt);
  const auto r = static_cast<std::size_t>(root.id());
  grads_[r] = TensorT(nodes_[r].value.shape(), S(1.0));
  for (std::size_t i = r + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !grads_[i] || !node.backward) continue;
    node.backward(*this, *grads_[i]);
  }
}

template <typename S>
Tensor<S> Tape<S>::grad(int id) const {
  const auto i = static_cast<std::size_t>(id);
  if (i < grads_.size() && grads_[i]) return *grads_[i];
  return TensorT(nodes_[i].value.shape());
}

template <typename S>
bool Tape<S>::replay_matches() const {
  for (const Node& node : nodes_) {
    if (!node.forward) continue;
    const TensorT again = node.forward(*this);
    if (!(again == node.value)) return false;
  }
  return true;
}

namespace {

template <typename S>
using Mat = RowMatrix<S>;

template <typename S>
S exp_of(const S& x) {
  using std::exp;
  return exp(x);
}

template <typename S>
S log_of(const S& x) {
  using std::log;
  return log(x);
}

template <typename S>
S sqrt_of(const S& x) {
  using std::sqrt;
  return sqrt(x);
}

template <typename S>
S tanh_of(const S& x) {
  using std::tanh;
  return tanh(x);
}

template <typename S>
void same_tape(std::string_view op, const Var<S>& a, const Var<S>& b) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

template <typename S>
Tensor<S> matrix_tensor(const Mat<S>& m) {
  return Tensor<S>::from_matrix(m);
}

// Row-wise softmax of a matrix, computed on a shifted copy for stability.
template <typename S>
Mat<S> softmax_rows(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    S total(0.0);
    for (Index c = 0; c < x.cols(); ++c) {
      y(r, c) = exp_of(S(x(r, c) - m));
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  return y;
}

template <typename S>
VectorX<S> logsumexp_rows(const Mat<S>& x) {
  VectorX<S> out(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    S total(0.0);
    for (Index c = 0; c < x.cols(); ++c) total += exp_of(S(x(r, c) - m));
    out[r] = m + log_of(total);
  }
  return out;
}

template <typename S>
bool is_row_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.shape() != b.shape();
}

template <typename S, typename Fn, typename Dfn>
Var<S> unary(std::string_view op, const Var<S>& a, Fn fn, Dfn dfn) {
  const int ia = a.id();
  return a.tape().record(
      op, {ia},
      [ia, fn](const Tape<S>& t) {
        const Tensor<S>& x = t.value(ia);
        Tensor<S> y(x.shape());
        for (Index i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
        return y;
      },
      [ia, dfn](Tape<S>& t, const Tensor<S>& g) {
        if (!t.needs_grad(ia)) return;
        const Tensor<S>& x = t.value(ia);
        Tensor<S> gx(x.shape());
        for (Index i = 0; i < x.size(); ++i) gx[i] = g[i] * dfn(x[i]);
        t.accumulate(ia, gx);
      });
}

}  // namespace

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  same_tape("matmul", a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      "matmul", {ia, ib},
      [ia, ib](const Tape<S>& t) {
        return matrix_tensor<S>(t.value(ia).matrix() * t.value(ib).matrix());
      },
      [ia, ib](Tape<S>& t, const Tensor<S>& g) {
        if (t.needs_grad(ia)) {
          Tensor<S> ga(t.value(ia).shape());
          ga.matrix() = g.matrix() * t.value(ib).matrix().transpose();
          t.accumulate(ia, ga);
        }
        if (t.needs_grad(ib)) {
          Tensor<S> gb(t.value(ib).shape());
          gb.matrix() = t.value(ia).matrix().transpose() * g.matrix();
          t.accumulate(ib, gb);
        }
      });
}

namespace {

template <typename S>
Var<S> add_or_sub(std::string_view op, const Var<S>& a, const Var<S>& b, double sign) {
  same_tape(op, a, b);
  const bool broadcast = is_row_broadcast(a.value(), b.value());
  if (!broadcast && a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      op, {ia, ib},
      [ia, ib, broadcast, sign](const Tape<S>& t) {
        Tensor<S> y = t.value(ia);
        if (broadcast) {
          const auto row = t.value(ib).matrix().row(0);
          if (sign > 0) {
            y.matrix().rowwise() += row;
          } else {
            y.matrix().rowwise() -= row;
          }
        } else if (sign > 0) {
          y.data() += t.value(ib).data();
        } else {
          y.data() -= t.value(ib).data();
        }
        return y;
      },
      [ia, ib, broadcast, sign](Tape<S>& t, const Tensor<S>& g) {
        if (t.needs_grad(ia)) t.accumulate(ia, g);
        if (!t.needs_grad(ib)) return;
        Tensor<S> gb(t.value(ib).shape());
        if (broadcast) {
          gb.matrix().row(0) = g.matrix().colwise().sum();
        } else {
          gb.data() = g.data();
        }
        if (sign < 0) gb.data() = -gb.data();
        t.accumulate(ib, gb);
      });
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  return add_or_sub("add", a, b, 1.0);
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  return add_or_sub("sub", a, b, -1.0);
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  same_tape("mul", a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(
      "mul", {ia, ib},
      [ia, ib](const Tape<S>& t) {
        Tensor<S> y(t.value(ia).shape());
        y.data() = t.value(ia).data().cwiseProduct(t.value(ib).data());
        return y;
      },
      [ia, ib](Tape<S>& t, const Tensor<S>& g) {
        if (t.needs_grad(ia)) {
          Tensor<S> ga(g.shape());
          ga.data() = g.data().cwiseProduct(t.value(ib).data());
          t.accumulate(ia, ga);
        }
        if (t.needs_grad(ib)) {
          Tensor<S> gb(g.shape());
          gb.data() = g.data().cwiseProduct(t.value(ia).data());
          t.accumulate(ib, gb);
        }
      });
}

template <typename S>
Var<S> scale(const Var<S>& a, double factor) {
  const int ia = a.id();
  return a.tape().record(
      "scale", {ia},
      [ia, factor](const Tape<S>& t) {
        Tensor<S> y = t.value(ia);
        y.data() *= S(factor);
        return y;
      },
      [ia, factor](Tape<S>& t, const Tensor<S>& g) {
        Tensor<S> ga = g;
        ga.data() *= S(factor);
        t.accumulate(ia, ga);
      });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index total = 0;
  const Index other = axis == 0 ? parts[0].cols() : parts[0].rows();
  for (const auto& p : parts) {
    same_tape("concat", parts[0], p);
    const Index o = axis == 0 ? p.cols() : p.rows();
    if (o != other) throw DimensionError("concat: mismatched operand " + shape_string(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(total);
    total += axis == 0 ? p.rows() : p.cols();
  }
  const Shape out_shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  return parts[0].tape().record(
      "concat", ids,
      [ids, offsets, axis, out_shape](const Tape<S>& t) {
        Tensor<S> y(out_shape);
        auto m = y.matrix();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto x = t.value(ids[i]).matrix();
          if (axis == 0) {
            m.middleRows(offsets[i], x.rows()) = x;
          } else {
            m.middleCols(offsets[i], x.cols()) = x;
          }
        }
        return y;
      },
      [ids, offsets, axis](Tape<S>& t, const Tensor<S>& g) {
        const auto gm = g.matrix();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!t.needs_grad(ids[i])) continue;
          Tensor<S> gx(t.value(ids[i]).shape());
          if (axis == 0) {
            gx.matrix() = gm.middleRows(offsets[i], gx.rows());
          } else {
            gx.matrix() = gm.middleCols(offsets[i], gx.cols());
          }
          t.accumulate(ids[i], gx);
        }
      });
}

template <typename S>
Var<S> slice(const Var<S>& a, int axis, Index begin, Index end) {
  if (axis != 0 && axis != 1) throw DimensionError("slice: axis must be 0 or 1");
  const Index extent = axis == 0 ? a.rows() : a.cols();
  if (begin < 0 || end > extent || begin >= end) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(a.shape()));
  }
  const int ia = a.id();
  const Index n = end - begin;
  return a.tape().record(
      "slice", {ia},
      [ia, axis, begin, n](const Tape<S>& t) {
        const auto x = t.value(ia).matrix();
        if (axis == 0) return matrix_tensor<S>(x.middleRows(begin, n));
        return matrix_tensor<S>(x.middleCols(begin, n));
      },
      [ia, axis, begin, n](Tape<S>& t, const Tensor<S>& g) {
        Tensor<S> gx(t.value(ia).shape());
        if (axis == 0) {
          gx.matrix().middleRows(begin, n) = g.matrix();
        } else {
          gx.matrix().middleCols(begin, n) = g.matrix();
        }
        t.accumulate(ia, gx);
      });
}

template <typename S>
Var<S> embedding(const Var<S>& table, std::span<const int> ids) {
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const Index vocab = table.rows();
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw VocabularyError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
  const int it = table.id();
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape().record(
      "embedding", {it},
      [it, rows](const Tape<S>& t) {
        const auto w = t.value(it).matrix();
        Tensor<S> y(Shape{static_cast<Index>(rows.size()), w.cols()});
        for (std::size_t r = 0; r < rows.size(); ++r) {
          y.matrix().row(static_cast<Index>(r)) = w.row(rows[r]);
        }
        return y;
      },
      [it, rows](Tape<S>& t, const Tensor<S>& g) {
        Tensor<S> gw(t.value(it).shape());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          gw.matrix().row(rows[r]) += g.matrix().row(static_cast<Index>(r));
        }
        t.accumulate(it, gw);
      });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return unary<S>(
      "tanh", a, [](const S& x) { return tanh_of(x); },
      [](const S& x) {
        const S y = tanh_of(x);
        return S(1.0) - y * y;
      });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  auto sig = [](const S& x) { return S(1.0) / (S(1.0) + exp_of(S(-x))); };
  return unary<S>("sigmoid", a, sig, [sig](const S& x) {
    const S y = sig(x);
    return y * (S(1.0) - y);
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return unary<S>(
      "relu", a, [](const S& x) { return x > S(0.0) ? x : S(0.0); },
      [](const S& x) { return x > S(0.0) ? S(1.0) : S(0.0); });
}

template <typename S>
Var<S> softmax(const Var<S>& a) {
  const int ia = a.id();
  return a.tape().record(
      "softmax", {ia},
      [ia](const Tape<S>& t) {
        Tensor<S> y(t.value(ia).shape());
        y.matrix() = softmax_rows<S>(t.value(ia).matrix());
        return y;
      },
      [ia](Tape<S>& t, const Tensor<S>& g) {
        const Mat<S> y = softmax_rows<S>(t.value(ia).matrix());
        const VectorX<S> dots = g.matrix().cwiseProduct(y).rowwise().sum();
        Tensor<S> gx(g.shape());
        gx.matrix() = y.cwiseProduct((g.matrix().colwise() - dots));
        t.accumulate(ia, gx);
      });
}

template <typename S>
Var<S> log_softmax(const Var<S>& a) {
  const int ia = a.id();
  return a.tape().record(
      "log_softmax", {ia},
      [ia](const Tape<S>& t) {
        const auto x = t.value(ia).matrix();
        Tensor<S> y(t.value(ia).shape());
        y.matrix() = x.colwise() - logsumexp_rows<S>(x);
        return y;
      },
      [ia](Tape<S>& t, const Tensor<S>& g) {
        const Mat<S> p = softmax_rows<S>(t.value(ia).matrix());
        const VectorX<S> totals = g.matrix().rowwise().sum();
        Tensor<S> gx(g.shape());
        gx.matrix() = g.matrix() - (p.array().colwise() * totals.array()).matrix();
        t.accumulate(ia, gx);
      });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, double eps) {
  same_tape("layer_norm", x, gain);
  same_tape("layer_norm", x, bias);
  const Index c = x.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  const int ix = x.id();
  const int ig = gain.id();
  const int ib = bias.id();
  // Normalized rows and inverse deviations, shared by forward and backward.
  auto normalize = [ix, eps](const Tape<S>& t, Mat<S>& xhat, VectorX<S>& inv_std) {
    const auto xm = t.value(ix).matrix();
    const double n = static_cast<double>(xm.cols());
    xhat.resize(xm.rows(), xm.cols());
    inv_std.resize(xm.rows());
    for (Index r = 0; r < xm.rows(); ++r) {
      const S mu = xm.row(r).sum() / S(n);
      S var(0.0);
      for (Index j = 0; j < xm.cols(); ++j) {
        const S d = xm(r, j) - mu;
        var += d * d;
      }
      var /= S(n);
      inv_std[r] = S(1.0) / sqrt_of(S(var + S(eps)));
      for (Index j = 0; j < xm.cols(); ++j) xhat(r, j) = (xm(r, j) - mu) * inv_std[r];
    }
  };
  return x.tape().record(
      "layer_norm", {ix, ig, ib},
      [normalize, ix, ig, ib](const Tape<S>& t) {
        Mat<S> xhat;
        VectorX<S> inv_std;
        normalize(t, xhat, inv_std);
        Tensor<S> y(t.value(ix).shape());
        const auto gv = t.value(ig).data().transpose();
        const auto bv = t.value(ib).data().transpose();
        y.matrix() = (xhat.array().rowwise() * gv.array()).matrix();
        y.matrix().rowwise() += bv;
        return y;
      },
      [normalize, ix, ig, ib](Tape<S>& t, const Tensor<S>& g) {
        Mat<S> xhat;
        VectorX<S> inv_std;
        normalize(t, xhat, inv_std);
        const auto gm = g.matrix();
        if (t.needs_grad(ig)) {
          Tensor<S> gg(t.value(ig).shape());
          gg.data() = gm.cwiseProduct(xhat).colwise().sum().transpose();
          t.accumulate(ig, gg);
        }
        if (t.needs_grad(ib)) {
          Tensor<S> gb(t.value(ib).shape());
          gb.data() = gm.colwise().sum().transpose();
          t.accumulate(ib, gb);
        }
        if (t.needs_grad(ix)) {
          const auto gv = t.value(ig).data().transpose();
          const Mat<S> dxhat = (gm.array().rowwise() * gv.array()).matrix();
          const S n(static_cast<double>(gm.cols()));
          Tensor<S> gx(t.value(ix).shape());
          for (Index r = 0; r < gm.rows(); ++r) {
            const S mean_d = dxhat.row(r).sum() / n;
            const S mean_dx = dxhat.row(r).cwiseProduct(xhat.row(r)).sum() / n;
            for (Index j = 0; j < gm.cols(); ++j) {
              gx(r, j) = inv_std[r] * (dxhat(r, j) - mean_d - xhat(r, j) * mean_dx);
            }
          }
          t.accumulate(ix, gx);
        }
      });
}

template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index kernel,
              Index stride) {
  same_tape("conv1d", x, weight);
  same_tape("conv1d", x, bias);
  if (kernel < 1 || stride < 1) throw DimensionError("conv1d: kernel and stride must be >= 1");
  const Index frames = x.rows();
  const Index in = x.cols();
  const Index pad = kernel / 2;
  if (weight.rows() != kernel * in) {
    throw DimensionError("conv1d: weight " + shape_string(weight.shape()) + " for kernel " +
                         std::to_string(kernel) + " and " + std::to_string(in) + " channels");
  }
  if (bias.value().size() != weight.cols()) throw DimensionError("conv1d: bias size mismatch");
  if (frames + 2 * pad < kernel) throw DimensionError("conv1d: input shorter than kernel");
  const Index out_len = (frames + 2 * pad - kernel) / stride + 1;
  const int ix = x.id();
  const int iw = weight.id();
  const int ib = bias.id();
  auto im2col = [ix, kernel, stride, pad, out_len, frames, in](const Tape<S>& t) {
    const auto xm = t.value(ix).matrix();
    Mat<S> cols = Mat<S>::Zero(out_len, kernel * in);
    for (Index o = 0; o < out_len; ++o) {
      for (Index k = 0; k < kernel; ++k) {
        const Index f = o * stride + k - pad;
        if (f >= 0 && f < frames) cols.block(o, k * in, 1, in) = xm.row(f);
      }
    }
    return cols;
  };
  return x.tape().record(
      "conv1d", {ix, iw, ib},
      [im2col, iw, ib](const Tape<S>& t) {
        Mat<S> y = im2col(t) * t.value(iw).matrix();
        y.rowwise() += t.value(ib).data().transpose();
        return matrix_tensor<S>(y);
      },
      [im2col, ix, iw, ib, kernel, stride, pad, out_len, frames, in](Tape<S>& t,
                                                                     const Tensor<S>& g) {
        const auto gm = g.matrix();
        if (t.needs_grad(iw)) {
          Tensor<S> gw(t.value(iw).shape());
          gw.matrix() = im2col(t).transpose() * gm;
          t.accumulate(iw, gw);
        }
        if (t.needs_grad(ib)) {
          Tensor<S> gb(t.value(ib).shape());
          gb.data() = gm.colwise().sum().transpose();
          t.accumulate(ib, gb);
        }
        if (t.needs_grad(ix)) {
          const Mat<S> gcols = gm * t.value(iw).matrix().transpose();
          Tensor<S> gx(t.value(ix).shape());
          for (Index o = 0; o < out_len; ++o) {
            for (Index k = 0; k < kernel; ++k) {
              const Index f = o * stride + k - pad;
              if (f >= 0 && f < frames) gx.matrix().row(f) += gcols.block(o, k * in, 1, in);
            }
          }
          t.accumulate(ix, gx);
        }
      });
}

template <typename S>
RowMatrix<S> attention_weights(const Tensor<S>& q, const Tensor<S>& k, bool causal) {
  const S inv_scale(1.0 / std::sqrt(static_cast<double>(q.cols())));
  const Mat<S> scores = (q.matrix() * k.matrix().transpose()) * inv_scale;
  Mat<S> p = Mat<S>::Zero(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const Index visible = causal ? std::min<Index>(i + 1, scores.cols()) : scores.cols();
    const S m = scores.row(i).head(visible).maxCoeff();
    S total(0.0);
    for (Index j = 0; j < visible; ++j) {
      p(i, j) = exp_of(S(scores(i, j) - m));
      total += p(i, j);
    }
    p.row(i).head(visible) /= total;
  }
  return p;
}

template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, bool causal) {
  same_tape("attention", q, k);
  same_tape("attention", q, v);
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (causal && q.rows() > k.rows()) {
    throw DimensionError("attention: causal mask needs at least as many keys as queries");
  }
  const int iq = q.id();
  const int ik = k.id();
  const int iv = v.id();
  return q.tape().record(
      "attention", {iq, ik, iv},
      [iq, ik, iv, causal](const Tape<S>& t) {
        const Mat<S> p = attention_weights<S>(t.value(iq), t.value(ik), causal);
        return matrix_tensor<S>(p * t.value(iv).matrix());
      },
      [iq, ik, iv, causal](Tape<S>& t, const Tensor<S>& g) {
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const Mat<S> p = attention_weights<S>(qv, kv, causal);
        const auto gm = g.matrix();
        if (t.needs_grad(iv)) {
          Tensor<S> gv(t.value(iv).shape());
          gv.matrix() = p.transpose() * gm;
          t.accumulate(iv, gv);
        }
        if (!t.needs_grad(iq) && !t.needs_grad(ik)) return;
        const Mat<S> dp = gm * t.value(iv).matrix().transpose();
        const VectorX<S> dots = dp.cwiseProduct(p).rowwise().sum();
        const Mat<S> ds =
            p.cwiseProduct(dp.colwise() - dots) * S(1.0 / std::sqrt(static_cast<double>(qv.cols())));
        if (t.needs_grad(iq)) {
          Tensor<S> gq(qv.shape());
          gq.matrix() = ds * kv.matrix();
          t.accumulate(iq, gq);
        }
        if (t.needs_grad(ik)) {
          Tensor<S> gk(kv.shape());
          gk.matrix() = ds.transpose() * qv.matrix();
          t.accumulate(ik, gk);
        }
      });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> targets) {
  const Index rows = logits.rows();
  const Index vocab = logits.cols();
  if (static_cast<Index>(targets.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  for (int tgt : targets) {
    if (tgt >= vocab) {
      throw VocabularyError("cross_entropy: target " + std::to_string(tgt) +
                            " outside vocabulary of " + std::to_string(vocab));
    }
  }
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", {il},
      [il, tg](const Tape<S>& t) {
        const auto x = t.value(il).matrix();
        const VectorX<S> lse = logsumexp_rows<S>(x);
        S total(0.0);
        for (Index r = 0; r < x.rows(); ++r) {
          if (tg[static_cast<std::size_t>(r)] < 0) continue;
          total += lse[r] - x(r, tg[static_cast<std::size_t>(r)]);
        }
        return Tensor<S>::scalar(total);
      },
      [il, tg](Tape<S>& t, const Tensor<S>& g) {
        const S scale_out = g[0];
        Mat<S> p = softmax_rows<S>(t.value(il).matrix());
        for (Index r = 0; r < p.rows(); ++r) {
          const int target = tg[static_cast<std::size_t>(r)];
          if (target < 0) {
            p.row(r).setZero();
            continue;
          }
          p(r, target) -= S(1.0);
        }
        Tensor<S> gx(t.value(il).shape());
        gx.matrix() = p * scale_out;
        t.accumulate(il, gx);
      });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  const int ia = a.id();
  return a.tape().record(
      "sum", {ia}, [ia](const Tape<S>& t) { return Tensor<S>::scalar(t.value(ia).data().sum()); },
      [ia](Tape<S>& t, const Tensor<S>& g) {
        t.accumulate(ia, Tensor<S>(t.value(ia).shape(), g[0]));
      });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const int ia = a.id();
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(
      "mean", {ia},
      [ia, n](const Tape<S>& t) { return Tensor<S>::scalar(t.value(ia).data().sum() / S(n)); },
      [ia, n](Tape<S>& t, const Tensor<S>& g) {
        t.accumulate(ia, Tensor<S>(t.value(ia).shape(), g[0] / S(n)));
      });
}

#define MTL_INSTANTIATE_OPS(S)                                                               \
  template class Tape<S>;                                                                    \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                      \
  template Var<S> add(const Var<S>&, const Var<S>&);                                         \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                         \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                         \
  template Var<S> scale(const Var<S>&, double);                                              \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                   \
  template Var<S> slice(const Var<S>&, int, Index, Index);                                   \
  template Var<S> embedding(const Var<S>&, std::span<const int>);                            \
  template Var<S> tanh(const Var<S>&);                                                       \
  template Var<S> sigmoid(const Var<S>&);                                                    \
  template Var<S> relu(const Var<S>&);                                                       \
  template Var<S> softmax(const Var<S>&);                                                    \
  template Var<S> log_softmax(const Var<S>&);                                                \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, double);           \
  template Var<S> conv1d(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);         \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&, bool);              \
  template Var<S> cross_entropy(const Var<S>&, std::span<const int>);                        \
  template Var<S> sum(const Var<S>&);                                                        \
  template Var<S> mean(const Var<S>&);                                                       \
  template RowMatrix<S> attention_weights(const Tensor<S>&, const Tensor<S>&, bool);

MTL_INSTANTIATE_OPS(double)
MTL_INSTANTIATE_OPS(Dual)

#undef MTL_INSTANTIATE_OPS

}  // namespace mtl

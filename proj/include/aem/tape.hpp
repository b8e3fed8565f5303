#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Eager tape: every op computes its value immediately and records a pullback
// closure. backward() walks the tape once in reverse order and accumulates
// gradients into the leaf nodes. Row vectors are 1xN, scalars are 1x1.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "aem/types.hpp"

namespace aem::num {

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class S>
class TapeT {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Pullback = std::function<void(TapeT&, const Mat&)>;

  // Parameter leaf: participates in gradient accumulation.
  Value leaf(Mat v, std::string name) {
    Value out = push(std::move(v), {}, true);
    nodes_[out.id].name = std::move(name);
    return out;
  }

  // Constant: no gradient ever flows into it.
  Value constant(Mat v) { return push(std::move(v), {}, false); }

  Value record(Mat v, Pullback pb) { return push(std::move(v), std::move(pb), false); }

  const Mat& value(Value v) const { return nodes_.at(check(v)).value; }

  bool has_grad(Value v) const { return grads_.count(check(v)) > 0; }

  // Gradient of the most recent backward() w.r.t. node v; zero for leaves
  // not on any path to the loss.
  Mat grad(Value v) const {
    int id = check(v);
    auto it = grads_.find(id);
    if (it != grads_.end()) return it->second;
    return Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }

  void backward(Value loss) {
    int id = check(loss);
    const Mat& l = nodes_[id].value;
    if (l.rows() != 1 || l.cols() != 1)
      fail(ErrKind::shape, "backward: loss must be scalar, got " + std::to_string(l.rows()) +
                               "x" + std::to_string(l.cols()));
    grads_.clear();
    grads_[id] = Mat::Ones(1, 1);
    for (int i = id; i >= 0; --i) {
      auto it = grads_.find(i);
      if (it == grads_.end()) continue;
      if (nodes_[i].pullback) nodes_[i].pullback(*this, it->second);
    }
  }

  void accumulate(Value v, const Mat& g) {
    int id = check(v);
    auto it = grads_.find(id);
    if (it == grads_.end())
      grads_.emplace(id, g);
    else
      it->second += g;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Pullback pullback;
    bool is_leaf = false;
    std::string name;
  };

  Value push(Mat v, Pullback pb, bool is_leaf) {
    Node n;
    n.value = std::move(v);
    n.pullback = std::move(pb);
    n.is_leaf = is_leaf;
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  int check(Value v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      fail(ErrKind::shape, "tape: invalid value handle");
    return v.id;
  }

  std::vector<Node> nodes_;
  std::map<int, Mat> grads_;
};

using Tape = TapeT<double>;

namespace detail {
template <class S>
void want_same_shape(const char* op, const typename TapeT<S>::Mat& a,
                     const typename TapeT<S>::Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrKind::shape, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
}
}  // namespace detail

template <class S>
Value add(TapeT<S>& t, Value a, Value b) {
  detail::want_same_shape<S>("add", t.value(a), t.value(b));
  return t.record(t.value(a) + t.value(b), [a, b](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class S>
Value sub(TapeT<S>& t, Value a, Value b) {
  detail::want_same_shape<S>("sub", t.value(a), t.value(b));
  return t.record(t.value(a) - t.value(b), [a, b](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <class S>
Value mul(TapeT<S>& t, Value a, Value b) {
  detail::want_same_shape<S>("mul", t.value(a), t.value(b));
  auto va = t.value(a), vb = t.value(b);
  return t.record(va.cwiseProduct(vb), [a, b, va, vb](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g.cwiseProduct(vb));
    t.accumulate(b, g.cwiseProduct(va));
  });
}

template <class S>
Value scale(TapeT<S>& t, Value a, S s) {
  return t.record(t.value(a) * s, [a, s](TapeT<S>& t, const auto& g) { t.accumulate(a, g * s); });
}

template <class S>
Value matmul(TapeT<S>& t, Value a, Value b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  if (va.cols() != vb.rows())
    fail(ErrKind::shape, "matmul: " + std::to_string(va.rows()) + "x" + std::to_string(va.cols()) +
                             " incompatible with " + std::to_string(vb.rows()) + "x" +
                             std::to_string(vb.cols()));
  typename TapeT<S>::Mat ca = va, cb = vb;
  return t.record(va * vb, [a, b, ca, cb](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g * cb.transpose());
    t.accumulate(b, ca.transpose() * g);
  });
}

template <class S>
Value transpose(TapeT<S>& t, Value a) {
  return t.record(t.value(a).transpose(),
                  [a](TapeT<S>& t, const auto& g) { t.accumulate(a, g.transpose()); });
}

template <class S>
Value concat_rows(TapeT<S>& t, const std::vector<Value>& parts) {
  if (parts.empty()) fail(ErrKind::shape, "concat_rows: empty input");
  Eigen::Index cols = t.value(parts[0]).cols(), rows = 0;
  for (Value p : parts) {
    if (t.value(p).cols() != cols) fail(ErrKind::shape, "concat_rows: column mismatch");
    rows += t.value(p).rows();
  }
  typename TapeT<S>::Mat out(rows, cols);
  Eigen::Index r = 0;
  std::vector<Eigen::Index> heights;
  for (Value p : parts) {
    Eigen::Index h = t.value(p).rows();
    out.middleRows(r, h) = t.value(p);
    heights.push_back(h);
    r += h;
  }
  auto ps = parts;
  return t.record(std::move(out), [ps, heights](TapeT<S>& t, const auto& g) {
    Eigen::Index r = 0;
    for (size_t i = 0; i < ps.size(); ++i) {
      t.accumulate(ps[i], g.middleRows(r, heights[i]));
      r += heights[i];
    }
  });
}

template <class S>
Value concat_cols(TapeT<S>& t, const std::vector<Value>& parts) {
  if (parts.empty()) fail(ErrKind::shape, "concat_cols: empty input");
  Eigen::Index rows = t.value(parts[0]).rows(), cols = 0;
  for (Value p : parts) {
    if (t.value(p).rows() != rows) fail(ErrKind::shape, "concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  typename TapeT<S>::Mat out(rows, cols);
  Eigen::Index c = 0;
  std::vector<Eigen::Index> widths;
  for (Value p : parts) {
    Eigen::Index w = t.value(p).cols();
    out.middleCols(c, w) = t.value(p);
    widths.push_back(w);
    c += w;
  }
  auto ps = parts;
  return t.record(std::move(out), [ps, widths](TapeT<S>& t, const auto& g) {
    Eigen::Index c = 0;
    for (size_t i = 0; i < ps.size(); ++i) {
      t.accumulate(ps[i], g.middleCols(c, widths[i]));
      c += widths[i];
    }
  });
}

template <class S>
Value slice_rows(TapeT<S>& t, Value a, Eigen::Index r0, Eigen::Index r1) {
  const auto& v = t.value(a);
  if (r0 < 0 || r1 > v.rows() || r0 >= r1) fail(ErrKind::shape, "slice_rows: bad range");
  Eigen::Index rows = v.rows(), cols = v.cols();
  return t.record(v.middleRows(r0, r1 - r0), [a, r0, r1, rows, cols](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d = TapeT<S>::Mat::Zero(rows, cols);
    d.middleRows(r0, r1 - r0) = g;
    t.accumulate(a, d);
  });
}

template <class S>
Value slice_cols(TapeT<S>& t, Value a, Eigen::Index c0, Eigen::Index c1) {
  const auto& v = t.value(a);
  if (c0 < 0 || c1 > v.cols() || c0 >= c1) fail(ErrKind::shape, "slice_cols: bad range");
  Eigen::Index rows = v.rows(), cols = v.cols();
  return t.record(v.middleCols(c0, c1 - c0), [a, c0, c1, rows, cols](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d = TapeT<S>::Mat::Zero(rows, cols);
    d.middleCols(c0, c1 - c0) = g;
    t.accumulate(a, d);
  });
}

// Row-wise softmax, stabilized by subtracting the row max.
template <class S>
Value softmax_rows(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S m = v.row(r).maxCoeff();
    auto e = (v.row(r).array() - m).exp();
    y.row(r) = e / e.sum();
  }
  return t.record(y, [a, y](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      S dot = g.row(r).cwiseProduct(y.row(r)).sum();
      d.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, d);
  });
}

// Softmax over the entries of each row where mask != 0; other outputs are 0.
// Every row must have at least one active entry.
template <class S>
Value masked_softmax_rows(TapeT<S>& t, Value a, const typename TapeT<S>::Mat& mask) {
  const auto& v = t.value(a);
  detail::want_same_shape<S>("masked_softmax_rows", v, mask);
  typename TapeT<S>::Mat y = TapeT<S>::Mat::Zero(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S m = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < v.cols(); ++c)
      if (mask(r, c) != S(0)) m = std::max(m, v(r, c));
    if (!std::isfinite(m)) fail(ErrKind::shape, "masked_softmax_rows: empty row neighborhood");
    S sum = 0;
    for (Eigen::Index c = 0; c < v.cols(); ++c)
      if (mask(r, c) != S(0)) {
        y(r, c) = std::exp(v(r, c) - m);
        sum += y(r, c);
      }
    for (Eigen::Index c = 0; c < v.cols(); ++c) y(r, c) /= sum;
  }
  return t.record(y, [a, y](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      S dot = g.row(r).cwiseProduct(y.row(r)).sum();
      d.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, d);
  });
}

// log(sum(exp(row))) per row -> n x 1. Stable.
template <class S>
Value logsumexp_rows(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y(v.rows(), 1);
  typename TapeT<S>::Mat soft(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S m = v.row(r).maxCoeff();
    auto e = (v.row(r).array() - m).exp();
    S sum = e.sum();
    y(r, 0) = m + std::log(sum);
    soft.row(r) = e / sum;
  }
  return t.record(y, [a, soft](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d(soft.rows(), soft.cols());
    for (Eigen::Index r = 0; r < soft.rows(); ++r) d.row(r) = g(r, 0) * soft.row(r);
    t.accumulate(a, d);
  });
}

// Per-row layer norm with learnable gain/offset (1 x C each).
template <class S>
Value layer_norm_rows(TapeT<S>& t, Value x, Value gamma, Value beta, S eps = S(1e-5)) {
  const auto& v = t.value(x);
  const auto& gm = t.value(gamma);
  const auto& bt = t.value(beta);
  if (gm.rows() != 1 || gm.cols() != v.cols() || bt.rows() != 1 || bt.cols() != v.cols())
    fail(ErrKind::shape, "layer_norm_rows: gain/offset must be 1x" + std::to_string(v.cols()));
  Eigen::Index n = v.cols();
  typename TapeT<S>::Mat xhat(v.rows(), n);
  typename TapeT<S>::Mat inv_sd(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S mu = v.row(r).mean();
    S var = (v.row(r).array() - mu).square().sum() / static_cast<S>(n);
    S is = S(1) / std::sqrt(var + eps);
    inv_sd(r, 0) = is;
    xhat.row(r) = (v.row(r).array() - mu) * is;
  }
  typename TapeT<S>::Mat y(v.rows(), n);
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    y.row(r) = xhat.row(r).cwiseProduct(gm.row(0)) + bt.row(0);
  return t.record(y, [x, gamma, beta, xhat, inv_sd, gm, n](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat dx(xhat.rows(), n);
    typename TapeT<S>::Mat dgamma = TapeT<S>::Mat::Zero(1, n);
    typename TapeT<S>::Mat dbeta = TapeT<S>::Mat::Zero(1, n);
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      dgamma.row(0) += g.row(r).cwiseProduct(xhat.row(r));
      dbeta.row(0) += g.row(r);
      typename TapeT<S>::Mat dxhat = g.row(r).cwiseProduct(gm.row(0));
      S mean_dxhat = dxhat.mean();
      S mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).mean();
      dx.row(r) = inv_sd(r, 0) * (dxhat.array() - mean_dxhat -
                                  xhat.row(r).array() * mean_dxhat_xhat)
                                     .matrix();
    }
    t.accumulate(x, dx);
    t.accumulate(gamma, dgamma);
    t.accumulate(beta, dbeta);
  });
}

// Column-wise mean over rows -> 1 x C.
template <class S>
Value mean_rows(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  Eigen::Index rows = v.rows();
  typename TapeT<S>::Mat y = v.colwise().mean();
  return t.record(y, [a, rows](TapeT<S>& t, const auto& g) {
    t.accumulate(a, (TapeT<S>::Mat::Ones(rows, 1) * g) / static_cast<S>(rows));
  });
}

template <class S>
Value sum_all(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  Eigen::Index rows = v.rows(), cols = v.cols();
  typename TapeT<S>::Mat y(1, 1);
  y(0, 0) = v.sum();
  return t.record(y, [a, rows, cols](TapeT<S>& t, const auto& g) {
    t.accumulate(a, TapeT<S>::Mat::Constant(rows, cols, g(0, 0)));
  });
}

template <class S>
Value mean_all(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  return scale(t, sum_all(t, a), S(1) / static_cast<S>(v.rows() * v.cols()));
}

// Sum of squared entries -> scalar.
template <class S>
Value sum_squares(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y(1, 1);
  y(0, 0) = v.squaredNorm();
  typename TapeT<S>::Mat c = v;
  return t.record(y, [a, c](TapeT<S>& t, const auto& g) { t.accumulate(a, S(2) * g(0, 0) * c); });
}

// Rows scaled to unit L2 norm, with a denominator floor for near-zero rows.
template <class S>
Value l2_normalize_rows(TapeT<S>& t, Value a, S floor = S(1e-12)) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y(v.rows(), v.cols());
  typename TapeT<S>::Mat norms(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S n = v.row(r).norm();
    norms(r, 0) = n;
    y.row(r) = v.row(r) / std::max(n, floor);
  }
  return t.record(y, [a, y, norms, floor](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      S n = norms(r, 0);
      if (n > floor) {
        S dot = g.row(r).cwiseProduct(y.row(r)).sum();
        d.row(r) = (g.row(r) - dot * y.row(r)) / n;
      } else {
        d.row(r) = g.row(r) / floor;
      }
    }
    t.accumulate(a, d);
  });
}

template <class S>
Value log_ew(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  if ((v.array() <= S(0)).any()) fail(ErrKind::numeric, "log: non-positive input");
  typename TapeT<S>::Mat c = v;
  return t.record(v.array().log().matrix(), [a, c](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g.cwiseQuotient(c));
  });
}

template <class S>
Value exp_ew(TapeT<S>& t, Value a) {
  typename TapeT<S>::Mat y = t.value(a).array().exp().matrix();
  return t.record(y, [a, y](TapeT<S>& t, const auto& g) { t.accumulate(a, g.cwiseProduct(y)); });
}

template <class S>
Value tanh_ew(TapeT<S>& t, Value a) {
  typename TapeT<S>::Mat y = t.value(a).array().tanh().matrix();
  return t.record(y, [a, y](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g.cwiseProduct((S(1) - y.array().square()).matrix()));
  });
}

// Exact GELU: x * Phi(x).
template <class S>
Value gelu(TapeT<S>& t, Value a) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y(v.rows(), v.cols());
  typename TapeT<S>::Mat dydx(v.rows(), v.cols());
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      S x = v(r, c);
      S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
      y(r, c) = x * cdf;
      dydx(r, c) = cdf + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
    }
  return t.record(y, [a, dydx](TapeT<S>& t, const auto& g) {
    t.accumulate(a, g.cwiseProduct(dydx));
  });
}

template <class S>
Value leaky_relu(TapeT<S>& t, Value a, S slope) {
  const auto& v = t.value(a);
  typename TapeT<S>::Mat y = v.unaryExpr([slope](S x) { return x > S(0) ? x : slope * x; });
  typename TapeT<S>::Mat d = v.unaryExpr([slope](S x) { return x > S(0) ? S(1) : slope; });
  return t.record(y, [a, d](TapeT<S>& t, const auto& g) { t.accumulate(a, g.cwiseProduct(d)); });
}

// Broadcast-add a 1 x C row vector to every row of an n x C matrix.
template <class S>
Value add_rowvec(TapeT<S>& t, Value m, Value v) {
  const auto& vm = t.value(m);
  const auto& vv = t.value(v);
  if (vv.rows() != 1 || vv.cols() != vm.cols())
    fail(ErrKind::shape, "add_rowvec: vector must be 1x" + std::to_string(vm.cols()) + ", got " +
                             std::to_string(vv.rows()) + "x" + std::to_string(vv.cols()));
  typename TapeT<S>::Mat y = vm.rowwise() + vv.row(0);
  return t.record(y, [m, v](TapeT<S>& t, const auto& g) {
    t.accumulate(m, g);
    t.accumulate(v, g.colwise().sum());
  });
}

// y_i = a(i, idx[i]) -> n x 1.
template <class S>
Value gather_cols(TapeT<S>& t, Value a, const std::vector<int>& idx) {
  const auto& v = t.value(a);
  if (static_cast<Eigen::Index>(idx.size()) != v.rows())
    fail(ErrKind::shape, "gather_cols: index count does not match rows");
  typename TapeT<S>::Mat y(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (idx[r] < 0 || idx[r] >= v.cols()) fail(ErrKind::shape, "gather_cols: index out of range");
    y(r, 0) = v(r, idx[r]);
  }
  Eigen::Index rows = v.rows(), cols = v.cols();
  return t.record(y, [a, idx, rows, cols](TapeT<S>& t, const auto& g) {
    typename TapeT<S>::Mat d = TapeT<S>::Mat::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) d(r, idx[r]) += g(r, 0);
    t.accumulate(a, d);
  });
}

// Cuts the gradient path: value copied into a fresh constant.
template <class S>
Value detach(TapeT<S>& t, Value a) {
  return t.constant(t.value(a));
}

}  // namespace aem::num

#include "odekit/autodiff.hpp"

#include <cmath>
#include <cstring>

#include "odekit/common.hpp"
#include "odekit/kernels/kernels.hpp"

namespace odekit::ad {

namespace {

constexpr const char* kModule = "autodiff_engine";

std::string shape_str(int r, int c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

void require_same_shape(const char* op, int ar, int ac, int br, int bc) {
  if (ar != br || ac != bc) {
    fail(kModule, op, "shape mismatch: " + shape_str(ar, ac) + " vs " + shape_str(br, bc));
  }
}

}  // namespace

Tensor Tensor::from(int rows, int cols, std::vector<double> v) {
  check(static_cast<size_t>(rows) * cols == v.size(), kModule, "tensor",
        "data length " + std::to_string(v.size()) + " does not fill " + shape_str(rows, cols));
  Tensor t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data = std::move(v);
  return t;
}

const double* Tape::ptr(int id) const {
  const Node& n = node(id);
  return n.leaf ? n.leaf->data.data() : n.value.data();
}

double* Tape::grad_ptr(int id) {
  Node& n = node(id);
  size_t sz = static_cast<size_t>(n.rows) * n.cols;
  if (n.grad.size() != sz) n.grad.assign(sz, 0.0);
  return n.grad.data();
}

Value Tape::push(int rows, int cols, bool needs_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = grad_enabled_ && needs_grad;
  n.value.resize(static_cast<size_t>(rows) * cols);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

std::span<const double> Tape::data(Value v) const {
  return {ptr(v.id), size(v)};
}

std::vector<double> Tape::values(Value v) const {
  auto s = data(v);
  return {s.begin(), s.end()};
}

double Tape::scalar_value(Value v) const {
  check(size(v) == 1, kModule, "scalar_value", "node is not scalar: " + shape_str(rows(v), cols(v)));
  return *ptr(v.id);
}

std::span<const double> Tape::grad(Value v) const {
  const Node& n = node(v.id);
  return {n.grad.data(), n.grad.size()};
}

Value Tape::leaf(Tensor& t) {
  auto it = leaf_ids_.find(&t);
  if (it != leaf_ids_.end()) return Value{it->second};
  Node n;
  n.rows = t.rows();
  n.cols = t.cols();
  n.leaf = &t;
  n.needs_grad = grad_enabled_ && t.requires_grad;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  leaf_ids_.emplace(&t, id);
  return Value{id};
}

Value Tape::constant(int rows, int cols, std::vector<double> v) {
  check(static_cast<size_t>(rows) * cols == v.size(), kModule, "constant",
        "data length does not fill " + shape_str(rows, cols));
  Value out = push(rows, cols, false);
  node(out.id).value = std::move(v);
  return out;
}

Value Tape::constant_fill(int rows, int cols, double fill) {
  Value out = push(rows, cols, false);
  std::fill(node(out.id).value.begin(), node(out.id).value.end(), fill);
  return out;
}

Value Tape::matmul(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.cols != nb.rows) {
    fail(kModule, "matmul", "inner dimensions differ: " + shape_str(na.rows, na.cols) +
                                " vs " + shape_str(nb.rows, nb.cols));
  }
  int r = na.rows, k = na.cols, c = nb.cols;
  Value out = push(r, c, na.needs_grad || nb.needs_grad);
  kern::matmul(node(out.id).value.data(), ptr(a.id), ptr(b.id), r, k, c);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out, r, k, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      if (t.node(a.id).needs_grad) {
        // dA += g (r x c) * B^T (c x k)
        std::vector<double> bt(static_cast<size_t>(c) * k);
        kern::transpose(bt.data(), t.ptr(b.id), k, c);
        std::vector<double> da(static_cast<size_t>(r) * k);
        kern::matmul(da.data(), g, bt.data(), r, c, k);
        kern::add(t.grad_ptr(a.id), t.grad_ptr(a.id), da.data(), da.size());
      }
      if (t.node(b.id).needs_grad) {
        // dB += A^T (k x r) * g (r x c)
        std::vector<double> at(static_cast<size_t>(k) * r);
        kern::transpose(at.data(), t.ptr(a.id), r, k);
        std::vector<double> db(static_cast<size_t>(k) * c);
        kern::matmul(db.data(), at.data(), g, k, r, c);
        kern::add(t.grad_ptr(b.id), t.grad_ptr(b.id), db.data(), db.size());
      }
    };
  }
  return out;
}

Value Tape::add(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  require_same_shape("add", na.rows, na.cols, nb.rows, nb.cols);
  Value out = push(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  kern::add(node(out.id).value.data(), ptr(a.id), ptr(b.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      if (t.node(a.id).needs_grad) kern::add(t.grad_ptr(a.id), t.grad_ptr(a.id), g.data(), g.size());
      if (t.node(b.id).needs_grad) kern::add(t.grad_ptr(b.id), t.grad_ptr(b.id), g.data(), g.size());
    };
  }
  return out;
}

Value Tape::sub(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  require_same_shape("sub", na.rows, na.cols, nb.rows, nb.cols);
  Value out = push(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  kern::sub(node(out.id).value.data(), ptr(a.id), ptr(b.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      if (t.node(a.id).needs_grad) kern::add(t.grad_ptr(a.id), t.grad_ptr(a.id), g.data(), g.size());
      if (t.node(b.id).needs_grad) kern::axpy(t.grad_ptr(b.id), -1.0, g.data(), g.size());
    };
  }
  return out;
}

Value Tape::mul(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  require_same_shape("mul", na.rows, na.cols, nb.rows, nb.cols);
  Value out = push(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  kern::mul(node(out.id).value.data(), ptr(a.id), ptr(b.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      std::vector<double> tmp(g.size());
      if (t.node(a.id).needs_grad) {
        kern::mul(tmp.data(), g.data(), t.ptr(b.id), g.size());
        kern::add(t.grad_ptr(a.id), t.grad_ptr(a.id), tmp.data(), tmp.size());
      }
      if (t.node(b.id).needs_grad) {
        kern::mul(tmp.data(), g.data(), t.ptr(a.id), g.size());
        kern::add(t.grad_ptr(b.id), t.grad_ptr(b.id), tmp.data(), tmp.size());
      }
    };
  }
  return out;
}

Value Tape::maximum(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  require_same_shape("maximum", na.rows, na.cols, nb.rows, nb.cols);
  Value out = push(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  kern::maximum(node(out.id).value.data(), ptr(a.id), ptr(b.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out](Tape& t) {
      // Matches the forward selection (a > b) ? a : b, so ties route to b.
      const auto& g = t.node(out.id).grad;
      const double* av = t.ptr(a.id);
      const double* bv = t.ptr(b.id);
      double* ga = t.node(a.id).needs_grad ? t.grad_ptr(a.id) : nullptr;
      double* gb = t.node(b.id).needs_grad ? t.grad_ptr(b.id) : nullptr;
      for (size_t i = 0; i < g.size(); ++i) {
        if (av[i] > bv[i]) {
          if (ga) ga[i] += g[i];
        } else if (gb) {
          gb[i] += g[i];
        }
      }
    };
  }
  return out;
}

Value Tape::unary_map(Value x, const char* /*op*/, void (*fwd)(double*, const double*, size_t),
                      std::function<void(Tape&, int, int)> bwd) {
  const Node& nx = node(x.id);
  Value out = push(nx.rows, nx.cols, nx.needs_grad);
  fwd(node(out.id).value.data(), ptr(x.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, bwd = std::move(bwd)](Tape& t) { bwd(t, x.id, out.id); };
  }
  return out;
}

Value Tape::sigmoid(Value x) {
  return unary_map(x, "sigmoid", &kern::sigmoid, [](Tape& t, int xid, int oid) {
    const auto& g = t.node(oid).grad;
    const double* y = t.ptr(oid);
    double* gx = t.grad_ptr(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Value Tape::tanh(Value x) {
  return unary_map(x, "tanh", &kern::tanh, [](Tape& t, int xid, int oid) {
    const auto& g = t.node(oid).grad;
    const double* y = t.ptr(oid);
    double* gx = t.grad_ptr(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Value Tape::softplus(Value x) {
  return unary_map(x, "softplus", &kern::softplus, [](Tape& t, int xid, int oid) {
    const auto& g = t.node(oid).grad;
    const double* xv = t.ptr(xid);
    double* gx = t.grad_ptr(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * kern::sigmoid1(xv[i]);
  });
}

Value Tape::relu(Value x) {
  return unary_map(x, "relu", &kern::relu, [](Tape& t, int xid, int oid) {
    const auto& g = t.node(oid).grad;
    const double* xv = t.ptr(xid);
    double* gx = t.grad_ptr(xid);
    for (size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Value Tape::rsqrt(Value x, double eps) {
  const Node& nx = node(x.id);
  Value out = push(nx.rows, nx.cols, nx.needs_grad);
  const double* xv = ptr(x.id);
  double* y = node(out.id).value.data();
  for (size_t i = 0; i < size(out); ++i) y[i] = 1.0 / std::sqrt(xv[i] + eps);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      const double* yv = t.ptr(out.id);
      double* gx = t.grad_ptr(x.id);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (-0.5 * yv[i] * yv[i] * yv[i]);
    };
  }
  return out;
}

Value Tape::concat_cols(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  check(na.rows == nb.rows, kModule, "concat",
        "row counts differ: " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  int r = na.rows, ca = na.cols, cb = nb.cols;
  Value out = push(r, ca + cb, na.needs_grad || nb.needs_grad);
  double* o = node(out.id).value.data();
  const double* av = ptr(a.id);
  const double* bv = ptr(b.id);
  for (int i = 0; i < r; ++i) {
    std::memcpy(o + static_cast<size_t>(i) * (ca + cb), av + static_cast<size_t>(i) * ca,
                sizeof(double) * ca);
    std::memcpy(o + static_cast<size_t>(i) * (ca + cb) + ca, bv + static_cast<size_t>(i) * cb,
                sizeof(double) * cb);
  }
  if (node(out.id).needs_grad) {
    node(out.id).backward = [a, b, out, r, ca, cb](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      if (t.node(a.id).needs_grad) {
        double* ga = t.grad_ptr(a.id);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < ca; ++j)
            ga[static_cast<size_t>(i) * ca + j] += g[static_cast<size_t>(i) * (ca + cb) + j];
      }
      if (t.node(b.id).needs_grad) {
        double* gb = t.grad_ptr(b.id);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < cb; ++j)
            gb[static_cast<size_t>(i) * cb + j] += g[static_cast<size_t>(i) * (ca + cb) + ca + j];
      }
    };
  }
  return out;
}

Value Tape::concat_rows(Value a, Value b) {
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  check(na.cols == nb.cols, kModule, "concat",
        "column counts differ: " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  Value out = push(na.rows + nb.rows, na.cols, na.needs_grad || nb.needs_grad);
  double* o = node(out.id).value.data();
  std::memcpy(o, ptr(a.id), sizeof(double) * size(a));
  std::memcpy(o + size(a), ptr(b.id), sizeof(double) * size(b));
  if (node(out.id).needs_grad) {
    size_t asz = size(a), bsz = size(b);
    node(out.id).backward = [a, b, out, asz, bsz](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      if (t.node(a.id).needs_grad) kern::add(t.grad_ptr(a.id), t.grad_ptr(a.id), g, asz);
      if (t.node(b.id).needs_grad) kern::add(t.grad_ptr(b.id), t.grad_ptr(b.id), g + asz, bsz);
    };
  }
  return out;
}

Value Tape::slice_cols(Value x, int begin, int len) {
  // Node references do not survive push() (vector growth); copy dims first.
  const int r = node(x.id).rows, c = node(x.id).cols;
  const bool needs = node(x.id).needs_grad;
  check(begin >= 0 && len >= 1 && begin + len <= c, kModule, "slice",
        "column slice [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
            ") out of range for " + shape_str(r, c));
  Value out = push(r, len, needs);
  double* o = node(out.id).value.data();
  const double* xv = ptr(x.id);
  for (int i = 0; i < r; ++i)
    std::memcpy(o + static_cast<size_t>(i) * len, xv + static_cast<size_t>(i) * c + begin,
                sizeof(double) * len);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, begin, len, r, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      double* gx = t.grad_ptr(x.id);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          gx[static_cast<size_t>(i) * c + begin + j] += g[static_cast<size_t>(i) * len + j];
    };
  }
  return out;
}

Value Tape::slice_rows(Value x, int begin, int len) {
  const int r = node(x.id).rows, c = node(x.id).cols;
  const bool needs = node(x.id).needs_grad;
  check(begin >= 0 && len >= 1 && begin + len <= r, kModule, "slice",
        "row slice [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
            ") out of range for " + shape_str(r, c));
  Value out = push(len, c, needs);
  std::memcpy(node(out.id).value.data(), ptr(x.id) + static_cast<size_t>(begin) * c,
              sizeof(double) * static_cast<size_t>(len) * c);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, begin, len, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      double* gx = t.grad_ptr(x.id);
      kern::add(gx + static_cast<size_t>(begin) * c, gx + static_cast<size_t>(begin) * c, g,
                static_cast<size_t>(len) * c);
    };
  }
  return out;
}

Value Tape::stride_rows(Value x, int offset, int stride, int count) {
  const int r = node(x.id).rows, c = node(x.id).cols;
  const bool needs = node(x.id).needs_grad;
  check(stride >= 1 && offset >= 0 && count >= 1 &&
            offset + static_cast<long>(stride) * (count - 1) < r,
        kModule, "slice", "strided row gather out of range for " + shape_str(r, c));
  Value out = push(count, c, needs);
  double* o = node(out.id).value.data();
  const double* xv = ptr(x.id);
  for (int i = 0; i < count; ++i)
    std::memcpy(o + static_cast<size_t>(i) * c, xv + static_cast<size_t>(offset + i * stride) * c,
                sizeof(double) * c);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, offset, stride, count, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      double* gx = t.grad_ptr(x.id);
      for (int i = 0; i < count; ++i) {
        double* row = gx + static_cast<size_t>(offset + i * stride) * c;
        kern::add(row, row, g + static_cast<size_t>(i) * c, static_cast<size_t>(c));
      }
    };
  }
  return out;
}

Value Tape::sum(Value x) {
  Value out = push(1, 1, node(x.id).needs_grad);
  node(out.id).value[0] = kern::sum(ptr(x.id), size(x));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out](Tape& t) {
      double g = t.node(out.id).grad[0];
      double* gx = t.grad_ptr(x.id);
      for (size_t i = 0; i < t.size(x); ++i) gx[i] += g;
    };
  }
  return out;
}

Value Tape::mean(Value x) {
  Value out = push(1, 1, node(x.id).needs_grad);
  size_t n = size(x);
  node(out.id).value[0] = kern::sum(ptr(x.id), n) / static_cast<double>(n);
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, n](Tape& t) {
      double g = t.node(out.id).grad[0] / static_cast<double>(n);
      double* gx = t.grad_ptr(x.id);
      for (size_t i = 0; i < n; ++i) gx[i] += g;
    };
  }
  return out;
}

Value Tape::mean_rows(Value x) {
  const Node& nx = node(x.id);
  int r = nx.rows, c = nx.cols;
  Value out = push(1, c, nx.needs_grad);
  double* o = node(out.id).value.data();
  const double* xv = ptr(x.id);
  for (int j = 0; j < c; ++j) {
    double acc = 0.0;
    for (int i = 0; i < r; ++i) acc += xv[static_cast<size_t>(i) * c + j];
    o[j] = acc / r;
  }
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, r, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      double* gx = t.grad_ptr(x.id);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gx[static_cast<size_t>(i) * c + j] += g[j] / r;
    };
  }
  return out;
}

Value Tape::reduce_max(Value x) {
  Value out = push(1, 1, node(x.id).needs_grad);
  const double* xv = ptr(x.id);
  size_t n = size(x);
  size_t arg = 0;
  for (size_t i = 1; i < n; ++i) {
    if (xv[i] > xv[arg]) arg = i;  // ties keep the lowest index
  }
  node(out.id).value[0] = xv[arg];
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, arg](Tape& t) {
      t.grad_ptr(x.id)[arg] += t.node(out.id).grad[0];
    };
  }
  return out;
}

Value Tape::l2norm(Value x) {
  Value out = push(1, 1, node(x.id).needs_grad);
  node(out.id).value[0] = kern::l2norm(ptr(x.id), size(x));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out](Tape& t) {
      double y = t.node(out.id).value[0];
      if (y == 0.0) return;  // subgradient 0 at the origin
      double g = t.node(out.id).grad[0] / y;
      kern::axpy(t.grad_ptr(x.id), g, t.ptr(x.id), t.size(x));
    };
  }
  return out;
}

Value Tape::add_bias(Value x, Value bias) {
  const Node& nx = node(x.id);
  const Node& nb = node(bias.id);
  check(nb.rows == 1 && nb.cols == nx.cols, kModule, "broadcast-add-bias",
        "bias " + shape_str(nb.rows, nb.cols) + " does not broadcast over " +
            shape_str(nx.rows, nx.cols));
  int r = nx.rows, c = nx.cols;
  Value out = push(r, c, nx.needs_grad || nb.needs_grad);
  double* o = node(out.id).value.data();
  const double* xv = ptr(x.id);
  const double* bv = ptr(bias.id);
  for (int i = 0; i < r; ++i)
    kern::add(o + static_cast<size_t>(i) * c, xv + static_cast<size_t>(i) * c, bv,
              static_cast<size_t>(c));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, bias, out, r, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      if (t.node(x.id).needs_grad)
        kern::add(t.grad_ptr(x.id), t.grad_ptr(x.id), g, static_cast<size_t>(r) * c);
      if (t.node(bias.id).needs_grad) {
        double* gb = t.grad_ptr(bias.id);
        for (int i = 0; i < r; ++i)
          kern::add(gb, gb, g + static_cast<size_t>(i) * c, static_cast<size_t>(c));
      }
    };
  }
  return out;
}

Value Tape::mul_rows(Value x, Value row) {
  const Node& nx = node(x.id);
  const Node& nr = node(row.id);
  check(nr.rows == 1 && nr.cols == nx.cols, kModule, "mul_rows",
        "row " + shape_str(nr.rows, nr.cols) + " does not broadcast over " +
            shape_str(nx.rows, nx.cols));
  int r = nx.rows, c = nx.cols;
  Value out = push(r, c, nx.needs_grad || nr.needs_grad);
  double* o = node(out.id).value.data();
  const double* xv = ptr(x.id);
  const double* rv = ptr(row.id);
  for (int i = 0; i < r; ++i)
    kern::mul(o + static_cast<size_t>(i) * c, xv + static_cast<size_t>(i) * c, rv,
              static_cast<size_t>(c));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, row, out, r, c](Tape& t) {
      const double* g = t.node(out.id).grad.data();
      const double* xv2 = t.ptr(x.id);
      const double* rv2 = t.ptr(row.id);
      if (t.node(x.id).needs_grad) {
        double* gx = t.grad_ptr(x.id);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gx[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i) * c + j] * rv2[j];
      }
      if (t.node(row.id).needs_grad) {
        double* gr = t.grad_ptr(row.id);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gr[j] += g[static_cast<size_t>(i) * c + j] * xv2[static_cast<size_t>(i) * c + j];
      }
    };
  }
  return out;
}

Value Tape::scale(Value x, double s) {
  Value out = push(node(x.id).rows, node(x.id).cols, node(x.id).needs_grad);
  kern::scale(node(out.id).value.data(), ptr(x.id), s, size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, out, s](Tape& t) {
      kern::axpy(t.grad_ptr(x.id), s, t.node(out.id).grad.data(), t.size(out));
    };
  }
  return out;
}

Value Tape::mul_scalar(Value x, Value s) {
  check(size(s) == 1, kModule, "mul_scalar", "scale factor must be 1x1, got " +
                                                 shape_str(rows(s), cols(s)));
  Value out = push(node(x.id).rows, node(x.id).cols, node(x.id).needs_grad || node(s.id).needs_grad);
  kern::scale(node(out.id).value.data(), ptr(x.id), *ptr(s.id), size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, s, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      if (t.node(x.id).needs_grad) kern::axpy(t.grad_ptr(x.id), *t.ptr(s.id), g.data(), g.size());
      if (t.node(s.id).needs_grad) t.grad_ptr(s.id)[0] += kern::dot(g.data(), t.ptr(x.id), g.size());
    };
  }
  return out;
}

Value Tape::div_scalar(Value x, Value s) {
  check(size(s) == 1, kModule, "div_scalar", "divisor must be 1x1, got " +
                                                 shape_str(rows(s), cols(s)));
  double sv = *ptr(s.id);
  check(sv != 0.0, kModule, "div_scalar", "division by zero");
  Value out = push(node(x.id).rows, node(x.id).cols, node(x.id).needs_grad || node(s.id).needs_grad);
  kern::scale(node(out.id).value.data(), ptr(x.id), 1.0 / sv, size(out));
  if (node(out.id).needs_grad) {
    node(out.id).backward = [x, s, out](Tape& t) {
      const auto& g = t.node(out.id).grad;
      double sv2 = *t.ptr(s.id);
      if (t.node(x.id).needs_grad) kern::axpy(t.grad_ptr(x.id), 1.0 / sv2, g.data(), g.size());
      if (t.node(s.id).needs_grad) {
        double acc = kern::dot(g.data(), t.ptr(out.id), g.size());
        t.grad_ptr(s.id)[0] += -acc / sv2;
      }
    };
  }
  return out;
}

void Tape::backward(Value loss) {
  if (consumed_) {
    throw Error(Error::Kind::internal, kModule, "backward",
                "tape already consumed; one backward per forward");
  }
  check(size(loss) == 1, kModule, "backward",
        "loss must be scalar, got " + shape_str(rows(loss), cols(loss)));
  consumed_ = true;
  grad_ptr(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this);
  }
}

void Tape::apply_leaf_grads(double factor) {
  for (const Node& n : nodes_) {
    if (!n.leaf || !n.needs_grad || n.grad.empty()) continue;
    n.leaf->ensure_grad();
    kern::axpy(n.leaf->grad.data(), factor, n.grad.data(), n.grad.size());
  }
}

}  // namespace odekit::ad

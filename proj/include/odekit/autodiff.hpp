#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace odekit::ad {

// Dense row-major 64-bit tensor. Everything is rank 2; a "vector" is a 1 x n
// row. 64-bit floats throughout: solver-order measurements and gradient
// checks need headroom below 32-bit rounding noise.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data(static_cast<size_t>(rows) * cols, fill) {}

  static Tensor row(std::vector<double> v) {
    Tensor t;
    t.rows_ = 1;
    t.cols_ = static_cast<int>(v.size());
    t.data = std::move(v);
    return t;
  }
  static Tensor from(int rows, int cols, std::vector<double> v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data.size(); }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols_ + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols_ + j]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  std::vector<double> data;
  std::vector<double> grad;  // materialized on demand, always same shape as data
  bool requires_grad = false;
  std::string name;

 private:
  int rows_ = 0, cols_ = 0;
};

// Handle into a tape node.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Single-use reverse-mode tape over a fixed primitive set. One forward pass
// per tape, one backward per tape; gradients accumulate additively across
// fan-out in reverse topological (= reverse recording) order, which makes
// them bit-deterministic.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves and constants -----------------------------------------------
  Value leaf(Tensor& t);                                  // reads t.data in place
  Value constant(int rows, int cols, std::vector<double> v);
  Value constant_fill(int rows, int cols, double fill);
  Value scalar(double v) { return constant(1, 1, {v}); }

  // Primitives -----------------------------------------------------------
  Value matmul(Value a, Value b);              // (r x k)(k x c)
  Value add(Value a, Value b);                 // same shape
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);                 // elementwise
  Value maximum(Value a, Value b);             // elementwise max; ties route grad to b
  Value sigmoid(Value x);
  Value tanh(Value x);
  Value softplus(Value x);
  Value relu(Value x);
  Value rsqrt(Value x, double eps);            // 1/sqrt(x + eps), x + eps must stay > 0
  Value concat_cols(Value a, Value b);         // same row count
  Value concat_rows(Value a, Value b);         // same col count
  Value slice_cols(Value x, int begin, int len);
  Value slice_rows(Value x, int begin, int len);
  Value stride_rows(Value x, int offset, int stride, int count);  // gather rows offset + i*stride
  Value sum(Value x);                          // 1 x 1
  Value mean(Value x);                         // 1 x 1
  Value mean_rows(Value x);                    // column means, 1 x cols
  Value reduce_max(Value x);                   // 1 x 1; ties route grad to lowest index
  Value l2norm(Value x);                       // 1 x 1; grad 0 at the origin
  Value add_bias(Value x, Value bias);         // bias is 1 x cols, broadcast over rows
  Value mul_rows(Value x, Value row);          // row is 1 x cols, broadcast multiply
  Value scale(Value x, double s);              // constant scale
  Value mul_scalar(Value x, Value s);          // s is 1 x 1
  Value div_scalar(Value x, Value s);          // s is 1 x 1, nonzero

  // Execution ------------------------------------------------------------
  // loss must be 1 x 1. Consumes the tape: a second call is an error.
  void backward(Value loss);
  bool consumed() const { return consumed_; }

  // Adds this tape's leaf gradients into the tensors' grad buffers, scaled
  // by factor. Callers control accumulation order across tapes.
  void apply_leaf_grads(double factor = 1.0);

  // When disabled, ops still compute values but record no backward rules.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // Inspection -----------------------------------------------------------
  int rows(Value v) const { return node(v.id).rows; }
  int cols(Value v) const { return node(v.id).cols; }
  size_t size(Value v) const { return static_cast<size_t>(node(v.id).rows) * node(v.id).cols; }
  std::span<const double> data(Value v) const;
  std::vector<double> values(Value v) const;
  double scalar_value(Value v) const;
  std::span<const double> grad(Value v) const;
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<double> value;   // empty when leaf
    Tensor* leaf = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const double* ptr(int id) const;
  double* grad_ptr(int id);  // allocates on first touch
  Value push(int rows, int cols, bool needs_grad);
  Value unary_map(Value x, const char* op, void (*fwd)(double*, const double*, size_t),
                  std::function<void(Tape&, int, int)> bwd);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> leaf_ids_;
  bool consumed_ = false;
  bool grad_enabled_ = true;
};

}  // namespace odekit::ad

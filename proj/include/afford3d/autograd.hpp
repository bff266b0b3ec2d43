#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every value on a Tape is a 2-D matrix; batch handling is left to callers
// (one graph per sample, joined where an op genuinely spans the batch).
// Ops record a closure that, given the gradient of their output, pushes
// gradients into their inputs. Tape::backward replays the closures in
// reverse creation order, which is a valid topological order.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace afford3d::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named learnable (or frozen) array. Non-trainable parameters also carry
// buffers such as batch-norm running statistics.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(const Mat& grad_out)>;

  Tape() : serial_(next_serial()) {}
  // With grad_enabled = false no node requires a gradient and no closures
  // are kept, which makes inference cheaper.
  explicit Tape(bool grad_enabled) : serial_(next_serial()), grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  // Process-unique id of this tape.
  uint64_t serial() const { return serial_; }

  Var constant(Mat value) { return leaf(std::move(value), false); }
  Var leaf(Mat value, bool requires_grad);
  // Leaf bound to a parameter; gradients are added to p.grad on backward.
  Var parameter(Parameter& p);
  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Mat value, std::span<const Var> inputs, Backward backward);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);
  // Gradient accumulated at a node after backward (zeros if none reached it).
  Mat grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  static uint64_t next_serial();

  std::deque<Node> nodes_;
  uint64_t serial_;
  bool grad_enabled_ = true;
};

inline const Mat& Var::value() const { return tape->value(id); }

// ---- elementwise / linear algebra ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a + row, row is 1 x cols(a) broadcast over rows.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// x * w + b, w: (in, out), b: (1, out).
Var linear(Var x, Var w, Var b);
Var linear(Var x, Var w);

// ---- activations ----
// Exact (erf) GELU.
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);

// ---- normalization ----
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

struct BatchNormBuffers {
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};
// Normalizes each column over all rows. In training mode the batch
// statistics are used and the running buffers are updated; otherwise the
// running statistics are used.
Var batch_norm(Var x, Var gamma, Var beta, const BatchNormBuffers& buffers, bool training);

// ---- structural ----
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var repeat_rows(Var row, Eigen::Index n);
Var gather_rows(Var a, std::span<const int> index);
// Max over consecutive groups of group_size rows: (G*group_size, C) -> (G, C).
Var group_max(Var a, Eigen::Index group_size);
// out.row(r) = sum_j weight(r, j) * a.row(index(r, j)).
Var weighted_gather(Var a, const IndexMat& index, const Mat& weight);
Var sum(Var a);

// ---- convolution ----
struct ConvShape {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};
// x: (C_in, H*W) channel-major image, w: (C_out, C_in*k*k), b: (1, C_out).
// Returns (C_out, H_out*W_out).
Var conv2d(Var x, Var w, Var b, const ConvShape& shape);

}  // namespace afford3d::ad

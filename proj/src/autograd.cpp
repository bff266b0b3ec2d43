#include "afford3d/autograd.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace afford3d::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

bool any_requires(Tape& t, std::span<const Var> inputs) {
  for (const Var& v : inputs)
    if (t.requires_grad(v)) return true;
  return false;
}

}  // namespace

uint64_t Tape::next_serial() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable && grad_enabled_;
  n.param = n.requires_grad ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = any_requires(*this, inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward: foreign variable");
  require(value(root.id).size() == 1, "backward: root must be scalar");
  if (!nodes_[root.id].requires_grad) return;
  accumulate(root.id, Mat::Ones(1, 1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) {
      n.backward(n.grad);
    } else if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols())
        n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape* t = a.tape;
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Mat& g) {
    t->accumulate(a.id, g);
    t->accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape* t = a.tape;
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Mat& g) {
    t->accumulate(a.id, g);
    t->accumulate(b.id, -g);
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tape* t = a.tape;
  return t->record(a.value().cwiseProduct(b.value()), {a, b}, [t, a, b](const Mat& g) {
    if (t->requires_grad(a)) t->accumulate(a.id, g.cwiseProduct(b.value()));
    if (t->requires_grad(b)) t->accumulate(b.id, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  return t->record(a.value() * s, {a}, [t, a, s](const Mat& g) { t->accumulate(a.id, g * s); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Tape* t = a.tape;
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return t->record(std::move(out), {a, row}, [t, a, row](const Mat& g) {
    t->accumulate(a.id, g);
    if (t->requires_grad(row)) t->accumulate(row.id, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape* t = a.tape;
  Mat out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return t->record(std::move(out), {a, b}, [t, a, b](const Mat& g) {
    if (t->requires_grad(a)) {
      Mat ga(a.rows(), a.cols());
      ga.noalias() = g * b.value().transpose();
      t->accumulate(a.id, ga);
    }
    if (t->requires_grad(b)) {
      Mat gb(b.rows(), b.cols());
      gb.noalias() = a.value().transpose() * g;
      t->accumulate(b.id, gb);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape* t = a.tape;
  Mat out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return t->record(std::move(out), {a, b}, [t, a, b](const Mat& g) {
    if (t->requires_grad(a)) {
      Mat ga(a.rows(), a.cols());
      ga.noalias() = g * b.value();
      t->accumulate(a.id, ga);
    }
    if (t->requires_grad(b)) {
      Mat gb(b.rows(), b.cols());
      gb.noalias() = g.transpose() * a.value();
      t->accumulate(b.id, gb);
    }
  });
}

Var transpose(Var a) {
  Tape* t = a.tape;
  Mat out = a.value().transpose();
  return t->record(std::move(out), {a}, [t, a](const Mat& g) { t->accumulate(a.id, g.transpose()); });
}

Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }
Var linear(Var x, Var w) { return matmul(x, w); }

Var gelu(Var a) {
  Tape* t = a.tape;
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return t->record(std::move(out), {a}, [t, a](const Mat& g) {
    const Mat& x = a.value();
    Mat ga(x.rows(), x.cols());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      ga.data()[i] = g.data()[i] * (cdf + v * pdf);
    }
    t->accumulate(a.id, ga);
  });
}

Var sigmoid(Var a) {
  Tape* t = a.tape;
  Mat out = a.value().unaryExpr([](double v) {
    // Split by sign so exp never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Var y = t->constant(std::move(out));
  return t->record(y.value(), {a}, [t, a, y](const Mat& g) {
    const Mat& s = y.value();
    t->accumulate(a.id, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var softmax_rows(Var a) {
  Tape* t = a.tape;
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Var y = t->constant(std::move(out));
  return t->record(y.value(), {a}, [t, a, y](const Mat& g) {
    const Mat& s = y.value();
    Mat ga = s.cwiseProduct(g);
    Eigen::VectorXd dots = ga.rowwise().sum();
    ga -= (s.array().colwise() * dots.array()).matrix();
    t->accumulate(a.id, ga);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(),
          "layer_norm: parameter shape mismatch");
  Tape* t = x.tape;
  const Mat& v = x.value();
  const auto cols = static_cast<double>(v.cols());
  Eigen::VectorXd inv_std(v.rows());
  Mat xhat(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().sum() / cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std[r];
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  Var xh = t->constant(std::move(xhat));
  return t->record(std::move(out), {x, gain, bias}, [t, x, gain, bias, xh, inv_std, cols](const Mat& g) {
    const Mat& xhat = xh.value();
    if (t->requires_grad(gain)) t->accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
    if (t->requires_grad(bias)) t->accumulate(bias.id, g.colwise().sum());
    if (t->requires_grad(x)) {
      Mat dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
      Mat gx(xhat.rows(), xhat.cols());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / cols;
        const double m2 = dxhat.row(r).dot(xhat.row(r)) / cols;
        gx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std[r];
      }
      t->accumulate(x.id, gx);
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, const BatchNormBuffers& buffers, bool training) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 && beta.cols() == x.cols(),
          "batch_norm: parameter shape mismatch");
  require(buffers.running_mean != nullptr && buffers.running_var != nullptr, "batch_norm: missing buffers");
  Tape* t = x.tape;
  const Mat& v = x.value();
  const Eigen::Index n = v.rows();
  Eigen::RowVectorXd mean, inv_std;
  if (training) {
    require(n > 1, "batch_norm: training mode needs more than one row");
    mean = v.colwise().mean();
    Eigen::RowVectorXd var = (v.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n);
    inv_std = (var.array() + buffers.eps).rsqrt();
    const double m = buffers.momentum;
    Mat& rm = buffers.running_mean->value;
    Mat& rv = buffers.running_var->value;
    rm.row(0) = (1.0 - m) * rm.row(0) + m * mean;
    rv.row(0) = (1.0 - m) * rv.row(0) + m * var * (static_cast<double>(n) / static_cast<double>(n - 1));
  } else {
    mean = buffers.running_mean->value.row(0);
    inv_std = (buffers.running_var->value.row(0).array() + buffers.eps).rsqrt();
  }
  Mat xhat = ((v.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  Var xh = t->constant(std::move(xhat));
  return t->record(std::move(out), {x, gamma, beta}, [t, x, gamma, beta, xh, inv_std, training](const Mat& g) {
    const Mat& xhat = xh.value();
    if (t->requires_grad(gamma)) t->accumulate(gamma.id, g.cwiseProduct(xhat).colwise().sum());
    if (t->requires_grad(beta)) t->accumulate(beta.id, g.colwise().sum());
    if (!t->requires_grad(x)) return;
    Mat dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
    if (!training) {
      t->accumulate(x.id, (dxhat.array().rowwise() * inv_std.array()).matrix());
      return;
    }
    const auto n = static_cast<double>(xhat.rows());
    Eigen::RowVectorXd m1 = dxhat.colwise().sum() / n;
    Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().sum() / n;
    Mat gx = dxhat;
    gx.rowwise() -= m1;
    gx -= (xhat.array().rowwise() * m2.array()).matrix();
    gx = (gx.array().rowwise() * inv_std.array()).matrix();
    t->accumulate(x.id, gx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: empty");
  Tape* t = parts[0].tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t->record(std::move(out), parts, [t, keep](const Mat& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      const Eigen::Index r = p.rows();
      if (t->requires_grad(p)) t->accumulate(p.id, g.middleRows(at, r));
      at += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: empty");
  Tape* t = parts[0].tape;
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t->record(std::move(out), parts, [t, keep](const Mat& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      const Eigen::Index c = p.cols();
      if (t->requires_grad(p)) t->accumulate(p.id, g.middleCols(at, c));
      at += c;
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Tape* t = a.tape;
  Mat out = a.value().middleRows(start, count);
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t->record(std::move(out), {a}, [t, a, start, count, rows, cols](const Mat& g) {
    Mat ga = Mat::Zero(rows, cols);
    ga.middleRows(start, count) = g;
    t->accumulate(a.id, ga);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Tape* t = a.tape;
  Mat out = a.value().middleCols(start, count);
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t->record(std::move(out), {a}, [t, a, start, count, rows, cols](const Mat& g) {
    Mat ga = Mat::Zero(rows, cols);
    ga.middleCols(start, count) = g;
    t->accumulate(a.id, ga);
  });
}

Var repeat_rows(Var row, Eigen::Index n) {
  require(row.rows() == 1, "repeat_rows: expects a single row");
  Tape* t = row.tape;
  Mat out = row.value().replicate(n, 1);
  return t->record(std::move(out), {row}, [t, row](const Mat& g) { t->accumulate(row.id, g.colwise().sum()); });
}

Var gather_rows(Var a, std::span<const int> index) {
  Tape* t = a.tape;
  const Mat& v = a.value();
  Mat out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < v.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  const Eigen::Index rows = v.rows(), cols = v.cols();
  return t->record(std::move(out), {a}, [t, a, idx = std::move(idx), rows, cols](const Mat& g) {
    Mat ga = Mat::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t->accumulate(a.id, ga);
  });
}

Var group_max(Var a, Eigen::Index group_size) {
  require(group_size > 0 && a.rows() % group_size == 0, "group_max: rows not divisible by group size");
  Tape* t = a.tape;
  const Mat& v = a.value();
  const Eigen::Index groups = v.rows() / group_size;
  Mat out(groups, v.cols());
  IndexMat arg(groups, v.cols());
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    const Eigen::Index base = gi * group_size;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      Eigen::Index best = base;
      double best_v = v(base, c);
      for (Eigen::Index r = base + 1; r < base + group_size; ++r) {
        if (v(r, c) > best_v) {
          best_v = v(r, c);
          best = r;
        }
      }
      out(gi, c) = best_v;
      arg(gi, c) = static_cast<int>(best);
    }
  }
  const Eigen::Index rows = v.rows(), cols = v.cols();
  return t->record(std::move(out), {a}, [t, a, arg = std::move(arg), rows, cols](const Mat& g) {
    Mat ga = Mat::Zero(rows, cols);
    for (Eigen::Index gi = 0; gi < arg.rows(); ++gi)
      for (Eigen::Index c = 0; c < cols; ++c) ga(arg(gi, c), c) += g(gi, c);
    t->accumulate(a.id, ga);
  });
}

Var weighted_gather(Var a, const IndexMat& index, const Mat& weight) {
  require(index.rows() == weight.rows() && index.cols() == weight.cols(), "weighted_gather: shape mismatch");
  Tape* t = a.tape;
  const Mat& v = a.value();
  Mat out = Mat::Zero(index.rows(), v.cols());
  for (Eigen::Index r = 0; r < index.rows(); ++r)
    for (Eigen::Index j = 0; j < index.cols(); ++j) {
      require(index(r, j) >= 0 && index(r, j) < v.rows(), "weighted_gather: index out of range");
      out.row(r) += weight(r, j) * v.row(index(r, j));
    }
  const Eigen::Index rows = v.rows(), cols = v.cols();
  return t->record(std::move(out), {a}, [t, a, index, weight, rows, cols](const Mat& g) {
    Mat ga = Mat::Zero(rows, cols);
    for (Eigen::Index r = 0; r < index.rows(); ++r)
      for (Eigen::Index j = 0; j < index.cols(); ++j) ga.row(index(r, j)) += weight(r, j) * g.row(r);
    t->accumulate(a.id, ga);
  });
}

Var sum(Var a) {
  Tape* t = a.tape;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t->record(std::move(out), {a}, [t, a, rows, cols](const Mat& g) {
    t->accumulate(a.id, Mat::Constant(rows, cols, g(0, 0)));
  });
}

namespace {

// (C*k*k, Ho*Wo) patch matrix.
Mat im2col(const Mat& x, const ConvShape& s) {
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(s.in_channels) * k * k, ho * wo);
  for (int c = 0; c < s.in_channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= s.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            if (ix < 0 || ix >= s.width) continue;
            cols(row, oy * wo + ox) = x(c, iy * s.width + ix);
          }
        }
      }
  return cols;
}

Mat col2im(const Mat& cols, const ConvShape& s) {
  const int ho = s.out_height(), wo = s.out_width(), k = s.kernel;
  Mat x = Mat::Zero(s.in_channels, static_cast<Eigen::Index>(s.height) * s.width);
  for (int c = 0; c < s.in_channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= s.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.padding + kx;
            if (ix < 0 || ix >= s.width) continue;
            x(c, iy * s.width + ix) += cols(row, oy * wo + ox);
          }
        }
      }
  return x;
}

}  // namespace

Var conv2d(Var x, Var w, Var b, const ConvShape& s) {
  require(x.rows() == s.in_channels && x.cols() == static_cast<Eigen::Index>(s.height) * s.width,
          "conv2d: input shape mismatch");
  require(w.cols() == static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel, "conv2d: weight shape mismatch");
  require(b.rows() == 1 && b.cols() == w.rows(), "conv2d: bias shape mismatch");
  Tape* t = x.tape;
  Var cols = t->constant(im2col(x.value(), s));
  Mat out(w.rows(), cols.cols());
  out.noalias() = w.value() * cols.value();
  out.colwise() += b.value().row(0).transpose();
  return t->record(std::move(out), {x, w, b}, [t, x, w, b, cols, s](const Mat& g) {
    if (t->requires_grad(w)) {
      Mat gw(w.rows(), w.cols());
      gw.noalias() = g * cols.value().transpose();
      t->accumulate(w.id, gw);
    }
    if (t->requires_grad(b)) t->accumulate(b.id, g.rowwise().sum().transpose());
    if (t->requires_grad(x)) {
      Mat gc(cols.rows(), cols.cols());
      gc.noalias() = w.value().transpose() * g;
      t->accumulate(x.id, col2im(gc, s));
    }
  });
}

}  // namespace afford3d::ad

#include "scgib/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace scgib {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_tape(const Value& a, const Value& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw ValidationError(std::string(op) + ": operands live on different tapes");
  }
}

Matrix expand_to(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* op) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(m) + " to " +
                   shape_str(rows, cols));
}

// Sums a result-shaped gradient back down to the shape of a broadcast operand.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

// Saturating activations underflow into subnormal doubles whose arithmetic
// runs through processor microcode, slowing whole training steps. Below the
// smallest normal double the values carry no usable signal, so the
// saturating ops flush them to an exact zero.
void flush_subnormals(Matrix& m) {
  m = m.unaryExpr([](double v) {
    return std::fabs(v) < std::numeric_limits<double>::min() ? 0.0 : v;
  });
}

std::pair<Eigen::Index, Eigen::Index> binary_shape(const Matrix& a, const Matrix& b,
                                                   const char* op) {
  auto fits = [](const Matrix& small, const Matrix& big) {
    if (small.rows() == big.rows() && small.cols() == big.cols()) return true;
    if (small.rows() == 1 && small.cols() == 1) return true;
    if (small.rows() == 1 && small.cols() == big.cols()) return true;
    if (small.cols() == 1 && small.rows() == big.rows()) return true;
    return false;
  };
  if (a.size() >= b.size() && fits(b, a)) return {a.rows(), a.cols()};
  if (b.size() > a.size() && fits(a, b)) return {b.rows(), b.cols()};
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " +
                   shape_str(b));
}

void check_sorted_segments(const std::vector<int>& seg, Eigen::Index n, const char* op) {
  if (static_cast<Eigen::Index>(seg.size()) != n) {
    throw ValidationError(std::string(op) + ": segment ids size " +
                          std::to_string(seg.size()) + " != rows " + std::to_string(n));
  }
  for (std::size_t i = 1; i < seg.size(); ++i) {
    if (seg[i] < seg[i - 1]) {
      throw ValidationError(std::string(op) + ": segment ids not sorted at position " +
                            std::to_string(i));
    }
  }
  if (!seg.empty() && seg.front() < 0) {
    throw ValidationError(std::string(op) + ": negative segment id");
  }
}

struct Binary {
  Matrix ea, eb;  // operands expanded to the result shape
  Eigen::Index ra, ca, rb, cb;
};

Binary prepare_binary(const Value& a, const Value& b, const char* op) {
  require_same_tape(a, b, op);
  auto [rows, cols] = binary_shape(a.data(), b.data(), op);
  return Binary{expand_to(a.data(), rows, cols, op), expand_to(b.data(), rows, cols, op),
                a.rows(), a.cols(), b.rows(), b.cols()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Value / Tape

const Matrix& Value::data() const { return tape_->nodes_[index_].value; }

const Matrix& Value::grad() const { return tape_->nodes_[index_].grad; }

bool Value::requires_grad() const { return tape_->nodes_[index_].requires_grad; }

double Value::scalar() const {
  const Matrix& m = data();
  if (m.rows() != 1 || m.cols() != 1) {
    throw ShapeError("scalar(): value has shape " + shape_str(m));
  }
  return m(0, 0);
}

Value Tape::leaf(Matrix data, bool requires_grad) {
  nodes_.push_back(Node{std::move(data), Matrix(), requires_grad, PullFn()});
  return Value(this, nodes_.size() - 1);
}

Value Tape::record(Matrix value, bool requires_grad, PullFn pull) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad,
                        requires_grad ? std::move(pull) : PullFn()});
  return Value(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t i, const Matrix& contribution) {
  Node& node = nodes_[i];
  if (!node.requires_grad) return;
  node.grad += contribution;
}

void Tape::backward(const Value& root) {
  if (root.tape() != this) throw ValidationError("backward: root from another tape");
  {
    const Node& r = nodes_[root.index()];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ShapeError("backward: root must be scalar, got " + shape_str(r.value));
    }
  }
  for (Node& node : nodes_) {
    if (node.requires_grad) {
      node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    } else {
      node.grad.resize(0, 0);
    }
  }
  if (!nodes_[root.index()].requires_grad) return;
  nodes_[root.index()].grad(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (node.requires_grad && node.pull) {
      node.pull(*this, node.grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Value add(const Value& a, const Value& b) {
  Binary p = prepare_binary(a, b, "add");
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  auto ra = p.ra, ca = p.ca, rb = p.rb, cb = p.cb;
  return t.record(p.ea + p.eb, rg, [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, reduce_to(g, ra, ca));
    tape.accumulate(ib, reduce_to(g, rb, cb));
  });
}

Value sub(const Value& a, const Value& b) {
  Binary p = prepare_binary(a, b, "sub");
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  auto ra = p.ra, ca = p.ca, rb = p.rb, cb = p.cb;
  return t.record(p.ea - p.eb, rg, [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, reduce_to(g, ra, ca));
    tape.accumulate(ib, reduce_to(-g, rb, cb));
  });
}

Value mul(const Value& a, const Value& b) {
  Binary p = prepare_binary(a, b, "mul");
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  auto ra = p.ra, ca = p.ca, rb = p.rb, cb = p.cb;
  Matrix ea = p.ea, eb = p.eb;
  return t.record(ea.cwiseProduct(eb), rg, [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, reduce_to(g.cwiseProduct(eb), ra, ca));
    tape.accumulate(ib, reduce_to(g.cwiseProduct(ea), rb, cb));
  });
}

Value div(const Value& a, const Value& b) {
  Binary p = prepare_binary(a, b, "div");
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  auto ra = p.ra, ca = p.ca, rb = p.rb, cb = p.cb;
  Matrix ea = p.ea, eb = p.eb;
  Matrix out = ea.cwiseQuotient(eb);
  Matrix quot = out;
  return t.record(std::move(out), rg, [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, reduce_to(g.cwiseQuotient(eb), ra, ca));
    tape.accumulate(ib, reduce_to(Matrix(-g.cwiseProduct(quot).cwiseQuotient(eb)), rb, cb));
  });
}

Value matmul(const Value& a, const Value& b) {
  require_same_tape(a, b, "matmul");
  const Matrix& ma = a.data();
  const Matrix& mb = b.data();
  if (ma.cols() != mb.rows()) {
    throw ShapeError("matmul: " + shape_str(ma) + " vs " + shape_str(mb));
  }
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  Matrix ca = ma, cb = mb;
  return t.record(ma * mb, rg, [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, g * cb.transpose());
    tape.accumulate(ib, ca.transpose() * g);
  });
}

Value scale(const Value& a, double factor) {
  Tape& t = *a.tape();
  auto ia = a.index();
  return t.record(a.data() * factor, a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g * factor); });
}

Value add_constant(const Value& a, double offset) {
  Tape& t = *a.tape();
  auto ia = a.index();
  return t.record((a.data().array() + offset).matrix(), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g); });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value relu(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix mask = (a.data().array() > 0.0).cast<double>();
  return t.record(a.data().cwiseProduct(mask), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.cwiseProduct(mask)); });
}

Value sigmoid(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix s = (1.0 / (1.0 + (-a.data().array()).exp())).matrix();
  flush_subnormals(s);
  Matrix sc = s;
  return t.record(std::move(s), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, (g.array() * sc.array() * (1.0 - sc.array())).matrix());
  });
}

Value exp(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix e = a.data().array().exp().matrix();
  Matrix ec = e;
  return t.record(std::move(e), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.cwiseProduct(ec)); });
}

Value log(const Value& a) {
  if ((a.data().array() <= 0.0).any()) {
    throw DomainError("log: non-positive input");
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix x = a.data();
  return t.record(x.array().log().matrix(), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.cwiseQuotient(x)); });
}

Value sqrt(const Value& a) {
  if ((a.data().array() < 0.0).any()) {
    throw DomainError("sqrt: negative input");
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix s = a.data().array().sqrt().matrix();
  Matrix sc = s;
  return t.record(std::move(s), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, (0.5 * g.array() / sc.array()).matrix());
  });
}

Value clamp(const Value& a, double lo, double hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  Tape& t = *a.tape();
  auto ia = a.index();
  const Matrix& x = a.data();
  Matrix mask = ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
  Matrix out = x.array().max(lo).min(hi).matrix();
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    tape.accumulate(ia, g.cwiseProduct(mask));
  });
}

Value transpose(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  return t.record(a.data().transpose(), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.transpose()); });
}

Value sum(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  auto r = a.rows(), c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.data().sum()), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) {
                    tape.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                  });
}

Value sum(const Value& a, int axis) {
  if (axis != 0 && axis != 1) throw ValidationError("sum: axis must be 0 or 1");
  Tape& t = *a.tape();
  auto ia = a.index();
  auto r = a.rows(), c = a.cols();
  if (axis == 0) {
    return t.record(a.data().colwise().sum(), a.requires_grad(),
                    [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.replicate(r, 1)); });
  }
  return t.record(a.data().rowwise().sum(), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, g.replicate(1, c)); });
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.data().size())); }

Value mean(const Value& a, int axis) {
  if (axis != 0 && axis != 1) throw ValidationError("mean: axis must be 0 or 1");
  double n = axis == 0 ? static_cast<double>(a.rows()) : static_cast<double>(a.cols());
  return scale(sum(a, axis), 1.0 / n);
}

Value variance(const Value& a, int axis) {
  if (axis != 0 && axis != 1) throw ValidationError("variance: axis must be 0 or 1");
  Tape& t = *a.tape();
  auto ia = a.index();
  const Matrix& x = a.data();
  if (axis == 0) {
    double n = static_cast<double>(x.rows());
    Matrix centered = x.rowwise() - x.colwise().mean();
    Matrix out = centered.array().square().colwise().sum().matrix() / n;
    return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
      // d var_c / d x_ic = 2 (x_ic - mu_c) / n; mean-shift terms cancel
      Matrix contrib = (2.0 / n) * centered;
      contrib.array().rowwise() *= g.row(0).array();
      tape.accumulate(ia, contrib);
    });
  }
  double n = static_cast<double>(x.cols());
  Matrix centered = x.colwise() - x.rowwise().mean();
  Matrix out = centered.array().square().rowwise().sum().matrix() / n;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix contrib = (2.0 / n) * centered;
    contrib.array().colwise() *= g.col(0).array();
    tape.accumulate(ia, contrib);
  });
}

Value concat(const Value& a, const Value& b, int axis) {
  require_same_tape(a, b, "concat");
  const Matrix& ma = a.data();
  const Matrix& mb = b.data();
  Tape& t = *a.tape();
  bool rg = a.requires_grad() || b.requires_grad();
  auto ia = a.index(), ib = b.index();
  if (axis == 0) {
    if (ma.cols() != mb.cols()) {
      throw ShapeError("concat rows: " + shape_str(ma) + " vs " + shape_str(mb));
    }
    Matrix out(ma.rows() + mb.rows(), ma.cols());
    out << ma, mb;
    auto rows_a = ma.rows(), rows_b = mb.rows();
    return t.record(std::move(out), rg, [=](Tape& tape, const Matrix& g) {
      tape.accumulate(ia, g.topRows(rows_a));
      tape.accumulate(ib, g.bottomRows(rows_b));
    });
  }
  if (axis == 1) {
    if (ma.rows() != mb.rows()) {
      throw ShapeError("concat cols: " + shape_str(ma) + " vs " + shape_str(mb));
    }
    Matrix out(ma.rows(), ma.cols() + mb.cols());
    out << ma, mb;
    auto cols_a = ma.cols(), cols_b = mb.cols();
    return t.record(std::move(out), rg, [=](Tape& tape, const Matrix& g) {
      tape.accumulate(ia, g.leftCols(cols_a));
      tape.accumulate(ib, g.rightCols(cols_b));
    });
  }
  throw ValidationError("concat: axis must be 0 or 1");
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  Tape& t = *parts.front().tape();
  Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const Value& p : parts) {
    require_same_tape(parts.front(), p, "concat_rows");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + std::to_string(p.cols()) + " vs " +
                       std::to_string(cols));
    }
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> offsets, sizes;
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    out.middleRows(at, p.rows()) = p.data();
    idx.push_back(p.index());
    offsets.push_back(at);
    sizes.push_back(p.rows());
    at += p.rows();
  }
  return t.record(std::move(out), rg, [=](Tape& tape, const Matrix& g) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      tape.accumulate(idx[i], g.middleRows(offsets[i], sizes[i]));
    }
  });
}

Value slice_rows(const Value& a, const std::vector<int>& indices) {
  Tape& t = *a.tape();
  const Matrix& x = a.data();
  Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int r = indices[i];
    if (r < 0 || r >= x.rows()) {
      throw IndexError("slice_rows: row " + std::to_string(r) + " out of range [0, " +
                       std::to_string(x.rows()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(r);
  }
  auto ia = a.index();
  auto rows = x.rows(), cols = x.cols();
  std::vector<int> idx = indices;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix acc = Matrix::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      acc.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    tape.accumulate(ia, acc);
  });
}

Value slice_rows(const Value& a, int begin, int count) {
  const Matrix& x = a.data();
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     std::to_string(x.rows()) + " rows");
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  auto rows = x.rows(), cols = x.cols();
  return t.record(x.middleRows(begin, count), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) {
                    Matrix acc = Matrix::Zero(rows, cols);
                    acc.middleRows(begin, count) = g;
                    tape.accumulate(ia, acc);
                  });
}

Value frobenius_sq(const Value& a) {
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix x = a.data();
  return t.record(Matrix::Constant(1, 1, x.squaredNorm()), a.requires_grad(),
                  [=](Tape& tape, const Matrix& g) { tape.accumulate(ia, 2.0 * g(0, 0) * x); });
}

Value segmented_softmax(const Value& logits, const std::vector<int>& segment_ids) {
  const Matrix& x = logits.data();
  if (x.cols() != 1) {
    throw ShapeError("segmented_softmax: logits must be Nx1, got " + shape_str(x));
  }
  check_sorted_segments(segment_ids, x.rows(), "segmented_softmax");
  Matrix out(x.rows(), 1);
  Eigen::Index start = 0;
  while (start < x.rows()) {
    Eigen::Index stop = start;
    while (stop < x.rows() && segment_ids[stop] == segment_ids[start]) ++stop;
    double m = x.block(start, 0, stop - start, 1).maxCoeff();
    Eigen::ArrayXd e = (x.block(start, 0, stop - start, 1).array() - m).exp();
    out.block(start, 0, stop - start, 1) = (e / e.sum()).matrix();
    start = stop;
  }
  flush_subnormals(out);
  Tape& t = *logits.tape();
  auto ia = logits.index();
  Matrix y = out;
  std::vector<int> seg = segment_ids;
  return t.record(std::move(out), logits.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx(y.rows(), 1);
    Eigen::Index s = 0;
    while (s < y.rows()) {
      Eigen::Index e = s;
      while (e < y.rows() && seg[e] == seg[s]) ++e;
      auto yseg = y.block(s, 0, e - s, 1).array();
      auto gseg = g.block(s, 0, e - s, 1).array();
      double dot = (yseg * gseg).sum();
      gx.block(s, 0, e - s, 1) = (yseg * (gseg - dot)).matrix();
      s = e;
    }
    tape.accumulate(ia, gx);
  });
}

Value segment_sum(const Value& a, const std::vector<int>& segment_ids, int num_segments) {
  const Matrix& x = a.data();
  check_sorted_segments(segment_ids, x.rows(), "segment_sum");
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (segment_ids[i] >= num_segments) throw ValidationError("segment_sum: id out of range");
    out.row(segment_ids[i]) += x.row(i);
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  auto rows = x.rows();
  std::vector<int> seg = segment_ids;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx(rows, g.cols());
    for (Eigen::Index i = 0; i < rows; ++i) gx.row(i) = g.row(seg[i]);
    tape.accumulate(ia, gx);
  });
}

Value segment_mean(const Value& a, const std::vector<int>& segment_ids, int num_segments) {
  const Matrix& x = a.data();
  check_sorted_segments(segment_ids, x.rows(), "segment_mean");
  std::vector<double> counts(static_cast<std::size_t>(num_segments), 0.0);
  for (int id : segment_ids) {
    if (id >= num_segments) throw ValidationError("segment_mean: id out of range");
    counts[static_cast<std::size_t>(id)] += 1.0;
  }
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(segment_ids[i]) += x.row(i);
  for (int s = 0; s < num_segments; ++s) {
    double c = counts[static_cast<std::size_t>(s)];
    if (c > 0.0) out.row(s) /= c;
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  auto rows = x.rows();
  std::vector<int> seg = segment_ids;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx(rows, g.cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
      gx.row(i) = g.row(seg[i]) / counts[static_cast<std::size_t>(seg[i])];
    }
    tape.accumulate(ia, gx);
  });
}

Value segment_max(const Value& a, const std::vector<int>& segment_ids, int num_segments) {
  const Matrix& x = a.data();
  check_sorted_segments(segment_ids, x.rows(), "segment_max");
  Matrix out = Matrix::Constant(num_segments, x.cols(), -std::numeric_limits<double>::infinity());
  // first row attaining the per-segment maximum takes the whole gradient
  std::vector<std::vector<Eigen::Index>> arg(
      static_cast<std::size_t>(num_segments),
      std::vector<Eigen::Index>(static_cast<std::size_t>(x.cols()), -1));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int s = segment_ids[i];
    if (s >= num_segments) throw ValidationError("segment_max: id out of range");
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (x(i, c) > out(s, c)) {
        out(s, c) = x(i, c);
        arg[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] = i;
      }
    }
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  auto rows = x.rows(), cols = x.cols();
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx = Matrix::Zero(rows, cols);
    for (int s = 0; s < num_segments; ++s) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        Eigen::Index i = arg[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        if (i >= 0) gx(i, c) += g(s, c);
      }
    }
    tape.accumulate(ia, gx);
  });
}

Value neighbor_sum(const Value& a, const std::vector<std::vector<int>>& neighbors) {
  const Matrix& x = a.data();
  if (static_cast<Eigen::Index>(neighbors.size()) != x.rows()) {
    throw ShapeError("neighbor_sum: list size " + std::to_string(neighbors.size()) +
                     " != rows " + std::to_string(x.rows()));
  }
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int j : neighbors[static_cast<std::size_t>(i)]) {
      if (j < 0 || j >= x.rows()) throw IndexError("neighbor_sum: neighbor index out of range");
      out.row(i) += x.row(j);
    }
  }
  Tape& t = *a.tape();
  auto ia = a.index();
  auto rows = x.rows(), cols = x.cols();
  std::vector<std::vector<int>> nbr = neighbors;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (int j : nbr[static_cast<std::size_t>(i)]) gx.row(j) += g.row(i);
    }
    tape.accumulate(ia, gx);
  });
}

Value row_norms(const Value& a, double floor) {
  if (floor < 0.0) throw ValidationError("row_norms: negative floor");
  const Matrix& x = a.data();
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, 0) = std::max(x.row(i).norm(), floor);
  Tape& t = *a.tape();
  auto ia = a.index();
  Matrix xc = x;
  Matrix norms = out;
  return t.record(std::move(out), a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    Matrix gx = Matrix::Zero(xc.rows(), xc.cols());
    for (Eigen::Index i = 0; i < xc.rows(); ++i) {
      if (xc.row(i).norm() > floor) {
        gx.row(i) = (g(i, 0) / norms(i, 0)) * xc.row(i);
      }
    }
    tape.accumulate(ia, gx);
  });
}

Value column_std(const Value& a, double floor) {
  if (floor < 0.0) throw ValidationError("column_std: negative floor");
  const Matrix& x = a.data();
  const double n = static_cast<double>(x.rows());
  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix raw = (centered.array().square().colwise().sum() / n).sqrt().matrix();
  Matrix out = raw.cwiseMax(floor);
  Tape& t = *a.tape();
  auto ia = a.index();
  return t.record(out, a.requires_grad(), [=](Tape& tape, const Matrix& g) {
    // d sigma_c / d x_ic = (x_ic - mu_c) / (n sigma_c); zero where floored
    Matrix gx = Matrix::Zero(centered.rows(), centered.cols());
    for (Eigen::Index c = 0; c < centered.cols(); ++c) {
      if (raw(0, c) > floor) {
        gx.col(c) = (g(0, c) / (n * raw(0, c))) * centered.col(c);
      }
    }
    tape.accumulate(ia, gx);
  });
}

Value cosine_similarity_matrix(const Value& h) {
  Value norms = row_norms(h, kNormFloor);
  Value normalized = div(h, norms);
  return matmul(normalized, transpose(normalized));
}

// ---------------------------------------------------------------------------
// Rng

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double Rng::uniform() {
  // 53-bit draw shifted by half a step: strictly inside (0,1)
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::gaussian(double mean, double stddev) {
  if (stddev < 0.0) throw DomainError("gaussian: negative stddev");
  double u1 = uniform();
  double u2 = uniform();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  return mean + stddev * z;
}

Matrix Rng::uniform_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform();
  }
  return m;
}

Matrix Rng::gaussian_matrix(double mean, double stddev, Eigen::Index rows, Eigen::Index cols) {
  if (stddev < 0.0) throw DomainError("gaussian_matrix: negative stddev");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gaussian(mean, stddev);
  }
  return m;
}

Matrix Rng::standard_gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
  return gaussian_matrix(0.0, 1.0, rows, cols);
}

Rng Rng::substream(std::uint64_t salt) const {
  return Rng(splitmix64(seed_ ^ splitmix64(salt)));
}

void Rng::shuffle(std::vector<int>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(engine_() % i);
    std::swap(items[i - 1], items[j]);
  }
}

Value uniform(Tape& tape, Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  return tape.leaf(rng.uniform_matrix(rows, cols), false);
}

Value gaussian(Tape& tape, Rng& rng, double mean, double stddev, Eigen::Index rows,
               Eigen::Index cols) {
  return tape.leaf(rng.gaussian_matrix(mean, stddev, rows, cols), false);
}

}  // namespace scgib

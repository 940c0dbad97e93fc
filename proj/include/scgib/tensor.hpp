#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "scgib/errors.hpp"

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tape owns the computation graph of one forward pass; Value is a cheap
// handle into it. Ops are free functions that record a node together with
// its local gradient rule. backward() visits nodes in exact reverse
// creation order (creation order is topological by construction).

namespace scgib {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a tape node. Valid while the owning tape lives and has not
// been cleared.
class Value {
 public:
  Value() = default;

  const Matrix& data() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return data().rows(); }
  Eigen::Index cols() const { return data().cols(); }

  // Value of a 1x1 node; ShapeError otherwise.
  double scalar() const;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records an input node. Leaves with requires_grad accumulate into
  // grad() during backward.
  Value leaf(Matrix data, bool requires_grad = false);

  // Reverse pass from a scalar root: zeroes all gradients, seeds the root
  // with 1 and visits every recorded op in reverse order. Repeated calls
  // on the same tape are bitwise reproducible.
  void backward(const Value& root);

  std::size_t size() const { return nodes_.size(); }

  // Drops all nodes; outstanding Value handles become invalid.
  void clear() { nodes_.clear(); }

  // --- low-level node interface used by the op free functions ---

  using PullFn = std::function<void(Tape&, const Matrix& upstream)>;

  Value record(Matrix value, bool requires_grad, PullFn pull);
  const Matrix& value_of(std::size_t i) const { return nodes_[i].value; }
  void accumulate(std::size_t i, const Matrix& contribution);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    PullFn pull;  // empty for leaves and grad-free nodes
  };
  friend class Value;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Core ops. Elementwise binaries broadcast a 1x1 scalar, a 1xC row vector or
// an Rx1 column vector against an RxC operand (either side); anything else
// with mismatched shapes raises ShapeError.

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value matmul(const Value& a, const Value& b);
Value scale(const Value& a, double factor);
Value add_constant(const Value& a, double offset);
Value neg(const Value& a);
Value relu(const Value& a);
Value sigmoid(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);  // DomainError on non-positive input
Value sqrt(const Value& a); // DomainError on negative input
Value clamp(const Value& a, double lo, double hi);
Value transpose(const Value& a);

// axis 0 reduces over rows (result 1xC), axis 1 over columns (result Rx1).
Value sum(const Value& a);
Value sum(const Value& a, int axis);
Value mean(const Value& a);
Value mean(const Value& a, int axis);
// Biased estimator (divide by the number of reduced entries).
Value variance(const Value& a, int axis);

Value concat(const Value& a, const Value& b, int axis);
Value concat_rows(const std::vector<Value>& parts);
Value slice_rows(const Value& a, const std::vector<int>& indices);
Value slice_rows(const Value& a, int begin, int count);
Value frobenius_sq(const Value& a);

// Per-segment softmax of an Nx1 logit column; segment ids must be sorted
// non-decreasing and one per row.
Value segmented_softmax(const Value& logits, const std::vector<int>& segment_ids);

// Per-segment reductions over rows; segment ids sorted non-decreasing.
Value segment_sum(const Value& a, const std::vector<int>& segment_ids, int num_segments);
Value segment_mean(const Value& a, const std::vector<int>& segment_ids, int num_segments);
Value segment_max(const Value& a, const std::vector<int>& segment_ids, int num_segments);

// out.row(i) = sum of a.row(j) over j in neighbors[i]. The neighbor lists
// are constant structure (no gradient), entries must index rows of a.
Value neighbor_sum(const Value& a, const std::vector<std::vector<int>>& neighbors);

// Row L2 norms floored at `floor`: out_i = max(||a.row(i)||, floor), Rx1.
// Rows at or below the floor get zero gradient.
Value row_norms(const Value& a, double floor);

// Per-column biased standard deviation floored at `floor`: 1xC. Columns at
// or below the floor get zero gradient.
Value column_std(const Value& a, double floor);

// Cosine similarity of all row pairs, with row norms floored at 1e-12.
// Symmetric, unit diagonal for non-degenerate rows.
Value cosine_similarity_matrix(const Value& h);

inline constexpr double kNormFloor = 1e-12;

// ---------------------------------------------------------------------------
// Seedable deterministic random source. Fixed generator (mt19937_64) and
// fixed transforms so a seed pins the whole draw sequence:
//  - uniform: 53-bit mantissa draw shifted to the open interval (0,1)
//  - gaussian: Box-Muller, cosine branch, two uniforms per draw

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double uniform();
  double gaussian(double mean, double stddev);  // DomainError if stddev < 0

  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols);
  Matrix gaussian_matrix(double mean, double stddev, Eigen::Index rows, Eigen::Index cols);
  Matrix standard_gaussian_matrix(Eigen::Index rows, Eigen::Index cols);

  // Independent generator derived from (seed, salt); deterministic.
  Rng substream(std::uint64_t salt) const;

  std::uint64_t seed() const { return seed_; }

  // Fisher-Yates shuffle driven by this stream.
  void shuffle(std::vector<int>& items);

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Tape-facing draws; results never require grad.
Value uniform(Tape& tape, Rng& rng, Eigen::Index rows, Eigen::Index cols);
Value gaussian(Tape& tape, Rng& rng, double mean, double stddev, Eigen::Index rows,
               Eigen::Index cols);

}  // namespace scgib

#pragma once

#include <optional>

#include "scgib/encoder.hpp"
#include "scgib/tensor.hpp"

// Loss terms: adjacency reconstruction, graph-core contrastive agreement,
// attribute reconstruction for domain adaptation, the optional candidate
// alignment term, and their weighted combination.

namespace scgib {

struct LossReport {
  double rec = 0.0;
  double mi = 0.0;
  double con = 0.0;
  std::optional<double> att;
  std::optional<double> zeta_term;
  double total = 0.0;
  double beta = 1.0;
  double zeta = 0.0;
};

// (1/N^2) * squared Frobenius distance between the adjacency and the cosine
// similarity of fused rows. Diagonal included: a zero-diagonal adjacency
// against unit self-similarity keeps this bounded away from zero.
Value reconstruction_loss(const Value& fused, const Matrix& adjacency);

// Mean over graphs of log(sum_{j != i} exp s_ij) - s_ii with s = cosine
// similarity between core and graph summaries. The positive pair is absent
// from the denominator, so the loss may be negative.
Value contrastive_loss(const Value& core_vectors, const Value& graph_vectors);

// Mean Euclidean (not squared) distance between rows of x and the
// adaptation head applied to fused.
Value attribute_loss(const Value& x, const Value& fused, const BoundMlp& adaptation_mlp);

// Mean over graphs of the average dot product between each node's candidate
// summary and its graph summary.
Value subgraph_mi_term(const Value& candidates, const Value& graph_vectors,
                       const std::vector<int>& segment_ids, int num_graphs);

struct LossParts {
  Value con, rec, mi;
  std::optional<Value> zeta_term;
  std::optional<Value> att;
};

// con + rec + beta * mi (+ zeta * zeta_term when present and zeta != 0), in
// that association order; the numeric report reproduces it bitwise.
Value combine_losses(const LossParts& parts, double beta, double zeta);

LossReport total_loss(const LossParts& parts, double beta, double zeta);

}  // namespace scgib

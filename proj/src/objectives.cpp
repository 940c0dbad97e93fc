#include "scgib/objectives.hpp"

#include <cmath>
#include <string>

namespace scgib {

Value reconstruction_loss(const Value& fused, const Matrix& adjacency) {
  if (adjacency.rows() != fused.rows() || adjacency.cols() != fused.rows()) {
    throw ShapeError("reconstruction_loss: adjacency must be NxN for N fused rows");
  }
  const double n = static_cast<double>(fused.rows());
  Value predicted = cosine_similarity_matrix(fused);
  Value target = fused.tape()->leaf(adjacency, false);
  return scale(frobenius_sq(sub(target, predicted)), 1.0 / (n * n));
}

Value contrastive_loss(const Value& core_vectors, const Value& graph_vectors) {
  const Eigen::Index b = core_vectors.rows();
  if (b < 2) {
    throw BatchTooSmallError("contrastive_loss: need at least 2 graphs, got " +
                             std::to_string(b));
  }
  if (graph_vectors.rows() != b || graph_vectors.cols() != core_vectors.cols()) {
    throw ShapeError("contrastive_loss: summary shapes differ");
  }
  Value nc = div(core_vectors, row_norms(core_vectors, kNormFloor));
  Value ng = div(graph_vectors, row_norms(graph_vectors, kNormFloor));
  Value sim = matmul(nc, transpose(ng));  // s_ij, bounded by |cosine| <= 1

  Tape& tape = *core_vectors.tape();
  Value eye = tape.leaf(Matrix::Identity(b, b), false);
  Value off = tape.leaf(Matrix::Ones(b, b) - Matrix::Identity(b, b), false);

  Value positives = sum(mul(sim, eye), 1);                 // B x 1 of s_ii
  Value denominators = sum(mul(exp(sim), off), 1);         // B x 1, strictly positive
  return mean(sub(log(denominators), positives));
}

Value attribute_loss(const Value& x, const Value& fused, const BoundMlp& adaptation_mlp) {
  Value reconstructed = mlp_forward(adaptation_mlp, fused);
  if (reconstructed.rows() != x.rows() || reconstructed.cols() != x.cols()) {
    throw ShapeError("attribute_loss: reconstruction shape " +
                     std::to_string(reconstructed.rows()) + "x" +
                     std::to_string(reconstructed.cols()) + " does not match features");
  }
  return mean(row_norms(sub(x, reconstructed), 0.0));
}

Value subgraph_mi_term(const Value& candidates, const Value& graph_vectors,
                       const std::vector<int>& segment_ids, int num_graphs) {
  Value per_node_summary = slice_rows(graph_vectors, segment_ids);
  Value dots = sum(mul(candidates, per_node_summary), 1);  // N x 1
  Value per_graph = segment_mean(dots, segment_ids, num_graphs);
  return mean(per_graph);
}

Value combine_losses(const LossParts& parts, double beta, double zeta) {
  Value total = add(add(parts.con, parts.rec), scale(parts.mi, beta));
  if (parts.zeta_term.has_value() && zeta != 0.0) {
    total = add(total, scale(*parts.zeta_term, zeta));
  }
  return total;
}

LossReport total_loss(const LossParts& parts, double beta, double zeta) {
  LossReport report;
  report.beta = beta;
  report.zeta = zeta;
  report.con = parts.con.scalar();
  report.rec = parts.rec.scalar();
  report.mi = parts.mi.scalar();
  if (parts.att.has_value()) report.att = parts.att->scalar();
  if (parts.zeta_term.has_value()) report.zeta_term = parts.zeta_term->scalar();

  auto require_finite = [](double v, const char* name) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("total_loss: non-finite ") + name);
    }
  };
  require_finite(report.con, "con");
  require_finite(report.rec, "rec");
  require_finite(report.mi, "mi");
  if (report.att) require_finite(*report.att, "att");
  if (report.zeta_term) require_finite(*report.zeta_term, "zeta_term");

  // same association order as combine_losses, so the two agree bitwise
  report.total = (report.con + report.rec) + beta * report.mi;
  if (report.zeta_term.has_value() && zeta != 0.0) {
    report.total = report.total + zeta * *report.zeta_term;
  }
  return report;
}

}  // namespace scgib

#include "scgib/bottleneck.hpp"

#include <cmath>
#include <limits>

namespace scgib {

namespace {

// log(x / (1 - x)) for x strictly inside (0, 1)
Value logit(const Value& x) { return log(div(x, add_constant(neg(x), 1.0))); }

}  // namespace

Value keep_probabilities(const BoundMlp& compression_mlp, const Value& h) {
  Value raw = sigmoid(mlp_forward(compression_mlp, h));
  return clamp(raw, kProbFloor, 1.0 - kProbFloor);
}

NoiseStatistics noise_statistics(const Value& h) {
  return NoiseStatistics{mean(h, 0), column_std(h, kSigmaFloor)};
}

Value gumbel_sigmoid_given(const Value& keep_prob, const Value& q, double tau) {
  if (tau <= 0.0) throw DomainError("gumbel_sigmoid: tau must be positive");
  Value fused_logit = add(logit(keep_prob), logit(q));
  return sigmoid(scale(fused_logit, 1.0 / tau));
}

Value gumbel_sigmoid(const Value& keep_prob, double tau, Tape& tape, Rng& rng) {
  Value q = uniform(tape, rng, keep_prob.rows(), 1);
  return gumbel_sigmoid_given(keep_prob, q, tau);
}

CompressionOutcome compress(const BoundMlp& compression_mlp, const Value& h, double tau,
                            Tape& tape, Rng& rng, bool deterministic) {
  CompressionOutcome out;
  out.keep_prob = keep_probabilities(compression_mlp, h);
  NoiseStatistics stats = noise_statistics(h);
  out.noise_mean = stats.mean;
  out.noise_std = stats.std;

  if (deterministic) {
    out.gates = out.keep_prob;
    // noise at its expectation: every row is the mean
    Value zeros = tape.leaf(Matrix::Zero(h.rows(), h.cols()), false);
    out.noise_sample = add(zeros, stats.mean);
  } else {
    out.gates = gumbel_sigmoid(out.keep_prob, tau, tape, rng);
    // reparameterized draw: mean + std * xi keeps the statistics on the tape
    Value xi = tape.leaf(rng.standard_gaussian_matrix(h.rows(), h.cols()), false);
    out.noise_sample = add(stats.mean, mul(xi, stats.std));
  }

  Value keep_part = mul(out.gates, h);
  Value noise_part = mul(add_constant(neg(out.gates), 1.0), out.noise_sample);
  out.core_embeddings = add(keep_part, noise_part);
  return out;
}

Value mi_upper_bound(const Value& h, const Value& gates) {
  if (gates.cols() != 1 || gates.rows() != h.rows()) {
    throw ShapeError("mi_upper_bound: gates must be Nx1 matching h");
  }
  const double n = static_cast<double>(h.rows());
  NoiseStatistics stats = noise_statistics(h);

  Value residual = add_constant(neg(gates), 1.0);  // 1 - lambda
  Value gate_mass = clamp(sum(mul(residual, residual)),
                          kGateMassFloor, std::numeric_limits<double>::max());

  Value centered = sub(h, stats.mean);
  Value normalized = div(centered, stats.std);
  Value gated_sum = sum(mul(normalized, gates), 0);  // 1 x d
  Value q_sq = mul(gated_sum, gated_sum);

  Value constant_part = add(scale(log(gate_mass), -0.5), scale(gate_mass, 1.0 / (2.0 * n)));
  Value per_dim = add(constant_part, scale(q_sq, 1.0 / (2.0 * n)));
  return mean(per_dim);
}

}  // namespace scgib

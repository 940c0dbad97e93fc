#pragma once

#include "scgib/encoder.hpp"
#include "scgib/tensor.hpp"

// Graph compression: learned keep-probabilities, Gumbel-sigmoid gates,
// noise injection toward the embedding statistics, and the variational
// upper bound on the mutual information between graph and core.

namespace scgib {

inline constexpr double kProbFloor = 1e-6;
inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kGateMassFloor = 1e-10;  // floor for sum of (1-gate)^2

struct CompressionOutcome {
  Value keep_prob;        // N x 1, inside [kProbFloor, 1 - kProbFloor]
  Value gates;            // N x 1 lambda in [0, 1]
  Value noise_mean;       // 1 x d
  Value noise_std;        // 1 x d, floored at kSigmaFloor
  Value noise_sample;     // N x d
  Value core_embeddings;  // N x d, lambda h + (1 - lambda) noise
};

// Sigmoid head over node embeddings, clamped away from 0 and 1.
Value keep_probabilities(const BoundMlp& compression_mlp, const Value& h);

// Per-dimension mean and floored biased std over the graph's nodes.
struct NoiseStatistics {
  Value mean;  // 1 x d
  Value std;   // 1 x d
};
NoiseStatistics noise_statistics(const Value& h);

// Binary-concrete relaxation with explicit logistic noise; q must be
// strictly inside (0,1). Differentiable in p, not in q.
Value gumbel_sigmoid_given(const Value& keep_prob, const Value& q, double tau);

// Same, drawing q from rng as a non-grad leaf.
Value gumbel_sigmoid(const Value& keep_prob, double tau, Tape& tape, Rng& rng);

// Full compression. deterministic = true replaces sampling with its
// expectation: gates = p and noise = mean (used at evaluation time).
CompressionOutcome compress(const BoundMlp& compression_mlp, const Value& h, double tau,
                            Tape& tape, Rng& rng, bool deterministic = false);

// Mean over feature dimensions of the per-dimension variational bound:
// -log(P)/2 + P/(2N) + Q_dd^2/(2N), with P = sum (1-lambda_j)^2 (floored)
// and Q_dd the std-normalized gated deviation sum.
Value mi_upper_bound(const Value& h, const Value& gates);

}  // namespace scgib

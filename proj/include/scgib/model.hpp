#pragma once

#include <optional>
#include <vector>

#include "scgib/bottleneck.hpp"
#include "scgib/encoder.hpp"
#include "scgib/graph.hpp"
#include "scgib/objectives.hpp"

// Full forward pass: encode nodes, compress into a noisy core per graph,
// encode every ego network as a candidate subgraph, fuse core and attended
// candidates, and evaluate the training losses on the fused embeddings.

namespace scgib {

// Per-graph preprocessing that does not depend on parameters; cached across
// epochs by the trainer.
struct PreparedGraph {
  MolecularGraph graph;
  std::vector<std::vector<int>> neighbors;
  EgoStack ego_stack;
};

PreparedGraph prepare_graph(const MolecularGraph& graph, int hop_radius);

struct PreparedBatch {
  Matrix features;                          // total_nodes x d_in
  std::vector<Matrix> adjacencies;          // one per graph
  std::vector<std::vector<int>> neighbors;  // block structure
  std::vector<int> segment_ids;             // node -> graph
  std::vector<int> offsets;                 // size B + 1
  EgoStack ego_stack;                       // all ego networks, batched
  int num_graphs = 0;
  int total_nodes = 0;
  int input_dim = 0;
};

PreparedBatch assemble_batch(const std::vector<const PreparedGraph*>& graphs);

struct ForwardOptions {
  double tau = 1.0;
  PoolMode pool = PoolMode::kSum;
  bool deterministic = false;        // gates = keep_prob, noise = its mean
  bool compute_attribute = false;    // adds the attribute reconstruction loss
};

struct ForwardOutcome {
  Value node_embeddings;   // H, total_nodes x d
  Value keep_prob;         // total_nodes x 1
  Value gates;             // total_nodes x 1
  Value core;              // Z, total_nodes x d
  Value candidates;        // H_S, total_nodes x d
  Value alpha;             // total_nodes x 1
  Value fused;             // total_nodes x 2d
  LossParts losses;
  bool contrastive_skipped = false;  // single-graph batch
};

// Noise and gate sampling consume `rng` graph by graph in batch order, so a
// fixed seed reproduces the pass bitwise.
ForwardOutcome model_forward(Tape& tape, const BoundEncoderParams& params,
                             const PreparedBatch& batch, const ForwardOptions& options,
                             Rng& rng);

}  // namespace scgib

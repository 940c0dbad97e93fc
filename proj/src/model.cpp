#include "scgib/model.hpp"

#include "scgib/errors.hpp"

namespace scgib {

PreparedGraph prepare_graph(const MolecularGraph& graph, int hop_radius) {
  if (hop_radius < 0) throw DomainError("hop_radius must be >= 0");
  PreparedGraph prepared;
  prepared.graph = graph;
  prepared.neighbors = neighbor_lists(graph);
  prepared.ego_stack = build_ego_stack(ego_network_set(graph, hop_radius));
  return prepared;
}

PreparedBatch assemble_batch(const std::vector<const PreparedGraph*>& graphs) {
  if (graphs.empty()) throw EmptyBatchError("batch has no graphs");
  PreparedBatch batch;
  batch.num_graphs = static_cast<int>(graphs.size());
  batch.input_dim = graphs.front()->graph.feature_dim();
  batch.offsets.push_back(0);
  for (const PreparedGraph* g : graphs) {
    if (g->graph.feature_dim() != batch.input_dim) {
      throw ShapeError("graphs in a batch must share the feature dimension");
    }
    batch.offsets.push_back(batch.offsets.back() + g->graph.num_nodes());
  }
  batch.total_nodes = batch.offsets.back();
  batch.features.resize(batch.total_nodes, batch.input_dim);
  batch.neighbors.resize(batch.total_nodes);
  batch.segment_ids.resize(batch.total_nodes);
  for (int b = 0; b < batch.num_graphs; ++b) {
    const PreparedGraph& g = *graphs[b];
    const int offset = batch.offsets[b];
    const int n = g.graph.num_nodes();
    batch.features.middleRows(offset, n) = g.graph.node_features;
    batch.adjacencies.push_back(g.graph.adjacency);
    for (int i = 0; i < n; ++i) {
      batch.segment_ids[offset + i] = b;
      batch.neighbors[offset + i].reserve(g.neighbors[i].size());
      for (int j : g.neighbors[i]) batch.neighbors[offset + i].push_back(offset + j);
    }
    append_ego_stack(batch.ego_stack, g.ego_stack, offset);
  }
  return batch;
}

ForwardOutcome model_forward(Tape& tape, const BoundEncoderParams& params,
                             const PreparedBatch& batch, const ForwardOptions& options,
                             Rng& rng) {
  ForwardOutcome outcome;
  const Value x = tape.leaf(batch.features);
  outcome.node_embeddings = encode_graph(params.graph_encoder, x, batch.neighbors);

  // Compression and the information bound use per-graph statistics, so each
  // graph is compressed on its own slice; rng advances in graph order.
  std::vector<Value> keep_parts, gate_parts, core_parts, mi_parts;
  for (int b = 0; b < batch.num_graphs; ++b) {
    const int begin = batch.offsets[b];
    const int count = batch.offsets[b + 1] - begin;
    const Value h_b = slice_rows(outcome.node_embeddings, begin, count);
    CompressionOutcome compressed = compress(params.compression_mlp, h_b, options.tau, tape, rng,
                                             options.deterministic);
    keep_parts.push_back(compressed.keep_prob);
    gate_parts.push_back(compressed.gates);
    core_parts.push_back(compressed.core_embeddings);
    mi_parts.push_back(mi_upper_bound(h_b, compressed.gates));
  }
  outcome.keep_prob = concat_rows(keep_parts);
  outcome.gates = concat_rows(gate_parts);
  outcome.core = concat_rows(core_parts);

  outcome.candidates = encode_subgraphs(params.subgraph_encoder, x, batch.ego_stack, options.pool);
  AttentionOutcome attention = attention_interaction(outcome.core, outcome.candidates,
                                                     params.attention_weight, batch.segment_ids,
                                                     batch.num_graphs);
  outcome.alpha = attention.alpha;
  outcome.fused = attention.fused;

  std::vector<Value> rec_parts;
  for (int b = 0; b < batch.num_graphs; ++b) {
    const int begin = batch.offsets[b];
    const int count = batch.offsets[b + 1] - begin;
    rec_parts.push_back(reconstruction_loss(slice_rows(outcome.fused, begin, count),
                                            batch.adjacencies[b]));
  }
  outcome.losses.rec = mean(concat_rows(rec_parts));
  outcome.losses.mi = mean(concat_rows(mi_parts));

  const Value core_summary = pool_segments(outcome.core, batch.segment_ids, batch.num_graphs,
                                           options.pool);
  const Value graph_summary = pool_segments(outcome.node_embeddings, batch.segment_ids,
                                            batch.num_graphs, options.pool);
  if (batch.num_graphs >= 2) {
    outcome.losses.con = contrastive_loss(core_summary, graph_summary);
  } else {
    outcome.losses.con = tape.leaf(Matrix::Zero(1, 1));
    outcome.contrastive_skipped = true;
  }
  outcome.losses.zeta_term = subgraph_mi_term(outcome.candidates, graph_summary,
                                              batch.segment_ids, batch.num_graphs);

  if (options.compute_attribute) {
    const Value predicted = mlp_forward(params.adaptation_mlp, outcome.fused);
    if (predicted.cols() != x.cols()) {
      throw ShapeError("adaptation head output width does not match the input features");
    }
    const Value distances = row_norms(sub(x, predicted), 0.0);
    outcome.losses.att = mean(segment_mean(distances, batch.segment_ids, batch.num_graphs));
  }
  return outcome;
}

}  // namespace scgib

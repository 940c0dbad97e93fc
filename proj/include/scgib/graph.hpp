#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scgib/tensor.hpp"

// Molecular graph ingestion, batching and k-hop ego network extraction.

namespace scgib {

struct MolecularGraph {
  std::string id;
  Matrix node_features;  // N x d_in
  Matrix adjacency;      // N x N symmetric binary, zero diagonal
  std::vector<std::pair<int, int>> edges;  // unordered pairs, stored with i < j
  std::vector<double> edge_orders;         // bond order per edge; 1 unless parsed otherwise
  std::optional<double> label;

  int num_nodes() const { return static_cast<int>(node_features.rows()); }
  int feature_dim() const { return static_cast<int>(node_features.cols()); }
};

// Neighbor lists derived from the adjacency matrix, ascending per node.
std::vector<std::vector<int>> neighbor_lists(const MolecularGraph& graph);

// Validates and assembles a graph from an edge list; adjacency is made
// symmetric, duplicate edges collapse.
MolecularGraph make_graph(std::string id, Matrix node_features,
                          const std::vector<std::pair<int, int>>& edges,
                          std::optional<double> label = std::nullopt,
                          std::vector<double> edge_orders = {});

// One JSON object per line: {"id": str, "x": N x d_in, "edges": [[i,j],...],
// "y": optional number}. Unknown keys are ignored.
MolecularGraph parse_graph_record(const std::string& text_line);

// Restricted SMILES reader. Atoms B,C,N,O,P,S,F,Cl,Br,I; branches "(...)";
// ring closures 1-9; bonds "-", "=", "#" (order kept as an edge feature,
// adjacency stays binary). Features are 10-wide one-hot atom types.
MolecularGraph parse_smiles_subset(const std::string& text);

// Index of an atom symbol in the one-hot layout, or -1 if unsupported.
int atom_type_index(const std::string& symbol);

struct EgoNetwork {
  int root = 0;                   // node index in the parent graph
  std::vector<int> members;       // sorted, includes root
  Matrix induced_adjacency;       // |members| x |members|
};

struct EgoNetworkSet {
  int hop_radius = 0;
  std::vector<EgoNetwork> networks;  // one per node, ordered by root index
};

// Nodes within k hops of root plus the edges among them.
EgoNetwork ego_network(const MolecularGraph& graph, int root, int k);

EgoNetworkSet ego_network_set(const MolecularGraph& graph, int k);

// Subgraph induced by `nodes` (sorted ascending); features and adjacency
// restricted, edges relabeled, label and id carried over.
MolecularGraph induced_subgraph(const MolecularGraph& graph, const std::vector<int>& nodes);

struct GraphBatch {
  std::vector<MolecularGraph> graphs;
  std::vector<int> node_offsets;  // B+1 prefix sums; node_offsets[b] = first row of graph b
  Matrix block_adjacency;         // block-diagonal, no cross-graph edges
  Matrix stacked_features;        // rows of all graphs concatenated

  int total_nodes() const { return node_offsets.empty() ? 0 : node_offsets.back(); }
  int size() const { return static_cast<int>(graphs.size()); }
};

GraphBatch make_batch(const std::vector<MolecularGraph>& graphs);

// File loaders; one record per line, blank lines skipped. Errors carry the
// 1-based line number.
std::vector<MolecularGraph> load_jsonl_graphs(const std::string& path);
// SMILES with an optional tab-separated numeric label per line.
std::vector<MolecularGraph> load_smiles_file(const std::string& path);

}  // namespace scgib

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scgib/graph.hpp"

// Synthetic benchmark corpus: random base graphs where half the instances
// carry a planted motif. Motif presence is the class label and the planted
// node set is the ground-truth explanation.

namespace scgib {

enum class MotifKind { kTriangle, kFourCycle, kStarThree };

MotifKind parse_motif(const std::string& name);  // "triangle" | "4-cycle" | "star-3"
std::string motif_name(MotifKind kind);

struct SynthGraph {
  MolecularGraph graph;
  std::vector<int> motif_nodes;  // empty on negatives
};

// Erdos-Renyi base (8 to 20 nodes, edge probability 0.08, one-hot degree
// features of width 10), alternating labels. Positives get the motif bridged
// to a random base node; negatives get a path of the same node count, so
// class only differs in wiring, not size.
std::vector<SynthGraph> generate_synthetic_corpus(int count, MotifKind kind, std::uint64_t seed);

// JSONL, one graph per line; motif nodes stored under "motif_nodes" (a key
// the plain graph loader ignores).
void write_synthetic_corpus(const std::vector<SynthGraph>& corpus, const std::string& path);
std::vector<SynthGraph> load_synthetic_corpus(const std::string& path);

}  // namespace scgib

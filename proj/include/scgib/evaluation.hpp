#pragma once

#include <map>
#include <string>
#include <vector>

#include "scgib/encoder.hpp"
#include "scgib/graph.hpp"
#include "scgib/trainer.hpp"

// Downstream evaluation of a trained model: graph embeddings, a linear
// probe, attention-based node explanations, fidelity of those explanations,
// and distributional distinguishability of the two classes.

namespace scgib {

enum class TaskKind { kClassification, kRegression };

struct SplitIndices {
  std::vector<int> train, valid, test;
};

// Seeded shuffle split with the given fractions (test takes the rest).
SplitIndices make_random_splits(int count, double train_fraction, double valid_fraction, Rng& rng);

struct LabeledDataset {
  std::vector<MolecularGraph> graphs;  // every graph must carry a label
  TaskKind task = TaskKind::kClassification;
  SplitIndices splits;
};

// Frozen trained model plus the forward settings evaluation needs.
struct EvalModel {
  EncoderParams params;
  int hop_radius = 2;
  PoolMode pool = PoolMode::kSum;
};

EvalModel eval_model(const Checkpoint& checkpoint);

// One row per graph: sum over nodes of the fused embedding (width 2d).
// Deterministic: gates collapse to keep probabilities and noise to its mean.
Matrix embed_graphs(const EvalModel& model, const std::vector<MolecularGraph>& graphs);

struct ProbeResult {
  Matrix weight;  // 2d x 1
  double bias = 0.0;
  std::map<std::string, double> metrics;  // accuracy/roc_auc/average_precision
                                          // or rmse/mae/baseline_rmse
};

// Affine head trained with Adam on the train split, scored on the test
// split. Classification labels must be 0/1; a single-class training split
// raises DegenerateSplitError.
ProbeResult fit_probe(const Matrix& embeddings, const LabeledDataset& dataset);

double probe_score(const ProbeResult& probe, const Matrix& embedding_row);
// Classification decision: score > 0.
int probe_predict_class(const ProbeResult& probe, const Matrix& embedding_row);

struct Explanation {
  std::string graph_id;
  std::vector<double> scores;  // attention weight per node
  std::vector<int> selected;   // top ceil(r*N) nodes, ties to the lower index
};

Explanation explain(const EvalModel& model, const MolecularGraph& graph, double ratio = 0.5);

struct FidelityReport {
  double fidelity_keep = 0.0;  // accuracy drop when keeping only selected nodes
  double fidelity_drop = 0.0;  // accuracy drop when removing them
};

// Classification only (UnsupportedTaskError otherwise), evaluated on the
// test split. Empty keep/drop sets fall back to the single highest/lowest
// scored node.
FidelityReport fidelity(const EvalModel& model, const ProbeResult& probe,
                        const LabeledDataset& dataset, double ratio = 0.5);

// Mean over embedding dimensions of the Jensen-Shannon divergence (natural
// log) between per-class histograms: 20 equal-width bins over the pooled
// range, add-1e-9 smoothing, renormalized. Requires exactly two classes
// with at least five samples each.
double jsd_distinguishability(const Matrix& embeddings, const std::vector<int>& labels);

}  // namespace scgib

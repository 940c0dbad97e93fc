#include "scgib/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "scgib/model.hpp"

namespace scgib {
namespace {

constexpr int kProbeEpochs = 1000;
constexpr double kProbeLearningRate = 0.05;
constexpr int kEmbedChunk = 64;
constexpr int kJsdBins = 20;
constexpr double kJsdSmoothing = 1e-9;

double sigmoid_scalar(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> split_labels(const LabeledDataset& dataset, const std::vector<int>& indices) {
  std::vector<double> labels;
  labels.reserve(indices.size());
  for (int i : indices) {
    const auto& label = dataset.graphs[i].label;
    if (!label) throw ValidationError("graph " + dataset.graphs[i].id + " has no label");
    labels.push_back(*label);
  }
  return labels;
}

void check_class_labels(const std::vector<double>& labels) {
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) {
      throw ValidationError("classification labels must be 0 or 1");
    }
  }
}

// Pairwise Mann-Whitney statistic; ties count one half.
double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  double pairs = 0.0, wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0.0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

double average_precision(const std::vector<double>& scores, const std::vector<double>& labels) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  double positives_seen = 0.0, total_positives = 0.0, sum = 0.0;
  for (double y : labels) total_positives += y;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1.0) {
      positives_seen += 1.0;
      sum += positives_seen / static_cast<double>(k + 1);
    }
  }
  return sum / total_positives;
}

}  // namespace

SplitIndices make_random_splits(int count, double train_fraction, double valid_fraction,
                                Rng& rng) {
  if (count < 1) throw DomainError("split needs at least one sample");
  if (train_fraction < 0.0 || valid_fraction < 0.0 || train_fraction + valid_fraction > 1.0) {
    throw DomainError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_train = static_cast<int>(std::lround(train_fraction * count));
  const int n_valid = static_cast<int>(std::lround(valid_fraction * count));
  SplitIndices splits;
  splits.train.assign(order.begin(), order.begin() + n_train);
  splits.valid.assign(order.begin() + n_train, order.begin() + std::min(count, n_train + n_valid));
  splits.test.assign(order.begin() + std::min(count, n_train + n_valid), order.end());
  return splits;
}

EvalModel eval_model(const Checkpoint& checkpoint) {
  EvalModel model;
  model.params = checkpoint.params;
  model.hop_radius = checkpoint.config.hop_radius;
  model.pool = parse_pool_mode(checkpoint.config.pool_mode);
  return model;
}

Matrix embed_graphs(const EvalModel& model, const std::vector<MolecularGraph>& graphs) {
  if (graphs.empty()) throw EmptyInputError("no graphs to embed");
  const int width = 2 * model.params.embed_dim();
  Matrix embeddings(static_cast<int>(graphs.size()), width);
  Rng unused(0);  // deterministic forward consumes no draws
  for (std::size_t begin = 0; begin < graphs.size(); begin += kEmbedChunk) {
    const std::size_t end = std::min(graphs.size(), begin + kEmbedChunk);
    std::vector<PreparedGraph> prepared;
    prepared.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      prepared.push_back(prepare_graph(graphs[i], model.hop_radius));
    }
    std::vector<const PreparedGraph*> members;
    members.reserve(prepared.size());
    for (const PreparedGraph& p : prepared) members.push_back(&p);
    Tape tape;
    BoundEncoderParams bound = bind_parameters(tape, model.params, false);
    PreparedBatch batch = assemble_batch(members);
    ForwardOptions options;
    options.pool = model.pool;
    options.deterministic = true;
    ForwardOutcome out = model_forward(tape, bound, batch, options, unused);
    // Graph readout is a plain sum over fused node rows.
    Value pooled = segment_sum(out.fused, batch.segment_ids, batch.num_graphs);
    embeddings.middleRows(static_cast<int>(begin), static_cast<int>(end - begin)) = pooled.data();
  }
  return embeddings;
}

ProbeResult fit_probe(const Matrix& embeddings, const LabeledDataset& dataset) {
  if (embeddings.rows() != static_cast<Eigen::Index>(dataset.graphs.size())) {
    throw ShapeError("embedding rows do not match the dataset");
  }
  const auto check_range = [&](const std::vector<int>& indices) {
    for (int i : indices) {
      if (i < 0 || i >= static_cast<int>(dataset.graphs.size())) {
        throw IndexError("split index " + std::to_string(i) + " out of range");
      }
    }
  };
  check_range(dataset.splits.train);
  check_range(dataset.splits.valid);
  check_range(dataset.splits.test);
  if (dataset.splits.train.empty()) throw DegenerateSplitError("training split is empty");
  if (dataset.splits.test.empty()) throw DegenerateSplitError("test split is empty");

  const std::vector<double> y_train = split_labels(dataset, dataset.splits.train);
  const std::vector<double> y_test = split_labels(dataset, dataset.splits.test);
  const bool classify = dataset.task == TaskKind::kClassification;
  if (classify) {
    check_class_labels(y_train);
    check_class_labels(y_test);
    const double first = y_train.front();
    if (std::all_of(y_train.begin(), y_train.end(), [&](double y) { return y == first; })) {
      throw DegenerateSplitError("training split contains a single class");
    }
  }

  const int n_train = static_cast<int>(dataset.splits.train.size());
  const int width = static_cast<int>(embeddings.cols());
  Matrix x_train(n_train, width);
  for (int r = 0; r < n_train; ++r) x_train.row(r) = embeddings.row(dataset.splits.train[r]);
  Eigen::VectorXd y(n_train);
  for (int r = 0; r < n_train; ++r) y(r) = y_train[r];

  ProbeResult probe;
  probe.weight = Matrix::Zero(width, 1);
  probe.bias = classify ? 0.0 : y.mean();

  // Full-batch Adam on the convex head objective; zero init keeps the fit
  // deterministic without a seed.
  Matrix m_w = Matrix::Zero(width, 1), v_w = Matrix::Zero(width, 1);
  double m_b = 0.0, v_b = 0.0;
  for (int step = 1; step <= kProbeEpochs; ++step) {
    Eigen::VectorXd z = (x_train * probe.weight).col(0).array() + probe.bias;
    Eigen::VectorXd grad_z(n_train);
    if (classify) {
      for (int r = 0; r < n_train; ++r) grad_z(r) = (sigmoid_scalar(z(r)) - y(r)) / n_train;
    } else {
      grad_z = 2.0 * (z - y) / n_train;
    }
    const Matrix grad_w = x_train.transpose() * grad_z;
    const double grad_b = grad_z.sum();
    const double c1 = 1.0 - std::pow(0.9, step);
    const double c2 = 1.0 - std::pow(0.999, step);
    m_w = 0.9 * m_w + 0.1 * grad_w;
    v_w = 0.999 * v_w + 0.001 * grad_w.cwiseProduct(grad_w);
    probe.weight.array() -= kProbeLearningRate * (m_w / c1).array() /
                            ((v_w / c2).array().sqrt() + 1e-8);
    m_b = 0.9 * m_b + 0.1 * grad_b;
    v_b = 0.999 * v_b + 0.001 * grad_b * grad_b;
    probe.bias -= kProbeLearningRate * (m_b / c1) / (std::sqrt(v_b / c2) + 1e-8);
  }

  std::vector<double> scores;
  scores.reserve(dataset.splits.test.size());
  for (int i : dataset.splits.test) {
    scores.push_back((embeddings.row(i) * probe.weight)(0, 0) + probe.bias);
  }
  if (classify) {
    double correct = 0.0, positives = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const double predicted = scores[k] > 0.0 ? 1.0 : 0.0;
      if (predicted == y_test[k]) correct += 1.0;
      positives += y_test[k];
    }
    probe.metrics["accuracy"] = correct / static_cast<double>(scores.size());
    if (positives > 0.0 && positives < static_cast<double>(scores.size())) {
      probe.metrics["roc_auc"] = roc_auc(scores, y_test);
      probe.metrics["average_precision"] = average_precision(scores, y_test);
    }
  } else {
    double sq = 0.0, abs_sum = 0.0, baseline_sq = 0.0;
    const double train_mean = y.mean();
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const double err = scores[k] - y_test[k];
      sq += err * err;
      abs_sum += std::abs(err);
      const double base_err = train_mean - y_test[k];
      baseline_sq += base_err * base_err;
    }
    probe.metrics["rmse"] = std::sqrt(sq / static_cast<double>(scores.size()));
    probe.metrics["mae"] = abs_sum / static_cast<double>(scores.size());
    probe.metrics["baseline_rmse"] = std::sqrt(baseline_sq / static_cast<double>(scores.size()));
  }
  return probe;
}

double probe_score(const ProbeResult& probe, const Matrix& embedding_row) {
  if (embedding_row.rows() != 1 || embedding_row.cols() != probe.weight.rows()) {
    throw ShapeError("embedding row does not match the probe width");
  }
  return (embedding_row * probe.weight)(0, 0) + probe.bias;
}

int probe_predict_class(const ProbeResult& probe, const Matrix& embedding_row) {
  return probe_score(probe, embedding_row) > 0.0 ? 1 : 0;
}

Explanation explain(const EvalModel& model, const MolecularGraph& graph, double ratio) {
  if (ratio < 0.0 || ratio > 1.0) throw DomainError("explanation ratio must lie in [0, 1]");
  PreparedGraph prepared = prepare_graph(graph, model.hop_radius);
  Tape tape;
  BoundEncoderParams bound = bind_parameters(tape, model.params, false);
  PreparedBatch batch = assemble_batch({&prepared});
  ForwardOptions options;
  options.pool = model.pool;
  options.deterministic = true;
  Rng unused(0);
  ForwardOutcome out = model_forward(tape, bound, batch, options, unused);

  Explanation explanation;
  explanation.graph_id = graph.id;
  const Matrix& alpha = out.alpha.data();
  explanation.scores.resize(graph.num_nodes());
  for (int i = 0; i < graph.num_nodes(); ++i) explanation.scores[i] = alpha(i, 0);

  const int keep = static_cast<int>(std::ceil(ratio * graph.num_nodes()));
  std::vector<int> order(graph.num_nodes());
  std::iota(order.begin(), order.end(), 0);
  // Stable sort: equal scores keep the lower node index in front.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return explanation.scores[a] > explanation.scores[b];
  });
  explanation.selected.assign(order.begin(), order.begin() + keep);
  std::sort(explanation.selected.begin(), explanation.selected.end());
  return explanation;
}

FidelityReport fidelity(const EvalModel& model, const ProbeResult& probe,
                        const LabeledDataset& dataset, double ratio) {
  if (dataset.task != TaskKind::kClassification) {
    throw UnsupportedTaskError("fidelity is defined for classification only");
  }
  if (dataset.splits.test.empty()) throw DegenerateSplitError("test split is empty");

  double keep_sum = 0.0, drop_sum = 0.0;
  for (int index : dataset.splits.test) {
    const MolecularGraph& graph = dataset.graphs[index];
    if (!graph.label) throw ValidationError("graph " + graph.id + " has no label");
    const int label = *graph.label != 0.0 ? 1 : 0;
    const Explanation explanation = explain(model, graph, ratio);

    std::vector<int> keep_nodes = explanation.selected;
    std::vector<int> drop_nodes;
    for (int i = 0; i < graph.num_nodes(); ++i) {
      if (!std::binary_search(keep_nodes.begin(), keep_nodes.end(), i)) drop_nodes.push_back(i);
    }
    const auto extreme_node = [&](bool highest) {
      int best = 0;
      for (int i = 1; i < graph.num_nodes(); ++i) {
        const bool better = highest ? explanation.scores[i] > explanation.scores[best]
                                    : explanation.scores[i] < explanation.scores[best];
        if (better) best = i;
      }
      return best;
    };
    if (keep_nodes.empty()) keep_nodes.push_back(extreme_node(true));
    if (drop_nodes.empty()) drop_nodes.push_back(extreme_node(false));

    const Matrix full = embed_graphs(model, {graph});
    const Matrix kept = embed_graphs(model, {induced_subgraph(graph, keep_nodes)});
    const Matrix dropped = embed_graphs(model, {induced_subgraph(graph, drop_nodes)});
    const int full_hit = probe_predict_class(probe, full) == label ? 1 : 0;
    const int keep_hit = probe_predict_class(probe, kept) == label ? 1 : 0;
    const int drop_hit = probe_predict_class(probe, dropped) == label ? 1 : 0;
    keep_sum += full_hit - keep_hit;
    drop_sum += full_hit - drop_hit;
  }
  const double count = static_cast<double>(dataset.splits.test.size());
  return FidelityReport{keep_sum / count, drop_sum / count};
}

double jsd_distinguishability(const Matrix& embeddings, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.rows()) {
    throw ShapeError("label count does not match the embedding rows");
  }
  std::vector<int> classes;
  for (int y : labels) {
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
  }
  if (classes.size() > 2) throw ValidationError("distinguishability needs exactly two classes");
  if (classes.size() < 2) throw DegenerateSplitError("only one class present");
  std::sort(classes.begin(), classes.end());
  std::array<std::vector<int>, 2> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[labels[i] == classes[1] ? 1 : 0].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < 2; ++c) {
    if (members[c].size() < 5) {
      throw DegenerateSplitError("class " + std::to_string(classes[c]) +
                                 " has fewer than five samples");
    }
  }

  double total = 0.0;
  for (Eigen::Index d = 0; d < embeddings.cols(); ++d) {
    const double lo = embeddings.col(d).minCoeff();
    const double hi = embeddings.col(d).maxCoeff();
    const double width = (hi - lo) / kJsdBins;
    std::array<std::array<double, kJsdBins>, 2> hist{};
    for (int c = 0; c < 2; ++c) {
      for (int i : members[c]) {
        int bin = 0;
        if (width > 0.0) {
          bin = std::min(kJsdBins - 1,
                         static_cast<int>(std::floor((embeddings(i, d) - lo) / width)));
        }
        hist[c][bin] += 1.0;
      }
      const double count = static_cast<double>(members[c].size());
      double mass = 0.0;
      for (double& h : hist[c]) {
        h = h / count + kJsdSmoothing;
        mass += h;
      }
      for (double& h : hist[c]) h /= mass;
    }
    double divergence = 0.0;
    for (int k = 0; k < kJsdBins; ++k) {
      const double mid = 0.5 * (hist[0][k] + hist[1][k]);
      divergence += 0.5 * hist[0][k] * std::log(hist[0][k] / mid) +
                    0.5 * hist[1][k] * std::log(hist[1][k] / mid);
    }
    total += divergence;
  }
  return total / static_cast<double>(embeddings.cols());
}

}  // namespace scgib

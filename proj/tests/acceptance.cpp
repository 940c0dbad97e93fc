// Release gates, one binary. Every gate prints exactly one PASS/FAIL line
// with its headline numbers; the exit status is the count of failed gates.
// Gates 6-8 share one set of trained desk-profile models, so they must run
// in order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scgib/bottleneck.hpp"
#include "scgib/config.hpp"
#include "scgib/encoder.hpp"
#include "scgib/evaluation.hpp"
#include "scgib/graph.hpp"
#include "scgib/model.hpp"
#include "scgib/objectives.hpp"
#include "scgib/synth.hpp"
#include "scgib/tensor.hpp"
#include "scgib/trainer.hpp"
#include "support/oracles.hpp"
#include "support/param_check.hpp"

namespace fs = std::filesystem;
using namespace scgib;

namespace {

struct GateResult {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buffer[512];
  std::vsnprintf(buffer, sizeof(buffer), pattern, args);
  va_end(args);
  return std::string(buffer);
}

fs::path scratch_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() /
                 ("scgib-acceptance-" + std::to_string(static_cast<long>(::getpid())));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// ---------------------------------------------------------------------------
// Gate 1: the variational information bound differs from the exact Gaussian
// divergence KL(N(m, P sigma^2) || N(0, N sigma^2)) by exactly
// (log N)/2 - 1/2, for any gates and embeddings.

GateResult gate_information_bound() {
  Rng rng(314159);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(std::floor(rng.uniform() * 16.0));  // 1..16
    const int d = 1 + static_cast<int>(std::floor(rng.uniform() * 8.0));   // 1..8
    const Matrix h = rng.gaussian_matrix(0.0, 1.5, n, d);
    Matrix gates(n, 1);
    for (int i = 0; i < n; ++i) gates(i, 0) = 0.05 + 0.9 * rng.uniform();

    Tape tape;
    const double mi = mi_upper_bound(tape.leaf(h), tape.leaf(gates)).scalar();

    double residual = 0.0;
    for (int i = 0; i < n; ++i) residual += (1.0 - gates(i, 0)) * (1.0 - gates(i, 0));
    double kl = 0.0;
    for (int c = 0; c < d; ++c) {
      const double mu = h.col(c).mean();
      const double std_floored =
          std::max(std::sqrt((h.col(c).array() - mu).square().mean()), kSigmaFloor);
      const double var = std_floored * std_floored;
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += gates(i, 0) * (h(i, c) - mu);
      kl += oracle::diag_gaussian_kl({m}, {residual * var}, {0.0},
                                     {static_cast<double>(n) * var});
    }
    kl /= static_cast<double>(d);

    const double offset = 0.5 * std::log(static_cast<double>(n)) - 0.5;
    worst = std::max(worst, std::abs((kl - mi) - offset));
  }
  return {worst < 1e-9, fmt("max |error| %.2e over 100 pairs", worst)};
}

// ---------------------------------------------------------------------------
// Gate 2: analytic gradients of each loss term, and of the combined training
// objective, against central finite differences over every parameter entry.

MolecularGraph random_gate_graph(Rng& rng, int nodes, int d_in, const std::string& id) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < nodes; ++i) edges.emplace_back(i, i + 1);
  for (int i = 0; i < nodes; ++i) {
    for (int j = i + 2; j < nodes; ++j) {
      if (rng.uniform() < 0.3) edges.emplace_back(i, j);
    }
  }
  return make_graph(id, rng.standard_gaussian_matrix(nodes, d_in), edges);
}

GateResult gate_gradients() {
  enum class Target { kRec, kMi, kCon, kAtt, kFull };
  const std::vector<Target> targets = {Target::kRec, Target::kMi, Target::kCon,
                                       Target::kAtt, Target::kFull};
  constexpr int kInstancesPerTarget = 4;
  constexpr int kDim = 4;
  constexpr int kLayers = 2;
  constexpr int kInputDim = 3;

  double worst = 0.0;
  int instance = 0;
  for (Target target : targets) {
    for (int rep = 0; rep < kInstancesPerTarget; ++rep, ++instance) {
      Rng rng(1000 + 17 * instance);
      const MolecularGraph g1 = random_gate_graph(rng, 5, kInputDim, "a");
      const MolecularGraph g2 = random_gate_graph(rng, 4, kInputDim, "b");
      const PreparedGraph p1 = prepare_graph(g1, 1);
      const PreparedGraph p2 = prepare_graph(g2, 1);
      const PreparedBatch batch = assemble_batch({&p1, &p2});

      Rng init_rng(2000 + instance);
      EncoderParams params = init_encoder_params(kInputDim, kDim, kLayers, init_rng);
      // Perturb off the zero-bias init: when every member of an ego network
      // is clipped dead by the first ReLU layer, the next pre-activation is
      // exactly 0 and central differences straddle the kink. A generic point
      // keeps the check about the gradient, not the subgradient convention.
      for_each_parameter(params, [&](const std::string&, Matrix& m) {
        m += 0.05 * init_rng.standard_gaussian_matrix(m.rows(), m.cols());
      });

      ForwardOptions options;
      options.tau = 0.8;
      options.pool = PoolMode::kSum;
      options.deterministic = false;
      options.compute_attribute = target == Target::kAtt;
      const std::uint64_t draw_seed = 3000 + instance;
      // rep 2-3 of the combined objective turn the candidate-alignment
      // weight on so its term joins the backward pass.
      const double zeta = (target == Target::kFull && rep >= 2) ? 0.4 : 0.0;

      auto program = [&](Tape& tape, const BoundEncoderParams& bound) -> Value {
        Rng draws(draw_seed);
        ForwardOutcome out = model_forward(tape, bound, batch, options, draws);
        switch (target) {
          case Target::kRec:
            return out.losses.rec;
          case Target::kMi:
            return out.losses.mi;
          case Target::kCon:
            return out.losses.con;
          case Target::kAtt:
            return *out.losses.att;
          case Target::kFull:
            return combine_losses(out.losses, 1.0, zeta);
        }
        return out.losses.rec;
      };
      worst = std::max(worst, oracle::param_gradient_error(params, program, 1e-5));
    }
  }
  return {worst < 1e-4, fmt("max relative error %.2e over %d instances", worst, instance)};
}

// ---------------------------------------------------------------------------
// Gate 3: at temperature 0.05 the relaxed gate crosses 0.5 with the keep
// probability itself.

GateResult gate_gate_limit() {
  constexpr int kDraws = 100000;
  double worst = 0.0;
  std::string parts;
  for (double p : {0.1, 0.5, 0.9}) {
    Tape tape;
    Rng rng(8675309);
    const Value keep = tape.leaf(Matrix::Constant(kDraws, 1, p));
    const Value gates = gumbel_sigmoid(keep, 0.05, tape, rng);
    const double freq =
        (gates.data().array() > 0.5).cast<double>().sum() / static_cast<double>(kDraws);
    worst = std::max(worst, std::abs(freq - p));
    parts += fmt("%sP(gate>0.5)=%.4f at p=%.1f", parts.empty() ? "" : ", ", freq, p);
  }
  return {worst <= 0.01, parts};
}

// ---------------------------------------------------------------------------
// Gate 4: ego-network membership equals the shortest-path radius filter on
// random (possibly disconnected) graphs.

GateResult gate_ego_networks() {
  Rng rng(4242);
  int mismatches = 0;
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4 + static_cast<int>(std::floor(rng.uniform() * 9.0));  // 4..12
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.25) edges.emplace_back(i, j);
      }
    }
    const MolecularGraph graph =
        make_graph("ego-" + std::to_string(trial), Matrix::Ones(n, 1), edges);
    const auto dist = oracle::floyd_warshall_hops(neighbor_lists(graph));
    for (int k = 0; k <= 3; ++k) {
      const EgoNetworkSet set = ego_network_set(graph, k);
      for (int root = 0; root < n; ++root) {
        std::vector<int> expected;
        for (int j = 0; j < n; ++j) {
          if (dist[root][j] >= 0 && dist[root][j] <= k) expected.push_back(j);
        }
        ++checked;
        if (set.networks[root].members != expected) ++mismatches;
      }
    }
  }
  return {mismatches == 0, fmt("%d mismatches over %d root/radius pairs", mismatches, checked)};
}

// ---------------------------------------------------------------------------
// Gate 5: the same manifest twice gives byte-identical checkpoints and
// identical metrics (wall-clock duration excluded; every numeric field must
// match bitwise).

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

GateResult gate_determinism() {
  const std::vector<SynthGraph> synth = generate_synthetic_corpus(30, MotifKind::kTriangle, 5);
  std::vector<MolecularGraph> corpus;
  for (const SynthGraph& s : synth) corpus.push_back(s.graph);

  TrainConfig config;
  config.batch_size = 8;
  config.epochs = 3;
  config.embed_dim = 8;
  config.num_layers = 2;
  config.hop_radius = 1;
  config.learning_rate = 1e-3;
  config.seed = 7;

  auto run = [&](const fs::path& checkpoint_path, std::vector<std::string>& lines) {
    const Checkpoint ckpt = pretrain(corpus, config, [&](const EpochRecord& record) {
      nlohmann::json obj = nlohmann::json::parse(metrics_line(record));
      obj.erase("wall_ms");
      lines.push_back(obj.dump());
    });
    save_checkpoint(ckpt, checkpoint_path.string());
  };

  const fs::path first = scratch_dir() / "determinism-a.json";
  const fs::path second = scratch_dir() / "determinism-b.json";
  std::vector<std::string> metrics_a, metrics_b;
  run(first, metrics_a);
  run(second, metrics_b);

  const std::string bytes_a = slurp(first);
  const std::string bytes_b = slurp(second);
  const bool checkpoints_equal = !bytes_a.empty() && bytes_a == bytes_b;
  const bool metrics_equal = !metrics_a.empty() && metrics_a == metrics_b;
  return {checkpoints_equal && metrics_equal,
          fmt("checkpoint bytes %s (%zu B), %zu metric records %s",
              checkpoints_equal ? "equal" : "DIFFER", bytes_a.size(), metrics_a.size(),
              metrics_equal ? "equal" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// Gates 6-8 share one corpus and one family of trained desk-profile models.

constexpr int kBatterySeeds = 5;
constexpr std::uint64_t kProbeSplitSalt = 11;  // the CLI's finetune split stream

struct DeskRun {
  Checkpoint trained;
  double loss_drop = 0.0;
  double probe_accuracy = 0.0;
  double jsd_trained = 0.0;
  double jsd_untrained = 0.0;
};

struct Battery {
  std::vector<MolecularGraph> graphs;
  std::vector<std::vector<int>> motif_nodes;
  std::vector<int> labels;
  TrainConfig desk;
  std::vector<DeskRun> runs;
};

Battery g_battery;

TrainConfig desk_profile() {
  TrainConfig config;
  apply_config_file(config, SCGIB_DESK_CONFIG);
  validate_config(config);
  return config;
}

double probe_accuracy_for(const Checkpoint& checkpoint, const std::vector<MolecularGraph>& graphs,
                          std::uint64_t seed) {
  LabeledDataset dataset;
  dataset.graphs = graphs;
  dataset.task = TaskKind::kClassification;
  Rng split_rng = Rng(seed).substream(kProbeSplitSalt);
  dataset.splits =
      make_random_splits(static_cast<int>(graphs.size()), 0.6, 0.2, split_rng);
  const Matrix embeddings = embed_graphs(eval_model(checkpoint), graphs);
  return fit_probe(embeddings, dataset).metrics.at("accuracy");
}

GateResult gate_desk_learning() {
  const std::vector<SynthGraph> synth = generate_synthetic_corpus(200, MotifKind::kTriangle, 0);
  g_battery.graphs.clear();
  g_battery.motif_nodes.clear();
  g_battery.labels.clear();
  for (const SynthGraph& s : synth) {
    g_battery.graphs.push_back(s.graph);
    g_battery.motif_nodes.push_back(s.motif_nodes);
    g_battery.labels.push_back(static_cast<int>(*s.graph.label));
  }
  g_battery.desk = desk_profile();
  g_battery.runs.clear();

  std::vector<double> drops, accuracies, jsd_gaps;
  for (int seed = 0; seed < kBatterySeeds; ++seed) {
    TrainConfig config = g_battery.desk;
    config.seed = static_cast<std::uint64_t>(seed);

    DeskRun run;
    double first_total = 0.0, last_total = 0.0;
    run.trained = pretrain(g_battery.graphs, config, [&](const EpochRecord& record) {
      if (record.epoch == 1) first_total = record.report.total;
      last_total = record.report.total;
    });
    run.loss_drop = (first_total - last_total) / first_total;
    run.probe_accuracy = probe_accuracy_for(run.trained, g_battery.graphs, config.seed);

    TrainConfig untrained_config = config;
    untrained_config.epochs = 0;
    const Checkpoint untrained = pretrain(g_battery.graphs, untrained_config);
    run.jsd_trained = jsd_distinguishability(
        embed_graphs(eval_model(run.trained), g_battery.graphs), g_battery.labels);
    run.jsd_untrained = jsd_distinguishability(
        embed_graphs(eval_model(untrained), g_battery.graphs), g_battery.labels);

    drops.push_back(run.loss_drop);
    accuracies.push_back(run.probe_accuracy);
    jsd_gaps.push_back(run.jsd_trained - run.jsd_untrained);
    g_battery.runs.push_back(std::move(run));
  }

  const double drop_med = median(drops);
  const double acc_med = median(accuracies);
  const double gap_med = median(jsd_gaps);
  const bool pass = drop_med >= 0.20 && acc_med >= 0.80 && gap_med > 0.0;
  return {pass, fmt("medians over %d seeds: loss drop %.1f%%, probe accuracy %.3f, "
                    "trained-vs-untrained JSD gap %+.4f",
                    kBatterySeeds, 100.0 * drop_med, acc_med, gap_med)};
}

GateResult gate_motif_attention() {
  if (g_battery.runs.empty()) return {false, "desk battery unavailable"};
  std::vector<double> mean_recalls;
  for (const DeskRun& run : g_battery.runs) {
    const EvalModel model = eval_model(run.trained);
    double total = 0.0;
    int positives = 0;
    for (std::size_t i = 0; i < g_battery.graphs.size(); ++i) {
      const std::vector<int>& motif = g_battery.motif_nodes[i];
      if (motif.empty()) continue;
      const Explanation expl = explain(model, g_battery.graphs[i], 0.5);
      int hits = 0;
      for (int node : motif) {
        if (std::find(expl.selected.begin(), expl.selected.end(), node) != expl.selected.end())
          ++hits;
      }
      total += static_cast<double>(hits) / static_cast<double>(motif.size());
      ++positives;
    }
    mean_recalls.push_back(total / positives);
  }
  const double recall_med = median(mean_recalls);
  // Top-50% selection recovers half the motif by chance; demand a 0.10 lift.
  const bool pass = recall_med >= 0.5 + 0.10;
  return {pass, fmt("median over %d seeds of mean motif recall %.3f (chance 0.5)",
                    kBatterySeeds, recall_med)};
}

GateResult gate_alignment_sweep() {
  if (g_battery.runs.empty()) return {false, "desk battery unavailable"};
  const std::vector<double> zetas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> rhos;
  std::string per_seed;
  for (int seed = 0; seed < kBatterySeeds; ++seed) {
    std::vector<double> accuracies = {g_battery.runs[seed].probe_accuracy};
    for (std::size_t zi = 1; zi < zetas.size(); ++zi) {
      TrainConfig config = g_battery.desk;
      config.seed = static_cast<std::uint64_t>(seed);
      config.zeta = zetas[zi];
      const Checkpoint trained = pretrain(g_battery.graphs, config);
      accuracies.push_back(probe_accuracy_for(trained, g_battery.graphs, config.seed));
    }
    const double rho = oracle::spearman_rho(zetas, accuracies);
    rhos.push_back(rho);
    per_seed += fmt("%s%+.2f", per_seed.empty() ? "" : " ", rho);
  }
  const double rho_med = median(rhos);
  return {rho_med <= 0.0,
          fmt("median Spearman rho %+.3f (per seed: %s)", rho_med, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// Gate 9: the two-graph contrastive fixture with orthonormal summaries pins
// the loss to -1 exactly: each row contributes log(exp 0) - 1.

GateResult gate_contrastive_pin() {
  Tape tape;
  Matrix eye(2, 2);
  eye << 1.0, 0.0, 0.0, 1.0;
  const Value core = tape.leaf(eye);
  const Value graph = tape.leaf(eye);
  const double loss = contrastive_loss(core, graph).scalar();
  return {std::abs(loss - (-1.0)) <= 1e-12, fmt("loss %.17g", loss)};
}

// ---------------------------------------------------------------------------
// Gate 10: an empty configuration file resolves to the published full-scale
// defaults.

GateResult gate_default_config() {
  const fs::path empty = scratch_dir() / "empty.cfg";
  std::ofstream(empty).close();
  const TrainConfig config = load_config(empty.string());
  std::vector<std::string> wrong;
  auto expect = [&](bool ok, const std::string& name) {
    if (!ok) wrong.push_back(name);
  };
  expect(config.batch_size == 128, "batch_size");
  expect(config.num_layers == 5, "num_layers");
  expect(config.embed_dim == 64, "embed_dim");
  expect(config.beta == 1.0, "beta");
  expect(config.tau == 1.0, "tau");
  expect(config.learning_rate == 1e-4, "learning_rate");
  expect(config.weight_decay == 1e-5, "weight_decay");
  expect(config.pool_mode == "sum", "pool_mode");
  expect(config.epochs == 600, "epochs");
  expect(config.adapt_epochs == 50, "adapt_epochs");
  if (wrong.empty()) return {true, "batch 128, 5 layers, dim 64, beta 1, tau 1, lr 1e-4, wd 1e-5, sum pool, 600/50 epochs"};
  std::string joined;
  for (const std::string& name : wrong) joined += (joined.empty() ? "" : ", ") + name;
  return {false, "unexpected defaults: " + joined};
}

}  // namespace

int main() {
  ::unsetenv("SCGIB_SEED");  // gate 10 must see the bare defaults

  struct Gate {
    const char* label;
    std::function<GateResult()> run;
    double budget_seconds;  // 0 = unbounded
  };
  const std::vector<Gate> gates = {
      {"information bound sits at the closed-form offset from exact KL", gate_information_bound, 1.0},
      {"loss and training-step gradients match finite differences", gate_gradients, 30.0},
      {"low-temperature gates reproduce their keep probabilities", gate_gate_limit, 5.0},
      {"ego networks equal the shortest-path radius filter", gate_ego_networks, 0.0},
      {"identical manifests give bitwise-identical runs", gate_determinism, 0.0},
      {"desk-scale training learns (loss drop, probe, class JSD)", gate_desk_learning, 300.0},
      {"attention concentrates on planted motif nodes", gate_motif_attention, 0.0},
      {"candidate-alignment weight sweep never helps the probe", gate_alignment_sweep, 0.0},
      {"orthonormal two-graph contrastive fixture pins to -1", gate_contrastive_pin, 0.0},
      {"empty configuration resolves to the published defaults", gate_default_config, 0.0},
  };

  int failures = 0;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    GateResult result;
    try {
      result = gates[i].run();
    } catch (const std::exception& error) {
      result = {false, std::string("exception: ") + error.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (gates[i].budget_seconds > 0.0 && seconds >= gates[i].budget_seconds) {
      result.pass = false;
      result.detail += fmt("; budget %.0f s exceeded", gates[i].budget_seconds);
    }
    if (!result.pass) ++failures;
    std::printf("[%2zu] %-62s %s  (%s; %.2f s)\n", i + 1, gates[i].label,
                result.pass ? "PASS" : "FAIL", result.detail.c_str(), seconds);
    std::fflush(stdout);
  }

  std::error_code cleanup;
  fs::remove_all(scratch_dir(), cleanup);
  return failures;
}

// Command-line front end: pre-training, domain adaptation, embedding,
// probing, explanation, class distinguishability and synthetic corpus
// generation. Every training command resolves its configuration up front,
// locks its output directory and records a replayable run manifest before
// doing any work.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scgib/config.hpp"
#include "scgib/evaluation.hpp"
#include "scgib/graph.hpp"
#include "scgib/synth.hpp"
#include "scgib/trainer.hpp"

namespace {

using scgib::TrainConfig;
using json = nlohmann::json;

constexpr std::uint64_t kSplitSalt = 11;

// Flag values collected as (key, value) pairs so the config resolution
// order stays: defaults, SCGIB_SEED, file, then flags.
struct ConfigFlags {
  std::vector<std::pair<std::string, std::string>> overrides;

  void add(CLI::App* cmd) {
    const auto bind = [this, cmd](const std::string& flag, const std::string& key,
                                  const std::string& help) {
      cmd->add_option_function<std::string>(
             flag, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
          ->take_all();
    };
    bind("--batch-size", "batch_size", "graphs per optimization step");
    bind("--epochs", "epochs", "pre-training epochs");
    bind("--adapt-epochs", "adapt_epochs", "adaptation epochs");
    bind("--lr", "learning_rate", "Adam learning rate");
    bind("--wd", "weight_decay", "L2 weight decay");
    bind("--beta", "beta", "information bound weight");
    bind("--tau", "tau", "gate relaxation temperature");
    bind("--zeta", "zeta", "candidate alignment weight");
    bind("--hops", "hop_radius", "ego network radius");
    bind("--dim", "embed_dim", "embedding width");
    bind("--layers", "num_layers", "encoder depth");
    bind("--pool", "pool_mode", "pooling: sum, mean or max");
    bind("--seed", "seed", "random seed");
  }
};

// Exclusive run.lock holder; the lock disappears when the run ends.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) : path_(dir / "run.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw scgib::IOError("run directory is locked (remove " + path_.string() + " if stale)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

json config_manifest(const TrainConfig& config) {
  json out;
  out["batch_size"] = config.batch_size;
  out["epochs"] = config.epochs;
  out["adapt_epochs"] = config.adapt_epochs;
  out["learning_rate"] = config.learning_rate;
  out["weight_decay"] = config.weight_decay;
  out["beta"] = config.beta;
  out["tau"] = config.tau;
  out["zeta"] = config.zeta;
  out["hop_radius"] = config.hop_radius;
  out["embed_dim"] = config.embed_dim;
  out["num_layers"] = config.num_layers;
  out["pool_mode"] = config.pool_mode;
  out["seed"] = config.seed;
  return out;
}

// Creates the run directory, takes the lock and writes + echoes run.json.
std::unique_ptr<RunLock> open_run(const std::string& out_dir, json manifest) {
  std::filesystem::create_directories(out_dir);
  auto lock = std::make_unique<RunLock>(out_dir);
  std::ofstream run_file(std::filesystem::path(out_dir) / "run.json", std::ios::binary);
  if (!run_file) throw scgib::IOError("cannot write run manifest in " + out_dir);
  const std::string text = manifest.dump(2);
  run_file << text << "\n";
  std::cout << text << "\n";
  return lock;
}

std::vector<scgib::MolecularGraph> load_graphs(const std::string& path, bool smiles) {
  return smiles ? scgib::load_smiles_file(path) : scgib::load_jsonl_graphs(path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw scgib::IOError("cannot write " + path.string());
  out << text;
  if (!out) throw scgib::IOError("failed while writing " + path.string());
}

struct CommonArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  bool smiles = false;
  ConfigFlags flags;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_data = true) {
  cmd->add_option("--config", args.config_path, "flat key=value configuration file");
  if (needs_data) {
    cmd->add_option("--data", args.data_path, "input graphs (JSONL)")->required();
    cmd->add_flag("--smiles", args.smiles, "read --data as SMILES lines instead of JSONL");
  }
  cmd->add_option("--out", args.out_dir, "run output directory")->required();
  args.flags.add(cmd);
}

int run_pretrain(const CommonArgs& args) {
  const TrainConfig config = scgib::load_config(args.config_path, args.flags.overrides);
  scgib::validate_config(config);
  json manifest;
  manifest["command"] = "pretrain";
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["config"] = config_manifest(config);
  auto lock = open_run(args.out_dir, manifest);

  const auto corpus = load_graphs(args.data_path, args.smiles);
  std::ofstream metrics(std::filesystem::path(args.out_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw scgib::IOError("cannot write metrics in " + args.out_dir);
  const auto sink = [&](const scgib::EpochRecord& record) {
    metrics << scgib::metrics_line(record) << "\n";
  };
  scgib::Checkpoint checkpoint = scgib::pretrain(corpus, config, sink, &std::cerr);
  const auto checkpoint_path = std::filesystem::path(args.out_dir) / "checkpoint.json";
  scgib::save_checkpoint(checkpoint, checkpoint_path.string());
  std::cout << "checkpoint: " << checkpoint_path.string() << "\n";
  return 0;
}

int run_adapt(const CommonArgs& args, const std::string& checkpoint_path) {
  const scgib::Checkpoint source = scgib::load_checkpoint(checkpoint_path);
  // The checkpoint's configuration is the baseline; file and flags refine it.
  TrainConfig config = source.config;
  if (!args.config_path.empty()) scgib::apply_config_file(config, args.config_path);
  for (const auto& [key, value] : args.flags.overrides) {
    scgib::apply_config_entry(config, key, value);
  }
  scgib::validate_config(config);
  json manifest;
  manifest["command"] = "adapt";
  manifest["checkpoint"] = checkpoint_path;
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["config"] = config_manifest(config);
  auto lock = open_run(args.out_dir, manifest);

  const auto corpus = load_graphs(args.data_path, args.smiles);
  std::ofstream metrics(std::filesystem::path(args.out_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw scgib::IOError("cannot write metrics in " + args.out_dir);
  const auto sink = [&](const scgib::EpochRecord& record) {
    metrics << scgib::metrics_line(record) << "\n";
  };
  scgib::Checkpoint adapted = scgib::domain_adapt(source, corpus, config, sink, &std::cerr);
  const auto out_path = std::filesystem::path(args.out_dir) / "checkpoint.json";
  scgib::save_checkpoint(adapted, out_path.string());
  std::cout << "checkpoint: " << out_path.string() << "\n";
  return 0;
}

int run_embed(const CommonArgs& args, const std::string& checkpoint_path) {
  const scgib::Checkpoint checkpoint = scgib::load_checkpoint(checkpoint_path);
  json manifest;
  manifest["command"] = "embed";
  manifest["checkpoint"] = checkpoint_path;
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["config"] = config_manifest(checkpoint.config);
  auto lock = open_run(args.out_dir, manifest);

  const auto graphs = load_graphs(args.data_path, args.smiles);
  const scgib::Matrix embeddings = scgib::embed_graphs(scgib::eval_model(checkpoint), graphs);
  std::ofstream out(std::filesystem::path(args.out_dir) / "embeddings.jsonl", std::ios::binary);
  if (!out) throw scgib::IOError("cannot write embeddings in " + args.out_dir);
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    json line;
    line["id"] = graphs[i].id;
    json vec = json::array();
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      vec.push_back(embeddings(static_cast<Eigen::Index>(i), c));
    }
    line["embedding"] = std::move(vec);
    out << line.dump() << "\n";
  }
  std::cout << "embedded " << graphs.size() << " graphs\n";
  return 0;
}

scgib::TaskKind detect_task(const std::vector<scgib::MolecularGraph>& graphs,
                            const std::string& requested) {
  if (requested == "classification") return scgib::TaskKind::kClassification;
  if (requested == "regression") return scgib::TaskKind::kRegression;
  for (const auto& g : graphs) {
    if (g.label && *g.label != 0.0 && *g.label != 1.0) return scgib::TaskKind::kRegression;
  }
  return scgib::TaskKind::kClassification;
}

int run_finetune(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& task_name) {
  const scgib::Checkpoint checkpoint = scgib::load_checkpoint(checkpoint_path);
  TrainConfig config = checkpoint.config;
  if (!args.config_path.empty()) scgib::apply_config_file(config, args.config_path);
  for (const auto& [key, value] : args.flags.overrides) {
    scgib::apply_config_entry(config, key, value);
  }
  scgib::validate_config(config);
  json manifest;
  manifest["command"] = "finetune";
  manifest["checkpoint"] = checkpoint_path;
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["task"] = task_name;
  manifest["config"] = config_manifest(config);
  auto lock = open_run(args.out_dir, manifest);

  scgib::LabeledDataset dataset;
  dataset.graphs = load_graphs(args.data_path, args.smiles);
  dataset.task = detect_task(dataset.graphs, task_name);
  scgib::Rng split_rng = scgib::Rng(config.seed).substream(kSplitSalt);
  dataset.splits = scgib::make_random_splits(static_cast<int>(dataset.graphs.size()), 0.6, 0.2,
                                             split_rng);
  const scgib::Matrix embeddings =
      scgib::embed_graphs(scgib::eval_model(checkpoint), dataset.graphs);
  const scgib::ProbeResult probe = scgib::fit_probe(embeddings, dataset);

  json report;
  report["task"] =
      dataset.task == scgib::TaskKind::kClassification ? "classification" : "regression";
  report["metrics"] = probe.metrics;
  report["splits"]["train"] = dataset.splits.train;
  report["splits"]["valid"] = dataset.splits.valid;
  report["splits"]["test"] = dataset.splits.test;
  json weight = json::array();
  for (Eigen::Index r = 0; r < probe.weight.rows(); ++r) weight.push_back(probe.weight(r, 0));
  report["probe"]["weight"] = std::move(weight);
  report["probe"]["bias"] = probe.bias;
  write_text(std::filesystem::path(args.out_dir) / "report.json", report.dump(2) + "\n");
  std::cout << "report: " << (std::filesystem::path(args.out_dir) / "report.json").string()
            << "\n";
  return 0;
}

int run_explain(const CommonArgs& args, const std::string& checkpoint_path, double ratio) {
  const scgib::Checkpoint checkpoint = scgib::load_checkpoint(checkpoint_path);
  json manifest;
  manifest["command"] = "explain";
  manifest["checkpoint"] = checkpoint_path;
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["ratio"] = ratio;
  manifest["config"] = config_manifest(checkpoint.config);
  auto lock = open_run(args.out_dir, manifest);

  const auto graphs = load_graphs(args.data_path, args.smiles);
  const scgib::EvalModel model = scgib::eval_model(checkpoint);
  std::ofstream out(std::filesystem::path(args.out_dir) / "explanations.jsonl",
                    std::ios::binary);
  if (!out) throw scgib::IOError("cannot write explanations in " + args.out_dir);
  for (const auto& graph : graphs) {
    const scgib::Explanation explanation = scgib::explain(model, graph, ratio);
    json line;
    line["graph_id"] = explanation.graph_id;
    line["scores"] = explanation.scores;
    line["selected"] = explanation.selected;
    out << line.dump() << "\n";
  }
  std::cout << "explained " << graphs.size() << " graphs\n";
  return 0;
}

int run_eval_jsd(const CommonArgs& args, const std::string& checkpoint_path) {
  const scgib::Checkpoint checkpoint = scgib::load_checkpoint(checkpoint_path);
  json manifest;
  manifest["command"] = "eval-jsd";
  manifest["checkpoint"] = checkpoint_path;
  manifest["data"] = args.data_path;
  manifest["smiles"] = args.smiles;
  manifest["config"] = config_manifest(checkpoint.config);
  auto lock = open_run(args.out_dir, manifest);

  const auto graphs = load_graphs(args.data_path, args.smiles);
  std::vector<int> labels;
  for (const auto& g : graphs) {
    if (!g.label) throw scgib::ValidationError("graph " + g.id + " has no label");
    labels.push_back(static_cast<int>(*g.label));
  }
  const scgib::Matrix embeddings = scgib::embed_graphs(scgib::eval_model(checkpoint), graphs);
  const double jsd = scgib::jsd_distinguishability(embeddings, labels);
  json report;
  report["jsd"] = jsd;
  report["graphs"] = graphs.size();
  write_text(std::filesystem::path(args.out_dir) / "report.json", report.dump(2) + "\n");
  std::cout << "jsd: " << jsd << "\n";
  return 0;
}

int run_gen_synth(int count, const std::string& motif, const std::string& out_path,
                  std::uint64_t seed) {
  const auto corpus = scgib::generate_synthetic_corpus(count, scgib::parse_motif(motif), seed);
  scgib::write_synthetic_corpus(corpus, out_path);
  std::cout << "wrote " << corpus.size() << " graphs to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised graph pre-training with subgraph-aware compression"};
  app.require_subcommand(1);

  CommonArgs pretrain_args;
  CLI::App* pretrain = app.add_subcommand("pretrain", "pre-train on an unlabeled corpus");
  add_common(pretrain, pretrain_args);

  CommonArgs adapt_args;
  std::string adapt_checkpoint;
  CLI::App* adapt = app.add_subcommand("adapt", "attribute-driven domain adaptation");
  adapt->add_option("--checkpoint", adapt_checkpoint, "source checkpoint")->required();
  add_common(adapt, adapt_args);

  CommonArgs embed_args;
  std::string embed_checkpoint;
  CLI::App* embed = app.add_subcommand("embed", "write one embedding per graph");
  embed->add_option("--checkpoint", embed_checkpoint, "trained checkpoint")->required();
  add_common(embed, embed_args);

  CommonArgs finetune_args;
  std::string finetune_checkpoint;
  std::string finetune_task = "auto";
  CLI::App* finetune = app.add_subcommand("finetune", "fit and score a linear probe");
  finetune->add_option("--checkpoint", finetune_checkpoint, "trained checkpoint")->required();
  finetune->add_option("--task", finetune_task, "auto, classification or regression");
  add_common(finetune, finetune_args);

  CommonArgs explain_args;
  std::string explain_checkpoint;
  double explain_ratio = 0.5;
  CLI::App* explain = app.add_subcommand("explain", "rank nodes by attention");
  explain->add_option("--checkpoint", explain_checkpoint, "trained checkpoint")->required();
  explain->add_option("--ratio", explain_ratio, "fraction of nodes to select");
  add_common(explain, explain_args);

  CommonArgs jsd_args;
  std::string jsd_checkpoint;
  CLI::App* eval_jsd = app.add_subcommand("eval-jsd", "class distinguishability of embeddings");
  eval_jsd->add_option("--checkpoint", jsd_checkpoint, "trained checkpoint")->required();
  add_common(eval_jsd, jsd_args);

  int synth_count = 0;
  std::string synth_motif = "triangle";
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  CLI::App* gen_synth = app.add_subcommand("gen-synth", "generate a synthetic motif corpus");
  gen_synth->add_option("--graphs", synth_count, "number of graphs")->required();
  gen_synth->add_option("--motif", synth_motif, "triangle, 4-cycle or star-3");
  gen_synth->add_option("--out", synth_out, "output JSONL file")->required();
  gen_synth->add_option("--seed", synth_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (pretrain->parsed()) return run_pretrain(pretrain_args);
    if (adapt->parsed()) return run_adapt(adapt_args, adapt_checkpoint);
    if (embed->parsed()) return run_embed(embed_args, embed_checkpoint);
    if (finetune->parsed()) return run_finetune(finetune_args, finetune_checkpoint, finetune_task);
    if (explain->parsed()) return run_explain(explain_args, explain_checkpoint, explain_ratio);
    if (eval_jsd->parsed()) return run_eval_jsd(jsd_args, jsd_checkpoint);
    if (gen_synth->parsed()) {
      return run_gen_synth(synth_count, synth_motif, synth_out, synth_seed);
    }
  } catch (const scgib::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

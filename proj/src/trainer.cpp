#include "scgib/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "scgib/model.hpp"

namespace scgib {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Substream salts; fixed so a seed pins every draw in a run.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kShuffleSalt = 2;
constexpr std::uint64_t kNoiseSalt = 3;
constexpr std::uint64_t kAdaptShuffleSalt = 4;
constexpr std::uint64_t kAdaptNoiseSalt = 5;

using json = nlohmann::json;

int checked_input_dim(const std::vector<MolecularGraph>& corpus, const char* what) {
  if (corpus.empty()) throw EmptyInputError(std::string(what) + " is empty");
  const int input_dim = corpus.front().feature_dim();
  for (const MolecularGraph& g : corpus) {
    if (g.feature_dim() != input_dim) {
      throw ValidationError("graph " + g.id + " has feature width " +
                            std::to_string(g.feature_dim()) + ", expected " +
                            std::to_string(input_dim));
    }
  }
  return input_dim;
}

struct BatchSpan {
  int begin = 0;
  int count = 0;
};

std::vector<BatchSpan> batch_spans(int n, int batch_size, bool drop_trailing_singleton) {
  std::vector<BatchSpan> spans;
  for (int begin = 0; begin < n; begin += batch_size) {
    spans.push_back({begin, std::min(batch_size, n - begin)});
  }
  if (drop_trailing_singleton && spans.size() > 1 && spans.back().count == 1) {
    spans.pop_back();
  }
  return spans;
}

double canonical_total(const LossReport& report) {
  double total = (report.con + report.rec) + report.beta * report.mi;
  if (report.zeta != 0.0 && report.zeta_term) total += report.zeta * *report.zeta_term;
  return total;
}

json report_to_json(const LossReport& report) {
  json out;
  out["rec"] = report.rec;
  out["mi"] = report.mi;
  out["con"] = report.con;
  if (report.att) out["att"] = *report.att;
  if (report.zeta_term) out["zeta_term"] = *report.zeta_term;
  out["total"] = report.total;
  out["beta"] = report.beta;
  out["zeta"] = report.zeta;
  return out;
}

const json& require_key(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw DeserializeError(std::string("checkpoint missing key: ") + key);
  return *it;
}

LossReport report_from_json(const json& obj) {
  LossReport report;
  report.rec = require_key(obj, "rec").get<double>();
  report.mi = require_key(obj, "mi").get<double>();
  report.con = require_key(obj, "con").get<double>();
  if (obj.contains("att")) report.att = obj["att"].get<double>();
  if (obj.contains("zeta_term")) report.zeta_term = obj["zeta_term"].get<double>();
  report.total = require_key(obj, "total").get<double>();
  report.beta = require_key(obj, "beta").get<double>();
  report.zeta = require_key(obj, "zeta").get<double>();
  return report;
}

json tensor_to_json(const Matrix& m) {
  json out;
  out["rows"] = static_cast<int>(m.rows());
  out["cols"] = static_cast<int>(m.cols());
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  out["data"] = std::move(data);
  return out;
}

Matrix tensor_from_json(const json& obj, const std::string& name) {
  if (!obj.is_object() || !obj.contains("rows") || !obj.contains("cols") || !obj.contains("data")) {
    throw DeserializeError("malformed tensor for parameter " + name);
  }
  const int rows = obj["rows"].get<int>();
  const int cols = obj["cols"].get<int>();
  const json& data = obj["data"];
  if (rows < 0 || cols < 0 || !data.is_array() ||
      static_cast<int>(data.size()) != rows * cols) {
    throw DeserializeError("tensor shape mismatch for parameter " + name);
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!data[k].is_number()) throw DeserializeError("non-numeric entry in parameter " + name);
      m(r, c) = data[k].get<double>();
      ++k;
    }
  }
  return m;
}

json config_to_json(const TrainConfig& config) {
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

TrainConfig config_from_json(const json& obj) {
  TrainConfig config;
  config.batch_size = require_key(obj, "batch_size").get<int>();
  config.epochs = require_key(obj, "epochs").get<int>();
  config.adapt_epochs = require_key(obj, "adapt_epochs").get<int>();
  config.learning_rate = require_key(obj, "learning_rate").get<double>();
  config.weight_decay = require_key(obj, "weight_decay").get<double>();
  config.beta = require_key(obj, "beta").get<double>();
  config.tau = require_key(obj, "tau").get<double>();
  config.zeta = require_key(obj, "zeta").get<double>();
  config.hop_radius = require_key(obj, "hop_radius").get<int>();
  config.embed_dim = require_key(obj, "embed_dim").get<int>();
  config.num_layers = require_key(obj, "num_layers").get<int>();
  config.pool_mode = require_key(obj, "pool_mode").get<std::string>();
  config.seed = require_key(obj, "seed").get<std::uint64_t>();
  return config;
}

std::vector<bool> adaptation_mask(const EncoderParams& params) {
  std::vector<bool> mask;
  for (const std::string& name : parameter_names(params)) {
    const bool updatable = name.rfind("graph_encoder.", 0) == 0 ||
                           name.rfind("subgraph_encoder.", 0) == 0 ||
                           name.rfind("adaptation_mlp.", 0) == 0;
    mask.push_back(updatable);
  }
  return mask;
}

}  // namespace

AdamState make_adam_state(const EncoderParams& params) {
  AdamState state;
  for_each_parameter(params, [&](const std::string&, const Matrix& m) {
    state.first_moment.push_back(Matrix::Zero(m.rows(), m.cols()));
    state.second_moment.push_back(Matrix::Zero(m.rows(), m.cols()));
  });
  return state;
}

void adam_step(EncoderParams& params, const std::vector<Matrix>& gradients, AdamState& state,
               double learning_rate, double weight_decay,
               const std::vector<bool>& update_mask) {
  const std::vector<std::string> names = parameter_names(params);
  if (gradients.size() != names.size() || state.first_moment.size() != names.size()) {
    throw ShapeError("gradient/optimizer state count does not match the parameter count");
  }
  if (!update_mask.empty() && update_mask.size() != names.size()) {
    throw ShapeError("update mask size does not match the parameter count");
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (!gradients[i].allFinite()) {
      throw NumericalError("non-finite gradient for parameter " + names[i]);
    }
  }
  state.step += 1;
  const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  std::size_t i = 0;
  for_each_parameter(params, [&](const std::string&, Matrix& param) {
    const bool updatable = update_mask.empty() || update_mask[i];
    if (updatable) {
      const Matrix grad = gradients[i] + weight_decay * param;
      Matrix& m = state.first_moment[i];
      Matrix& v = state.second_moment[i];
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
      const Matrix m_hat = m / correction1;
      const Matrix v_hat = v / correction2;
      param.array() -= learning_rate * m_hat.array() / (v_hat.array().sqrt() + kAdamEps);
    }
    ++i;
  });
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_json(checkpoint) << "\n";
  if (!out) throw IOError("failed while writing checkpoint: " + path);
}

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
  json out;
  out["version"] = checkpoint.version;
  out["epoch"] = checkpoint.epoch;
  out["input_dim"] = checkpoint.input_dim;
  out["config"] = config_to_json(checkpoint.config);
  json params = json::object();
  for_each_parameter(checkpoint.params, [&](const std::string& name, const Matrix& m) {
    params[name] = tensor_to_json(m);
  });
  out["params"] = std::move(params);
  json adam;
  adam["step"] = checkpoint.adam.step;
  json first = json::object();
  json second = json::object();
  std::size_t i = 0;
  for_each_parameter(checkpoint.params, [&](const std::string& name, const Matrix&) {
    first[name] = tensor_to_json(checkpoint.adam.first_moment[i]);
    second[name] = tensor_to_json(checkpoint.adam.second_moment[i]);
    ++i;
  });
  adam["first_moment"] = std::move(first);
  adam["second_moment"] = std::move(second);
  out["adam"] = std::move(adam);
  out["metrics"] = report_to_json(checkpoint.last_report);
  return out.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open checkpoint: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DeserializeError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw DeserializeError("checkpoint root is not an object");
  Checkpoint checkpoint;
  checkpoint.version = require_key(obj, "version").get<std::string>();
  if (checkpoint.version != kCheckpointVersion) {
    throw IncompatibleCheckpointError("checkpoint version \"" + checkpoint.version +
                                      "\" is not supported (expected " + kCheckpointVersion + ")");
  }
  try {
    checkpoint.epoch = require_key(obj, "epoch").get<int>();
    checkpoint.input_dim = require_key(obj, "input_dim").get<int>();
    checkpoint.config = config_from_json(require_key(obj, "config"));
    // Rebuild the parameter layout, then overwrite every tensor by name.
    Rng layout_rng(0);
    checkpoint.params = init_encoder_params(checkpoint.input_dim, checkpoint.config.embed_dim,
                                            checkpoint.config.num_layers, layout_rng);
    const json& params = require_key(obj, "params");
    for_each_parameter(checkpoint.params, [&](const std::string& name, Matrix& m) {
      if (!params.contains(name)) throw DeserializeError("checkpoint missing parameter " + name);
      Matrix loaded = tensor_from_json(params[name], name);
      if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
        throw DeserializeError("parameter " + name + " has unexpected shape");
      }
      m = std::move(loaded);
    });
    const json& adam = require_key(obj, "adam");
    checkpoint.adam.step = require_key(adam, "step").get<long>();
    const json& first = require_key(adam, "first_moment");
    const json& second = require_key(adam, "second_moment");
    for_each_parameter(checkpoint.params, [&](const std::string& name, const Matrix& m) {
      if (!first.contains(name) || !second.contains(name)) {
        throw DeserializeError("optimizer state missing parameter " + name);
      }
      Matrix m1 = tensor_from_json(first[name], name);
      Matrix m2 = tensor_from_json(second[name], name);
      if (m1.rows() != m.rows() || m1.cols() != m.cols() || m2.rows() != m.rows() ||
          m2.cols() != m.cols()) {
        throw DeserializeError("optimizer state for " + name + " has unexpected shape");
      }
      checkpoint.adam.first_moment.push_back(std::move(m1));
      checkpoint.adam.second_moment.push_back(std::move(m2));
    });
    checkpoint.last_report = report_from_json(require_key(obj, "metrics"));
  } catch (const json::exception& e) {
    throw DeserializeError(std::string("malformed checkpoint field: ") + e.what());
  }
  return checkpoint;
}

std::string metrics_line(const EpochRecord& record) {
  json out;
  out["epoch"] = record.epoch;
  out["rec"] = record.report.rec;
  out["mi"] = record.report.mi;
  out["con"] = record.report.con;
  if (record.report.att) out["att"] = *record.report.att;
  if (record.report.zeta_term) out["zeta_term"] = *record.report.zeta_term;
  out["total"] = record.report.total;
  out["wall_ms"] = record.wall_ms;
  return out.dump();
}

Checkpoint pretrain(const std::vector<MolecularGraph>& corpus, const TrainConfig& config,
                    const MetricsSink& sink, std::ostream* log) {
  validate_config(config);
  const int input_dim = checked_input_dim(corpus, "pre-training corpus");
  const PoolMode pool = parse_pool_mode(config.pool_mode);
  const int n = static_cast<int>(corpus.size());

  Rng master(config.seed);
  Rng init_rng = master.substream(kInitSalt);
  Rng shuffle_rng = master.substream(kShuffleSalt);
  Rng noise_rng = master.substream(kNoiseSalt);

  EncoderParams params = init_encoder_params(input_dim, config.embed_dim, config.num_layers,
                                             init_rng);
  AdamState adam = make_adam_state(params);

  std::vector<PreparedGraph> prepared;
  prepared.reserve(corpus.size());
  for (const MolecularGraph& g : corpus) prepared.push_back(prepare_graph(g, config.hop_radius));

  std::vector<int> order(n);
  bool warned_drop = false;
  bool warned_single = false;
  LossReport last;
  last.beta = config.beta;
  last.zeta = config.zeta;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    const std::vector<BatchSpan> spans = batch_spans(n, config.batch_size, true);
    if (!warned_drop && log &&
        static_cast<int>(spans.size()) < (n + config.batch_size - 1) / config.batch_size) {
      *log << "warning: dropping a trailing batch of one graph each epoch "
              "(contrastive loss needs at least two)\n";
      warned_drop = true;
    }

    double rec_sum = 0.0, mi_sum = 0.0, con_sum = 0.0, zeta_sum = 0.0;
    for (std::size_t b = 0; b < spans.size(); ++b) {
      try {
        Tape tape;
        BoundEncoderParams bound = bind_parameters(tape, params);
        std::vector<const PreparedGraph*> members;
        members.reserve(spans[b].count);
        for (int k = 0; k < spans[b].count; ++k) {
          members.push_back(&prepared[order[spans[b].begin + k]]);
        }
        PreparedBatch batch = assemble_batch(members);
        ForwardOptions options;
        options.tau = config.tau;
        options.pool = pool;
        ForwardOutcome out = model_forward(tape, bound, batch, options, noise_rng);
        if (out.contrastive_skipped && !warned_single) {
          if (log) *log << "warning: single-graph batch, contrastive term skipped\n";
          warned_single = true;
        }
        Value total = combine_losses(out.losses, config.beta, config.zeta);
        tape.backward(total);
        adam_step(params, collect_gradients(bound), adam, config.learning_rate,
                  config.weight_decay);
        const LossReport report = total_loss(out.losses, config.beta, config.zeta);
        rec_sum += report.rec;
        mi_sum += report.mi;
        con_sum += report.con;
        zeta_sum += report.zeta_term.value_or(0.0);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b + 1) + ": " + e.what());
      }
    }

    const double batches = static_cast<double>(spans.size());
    LossReport report;
    report.beta = config.beta;
    report.zeta = config.zeta;
    report.rec = rec_sum / batches;
    report.mi = mi_sum / batches;
    report.con = con_sum / batches;
    report.zeta_term = zeta_sum / batches;
    report.total = canonical_total(report);
    last = report;

    if (sink) {
      const auto t1 = std::chrono::steady_clock::now();
      const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      sink({epoch, report, wall_ms});
    }
  }

  Checkpoint checkpoint;
  checkpoint.epoch = config.epochs;
  checkpoint.input_dim = input_dim;
  checkpoint.config = config;
  checkpoint.params = std::move(params);
  checkpoint.adam = std::move(adam);
  checkpoint.last_report = last;
  return checkpoint;
}

Checkpoint domain_adapt(const Checkpoint& source, const std::vector<MolecularGraph>& corpus,
                        const TrainConfig& config, const MetricsSink& sink, std::ostream* log) {
  validate_config(config);
  const int input_dim = checked_input_dim(corpus, "adaptation corpus");
  if (input_dim != source.input_dim) {
    throw ValidationError("adaptation corpus feature width " + std::to_string(input_dim) +
                          " does not match the checkpoint (" +
                          std::to_string(source.input_dim) + ")");
  }
  if (config.embed_dim != source.params.embed_dim() ||
      config.num_layers != source.params.num_layers()) {
    throw ValidationError("embed_dim/num_layers differ from the checkpoint architecture");
  }
  if (config.adapt_epochs == 0) return source;

  const PoolMode pool = parse_pool_mode(config.pool_mode);
  const int n = static_cast<int>(corpus.size());

  Rng master(config.seed);
  Rng shuffle_rng = master.substream(kAdaptShuffleSalt);
  Rng noise_rng = master.substream(kAdaptNoiseSalt);

  EncoderParams params = source.params;
  AdamState adam = make_adam_state(params);  // adaptation restarts the optimizer
  const std::vector<bool> mask = adaptation_mask(params);

  std::vector<PreparedGraph> prepared;
  prepared.reserve(corpus.size());
  for (const MolecularGraph& g : corpus) prepared.push_back(prepare_graph(g, config.hop_radius));

  std::vector<int> order(n);
  LossReport last;
  for (int epoch = 1; epoch <= config.adapt_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    // No contrastive precondition here, so every batch is kept.
    const std::vector<BatchSpan> spans = batch_spans(n, config.batch_size, false);

    double rec_sum = 0.0, mi_sum = 0.0, con_sum = 0.0, zeta_sum = 0.0, att_sum = 0.0;
    for (std::size_t b = 0; b < spans.size(); ++b) {
      try {
        Tape tape;
        BoundEncoderParams bound = bind_parameters(tape, params);
        std::vector<const PreparedGraph*> members;
        members.reserve(spans[b].count);
        for (int k = 0; k < spans[b].count; ++k) {
          members.push_back(&prepared[order[spans[b].begin + k]]);
        }
        PreparedBatch batch = assemble_batch(members);
        ForwardOptions options;
        options.tau = config.tau;
        options.pool = pool;
        options.compute_attribute = true;
        ForwardOutcome out = model_forward(tape, bound, batch, options, noise_rng);
        tape.backward(*out.losses.att);
        adam_step(params, collect_gradients(bound), adam, config.learning_rate,
                  config.weight_decay, mask);
        const LossReport report = total_loss(out.losses, config.beta, config.zeta);
        rec_sum += report.rec;
        mi_sum += report.mi;
        con_sum += report.con;
        zeta_sum += report.zeta_term.value_or(0.0);
        att_sum += report.att.value_or(0.0);
      } catch (const NumericalError& e) {
        throw NumericalError("adaptation epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b + 1) + ": " + e.what());
      }
    }

    const double batches = static_cast<double>(spans.size());
    LossReport report;
    report.beta = config.beta;
    report.zeta = config.zeta;
    report.rec = rec_sum / batches;
    report.mi = mi_sum / batches;
    report.con = con_sum / batches;
    report.zeta_term = zeta_sum / batches;
    report.att = att_sum / batches;
    // The attribute loss drives adaptation but stays out of the total.
    report.total = canonical_total(report);
    last = report;

    if (sink) {
      const auto t1 = std::chrono::steady_clock::now();
      const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      sink({epoch, report, wall_ms});
    }
  }
  if (log && config.adapt_epochs > 0) {
    *log << "adaptation finished after " << config.adapt_epochs << " epochs\n";
  }

  Checkpoint result;
  result.epoch = source.epoch + config.adapt_epochs;
  result.input_dim = source.input_dim;
  result.config = config;
  result.params = std::move(params);
  result.adam = std::move(adam);
  result.last_report = last;
  return result;
}

}  // namespace scgib

#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "scgib/config.hpp"
#include "scgib/encoder.hpp"
#include "scgib/graph.hpp"
#include "scgib/objectives.hpp"

// Optimization: Adam over the canonical parameter walk, the self-supervised
// pre-training loop, attribute-driven domain adaptation, and JSON
// checkpoints that round-trip bitwise.

namespace scgib {

inline constexpr const char* kCheckpointVersion = "scgib.ckpt.v1";

// Moment buffers aligned with parameter_names order.
struct AdamState {
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

AdamState make_adam_state(const EncoderParams& params);

// Classic Adam (beta1 0.9, beta2 0.999, eps 1e-8) with L2-coupled decay:
// weight_decay * param joins the gradient before the moment update. A
// non-finite gradient raises NumericalError. update_mask (empty = all)
// freezes both the parameter and its moments when false.
void adam_step(EncoderParams& params, const std::vector<Matrix>& gradients, AdamState& state,
               double learning_rate, double weight_decay,
               const std::vector<bool>& update_mask = {});

struct EpochRecord {
  int epoch = 0;  // 1-based within its phase
  LossReport report;
  double wall_ms = 0.0;
};

using MetricsSink = std::function<void(const EpochRecord&)>;

struct Checkpoint {
  std::string version = kCheckpointVersion;
  int epoch = 0;
  int input_dim = 0;
  TrainConfig config;
  EncoderParams params;
  AdamState adam;
  LossReport last_report;
};

// One JSON document; identical checkpoints serialize to identical bytes.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
std::string checkpoint_to_json(const Checkpoint& checkpoint);

// DeserializeError on malformed or truncated input,
// IncompatibleCheckpointError on a version tag mismatch.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint checkpoint_from_json(const std::string& text);

// One JSON object per epoch: epoch, loss terms, total, wall_ms.
std::string metrics_line(const EpochRecord& record);

// Self-supervised pre-training. Per epoch: seeded shuffle, fixed-size
// batches (a trailing batch of 1 is dropped unless the corpus itself has a
// single graph), forward, backward, one Adam step per batch. The sink
// receives one record per epoch. NumericalError aborts with epoch/batch
// context.
Checkpoint pretrain(const std::vector<MolecularGraph>& corpus, const TrainConfig& config,
                    const MetricsSink& sink = {}, std::ostream* log = nullptr);

// Attribute-reconstruction adaptation on a new corpus: minimizes the
// attribute loss alone, updating only the two encoders and the adaptation
// head, with fresh optimizer state. config supplies the optimization knobs;
// its structure must match the checkpoint. adapt_epochs = 0 returns the
// checkpoint unchanged.
Checkpoint domain_adapt(const Checkpoint& source, const std::vector<MolecularGraph>& corpus,
                        const TrainConfig& config, const MetricsSink& sink = {},
                        std::ostream* log = nullptr);

}  // namespace scgib

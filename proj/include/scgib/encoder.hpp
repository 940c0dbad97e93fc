#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scgib/graph.hpp"
#include "scgib/tensor.hpp"

// GIN encoders for whole graphs and ego-network candidates, pooling, and the
// attention interaction fusing the compressed core with candidate summaries.

namespace scgib {

enum class PoolMode { kSum, kMean, kMax };

PoolMode parse_pool_mode(const std::string& name);  // "sum" | "mean" | "max"
std::string pool_mode_name(PoolMode mode);

// One GIN layer: h'_i = MLP((1+eps) h_i + sum of neighbor rows), MLP being
// affine -> ReLU -> affine. eps starts at 0 and is learned as a 1x1 matrix.
struct GinLayerParams {
  Matrix eps;  // 1x1
  Matrix w1, b1, w2, b2;
};

// Affine -> ReLU -> affine head used for compression (d -> d -> 1) and
// attribute adaptation (2d -> d -> d_in).
struct MlpParams {
  Matrix w1, b1, w2, b2;
};

struct EncoderParams {
  std::vector<GinLayerParams> graph_encoder;     // f over the whole graph
  std::vector<GinLayerParams> subgraph_encoder;  // g over ego networks
  Matrix attention_weight;                       // 1 x 2d
  MlpParams compression_mlp;
  MlpParams adaptation_mlp;

  int embed_dim() const { return static_cast<int>(attention_weight.cols()) / 2; }
  int num_layers() const { return static_cast<int>(graph_encoder.size()); }
};

// Glorot-uniform weights, zero biases and eps; draws come from rng in
// enumeration order, so one seed pins the whole initialization.
EncoderParams init_encoder_params(int input_dim, int embed_dim, int num_layers, Rng& rng);

// Canonical parameter walk: fixed name/order contract shared by the tape
// binding, the optimizer state and the checkpoint format.
void for_each_parameter(EncoderParams& params,
                        const std::function<void(const std::string&, Matrix&)>& fn);
void for_each_parameter(const EncoderParams& params,
                        const std::function<void(const std::string&, const Matrix&)>& fn);

// Tape-bound mirror of the parameter structs.
struct BoundGinLayer {
  Value eps, w1, b1, w2, b2;
};

struct BoundMlp {
  Value w1, b1, w2, b2;
};

struct BoundEncoderParams {
  std::vector<BoundGinLayer> graph_encoder;
  std::vector<BoundGinLayer> subgraph_encoder;
  Value attention_weight;
  BoundMlp compression_mlp;
  BoundMlp adaptation_mlp;
};

// Leaves for every parameter, in for_each_parameter order.
BoundEncoderParams bind_parameters(Tape& tape, const EncoderParams& params,
                                   bool requires_grad = true);

// Gradients read back in the same order; zero matrices where a parameter
// did not participate. Call after Tape::backward.
std::vector<Matrix> collect_gradients(const BoundEncoderParams& bound);

// Parameter names in enumeration order (shape source for the optimizer).
std::vector<std::string> parameter_names(const EncoderParams& params);

Value mlp_forward(const BoundMlp& mlp, const Value& x);

Value gin_layer(const BoundGinLayer& layer, const Value& h,
                const std::vector<std::vector<int>>& neighbors);

Value encode_graph(const std::vector<BoundGinLayer>& layers, const Value& x,
                   const std::vector<std::vector<int>>& neighbors);

// Column-wise reduction of all rows to a single 1xd row.
Value pool(const Value& h, PoolMode mode);

// Per-segment pooling (segments sorted, one per row).
Value pool_segments(const Value& h, const std::vector<int>& segment_ids, int num_segments,
                    PoolMode mode);

// Every ego network of every root, stacked into one node list so the
// subgraph encoder runs once per batch instead of once per root.
struct EgoStack {
  std::vector<int> member_rows;             // row in the parent feature matrix
  std::vector<int> segments;                // root index per stacked node, sorted
  std::vector<std::vector<int>> neighbors;  // adjacency local to the stack
  int num_roots = 0;
};

EgoStack build_ego_stack(const EgoNetworkSet& set);

// Appends `next`, shifting feature rows by row_offset and roots after the
// existing ones (used to assemble a batch-level stack).
void append_ego_stack(EgoStack& stack, const EgoStack& next, int row_offset);

// Rows of the candidate summary matrix H_S: encode each root's ego network
// from raw features and pool over its members.
Value encode_subgraphs(const std::vector<BoundGinLayer>& layers, const Value& x,
                       const EgoStack& stack, PoolMode mode);

struct AttentionOutcome {
  Value alpha;  // N x 1, sums to 1 per graph
  Value fused;  // N x 2d, row i = Z_i || alpha_i * H_S_i
};

// Scores each candidate against its graph's summed core and fuses the two
// representations.
AttentionOutcome attention_interaction(const Value& core, const Value& candidates,
                                       const Value& attention_weight,
                                       const std::vector<int>& segment_ids, int num_graphs);

}  // namespace scgib

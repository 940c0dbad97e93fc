#include "scgib/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace scgib {

namespace {

Matrix glorot(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return (rng.uniform_matrix(fan_in, fan_out).array() * 2.0 - 1.0).matrix() * limit;
}

GinLayerParams init_gin_layer(Rng& rng, int d_in, int d) {
  GinLayerParams layer;
  layer.eps = Matrix::Zero(1, 1);
  layer.w1 = glorot(rng, d_in, d);
  layer.b1 = Matrix::Zero(1, d);
  layer.w2 = glorot(rng, d, d);
  layer.b2 = Matrix::Zero(1, d);
  return layer;
}

MlpParams init_mlp(Rng& rng, int d_in, int d_hidden, int d_out) {
  MlpParams mlp;
  mlp.w1 = glorot(rng, d_in, d_hidden);
  mlp.b1 = Matrix::Zero(1, d_hidden);
  mlp.w2 = glorot(rng, d_hidden, d_out);
  mlp.b2 = Matrix::Zero(1, d_out);
  return mlp;
}

template <typename Params, typename Fn>
void walk_parameters(Params& params, const Fn& fn) {
  auto walk_stack = [&](const std::string& prefix, auto& stack) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
      const std::string base = prefix + "." + std::to_string(l) + ".";
      fn(base + "eps", stack[l].eps);
      fn(base + "w1", stack[l].w1);
      fn(base + "b1", stack[l].b1);
      fn(base + "w2", stack[l].w2);
      fn(base + "b2", stack[l].b2);
    }
  };
  auto walk_mlp = [&](const std::string& prefix, auto& mlp) {
    fn(prefix + ".w1", mlp.w1);
    fn(prefix + ".b1", mlp.b1);
    fn(prefix + ".w2", mlp.w2);
    fn(prefix + ".b2", mlp.b2);
  };
  walk_stack("graph_encoder", params.graph_encoder);
  walk_stack("subgraph_encoder", params.subgraph_encoder);
  fn("attention_weight", params.attention_weight);
  walk_mlp("compression_mlp", params.compression_mlp);
  walk_mlp("adaptation_mlp", params.adaptation_mlp);
}

}  // namespace

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "sum") return PoolMode::kSum;
  if (name == "mean") return PoolMode::kMean;
  if (name == "max") return PoolMode::kMax;
  throw ValidationError("unknown pool mode: " + name);
}

std::string pool_mode_name(PoolMode mode) {
  switch (mode) {
    case PoolMode::kSum:
      return "sum";
    case PoolMode::kMean:
      return "mean";
    default:
      return "max";
  }
}

EncoderParams init_encoder_params(int input_dim, int embed_dim, int num_layers, Rng& rng) {
  if (input_dim < 1 || embed_dim < 1 || num_layers < 1) {
    throw ValidationError("encoder dimensions and depth must be positive");
  }
  EncoderParams params;
  for (int l = 0; l < num_layers; ++l) {
    params.graph_encoder.push_back(init_gin_layer(rng, l == 0 ? input_dim : embed_dim, embed_dim));
  }
  for (int l = 0; l < num_layers; ++l) {
    params.subgraph_encoder.push_back(
        init_gin_layer(rng, l == 0 ? input_dim : embed_dim, embed_dim));
  }
  params.attention_weight = glorot(rng, 1, 2 * embed_dim);
  params.compression_mlp = init_mlp(rng, embed_dim, embed_dim, 1);
  params.adaptation_mlp = init_mlp(rng, 2 * embed_dim, embed_dim, input_dim);
  return params;
}

void for_each_parameter(EncoderParams& params,
                        const std::function<void(const std::string&, Matrix&)>& fn) {
  walk_parameters(params, fn);
}

void for_each_parameter(const EncoderParams& params,
                        const std::function<void(const std::string&, const Matrix&)>& fn) {
  walk_parameters(params, fn);
}

BoundEncoderParams bind_parameters(Tape& tape, const EncoderParams& params, bool requires_grad) {
  std::map<std::string, Value> leaves;
  for_each_parameter(params, [&](const std::string& name, const Matrix& m) {
    leaves.emplace(name, tape.leaf(m, requires_grad));
  });

  BoundEncoderParams bound;
  auto bind_stack = [&](const std::string& prefix, std::size_t count) {
    std::vector<BoundGinLayer> stack;
    for (std::size_t l = 0; l < count; ++l) {
      const std::string base = prefix + "." + std::to_string(l) + ".";
      stack.push_back(BoundGinLayer{leaves.at(base + "eps"), leaves.at(base + "w1"),
                                    leaves.at(base + "b1"), leaves.at(base + "w2"),
                                    leaves.at(base + "b2")});
    }
    return stack;
  };
  auto bind_mlp = [&](const std::string& prefix) {
    return BoundMlp{leaves.at(prefix + ".w1"), leaves.at(prefix + ".b1"),
                    leaves.at(prefix + ".w2"), leaves.at(prefix + ".b2")};
  };
  bound.graph_encoder = bind_stack("graph_encoder", params.graph_encoder.size());
  bound.subgraph_encoder = bind_stack("subgraph_encoder", params.subgraph_encoder.size());
  bound.attention_weight = leaves.at("attention_weight");
  bound.compression_mlp = bind_mlp("compression_mlp");
  bound.adaptation_mlp = bind_mlp("adaptation_mlp");
  return bound;
}

std::vector<Matrix> collect_gradients(const BoundEncoderParams& bound) {
  std::vector<Matrix> grads;
  auto take = [&](const Value& v) {
    if (v.grad().size() == 0) {
      grads.push_back(Matrix::Zero(v.rows(), v.cols()));
    } else {
      grads.push_back(v.grad());
    }
  };
  auto take_stack = [&](const std::vector<BoundGinLayer>& stack) {
    for (const BoundGinLayer& l : stack) {
      take(l.eps);
      take(l.w1);
      take(l.b1);
      take(l.w2);
      take(l.b2);
    }
  };
  take_stack(bound.graph_encoder);
  take_stack(bound.subgraph_encoder);
  take(bound.attention_weight);
  for (const BoundMlp* mlp : {&bound.compression_mlp, &bound.adaptation_mlp}) {
    take(mlp->w1);
    take(mlp->b1);
    take(mlp->w2);
    take(mlp->b2);
  }
  return grads;
}

std::vector<std::string> parameter_names(const EncoderParams& params) {
  std::vector<std::string> names;
  for_each_parameter(params,
                     [&](const std::string& name, const Matrix&) { names.push_back(name); });
  return names;
}

Value mlp_forward(const BoundMlp& mlp, const Value& x) {
  Value hidden = relu(add(matmul(x, mlp.w1), mlp.b1));
  return add(matmul(hidden, mlp.w2), mlp.b2);
}

Value gin_layer(const BoundGinLayer& layer, const Value& h,
                const std::vector<std::vector<int>>& neighbors) {
  // (1 + eps) h_i + sum over neighbors
  Value self = add(h, mul(h, layer.eps));
  Value agg = add(self, neighbor_sum(h, neighbors));
  Value hidden = relu(add(matmul(agg, layer.w1), layer.b1));
  return add(matmul(hidden, layer.w2), layer.b2);
}

Value encode_graph(const std::vector<BoundGinLayer>& layers, const Value& x,
                   const std::vector<std::vector<int>>& neighbors) {
  if (layers.empty()) throw ValidationError("encode_graph: no layers");
  Value h = x;
  for (const BoundGinLayer& layer : layers) h = gin_layer(layer, h, neighbors);
  return h;
}

Value pool(const Value& h, PoolMode mode) {
  if (h.rows() == 0) throw EmptyInputError("pool: no rows");
  switch (mode) {
    case PoolMode::kSum:
      return sum(h, 0);
    case PoolMode::kMean:
      return mean(h, 0);
    default:
      return segment_max(h, std::vector<int>(static_cast<std::size_t>(h.rows()), 0), 1);
  }
}

Value pool_segments(const Value& h, const std::vector<int>& segment_ids, int num_segments,
                    PoolMode mode) {
  switch (mode) {
    case PoolMode::kSum:
      return segment_sum(h, segment_ids, num_segments);
    case PoolMode::kMean:
      return segment_mean(h, segment_ids, num_segments);
    default:
      return segment_max(h, segment_ids, num_segments);
  }
}

EgoStack build_ego_stack(const EgoNetworkSet& set) {
  EgoStack stack;
  stack.num_roots = static_cast<int>(set.networks.size());
  int base = 0;
  for (int root = 0; root < stack.num_roots; ++root) {
    const EgoNetwork& ego = set.networks[static_cast<std::size_t>(root)];
    const int m = static_cast<int>(ego.members.size());
    for (int a = 0; a < m; ++a) {
      stack.member_rows.push_back(ego.members[static_cast<std::size_t>(a)]);
      stack.segments.push_back(root);
      std::vector<int> local;
      for (int b = 0; b < m; ++b) {
        if (ego.induced_adjacency(a, b) != 0.0) local.push_back(base + b);
      }
      stack.neighbors.push_back(std::move(local));
    }
    base += m;
  }
  return stack;
}

void append_ego_stack(EgoStack& stack, const EgoStack& next, int row_offset) {
  const int node_offset = static_cast<int>(stack.member_rows.size());
  const int root_offset = stack.num_roots;
  for (int row : next.member_rows) stack.member_rows.push_back(row + row_offset);
  for (int seg : next.segments) stack.segments.push_back(seg + root_offset);
  for (const std::vector<int>& local : next.neighbors) {
    std::vector<int> shifted;
    shifted.reserve(local.size());
    for (int j : local) shifted.push_back(j + node_offset);
    stack.neighbors.push_back(std::move(shifted));
  }
  stack.num_roots += next.num_roots;
}

Value encode_subgraphs(const std::vector<BoundGinLayer>& layers, const Value& x,
                       const EgoStack& stack, PoolMode mode) {
  if (layers.empty()) throw ValidationError("encode_subgraphs: no layers");
  for (int row : stack.member_rows) {
    if (row < 0 || row >= x.rows()) {
      throw ValidationError("encode_subgraphs: member row " + std::to_string(row) +
                            " outside the feature matrix");
    }
  }
  Value gathered = slice_rows(x, stack.member_rows);
  Value h = encode_graph(layers, gathered, stack.neighbors);
  return pool_segments(h, stack.segments, stack.num_roots, mode);
}

AttentionOutcome attention_interaction(const Value& core, const Value& candidates,
                                       const Value& attention_weight,
                                       const std::vector<int>& segment_ids, int num_graphs) {
  if (core.rows() != candidates.rows() || core.cols() != candidates.cols()) {
    throw ShapeError("attention_interaction: core and candidate shapes differ");
  }
  if (attention_weight.rows() != 1 || attention_weight.cols() != 2 * core.cols()) {
    throw ShapeError("attention_interaction: projection must be 1 x 2d");
  }
  // summed core per graph, repeated onto its nodes
  Value core_summary = segment_sum(core, segment_ids, num_graphs);
  Value per_node_summary = slice_rows(core_summary, segment_ids);
  Value logits = matmul(concat(per_node_summary, candidates, 1), transpose(attention_weight));
  AttentionOutcome out;
  out.alpha = segmented_softmax(logits, segment_ids);
  out.fused = concat(core, mul(candidates, out.alpha), 1);
  return out;
}

}  // namespace scgib

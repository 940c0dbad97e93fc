#include "scgib/graph.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <map>

#include <json.hpp>

namespace scgib {

namespace {

using nlohmann::json;

void check_edge(int i, int j, int n, const char* field) {
  if (i < 0 || i >= n || j < 0 || j >= n) {
    throw ValidationError(std::string(field) + ": edge index out of range [0, " +
                          std::to_string(n) + "): [" + std::to_string(i) + ", " +
                          std::to_string(j) + "]");
  }
  if (i == j) {
    throw ValidationError(std::string(field) + ": self-loop edge at node " + std::to_string(i));
  }
}

constexpr std::array<const char*, 10> kAtomSymbols = {"B", "C",  "N",  "O", "P",
                                                      "S", "F", "Cl", "Br", "I"};

}  // namespace

std::vector<std::vector<int>> neighbor_lists(const MolecularGraph& graph) {
  const int n = graph.num_nodes();
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (graph.adjacency(i, j) != 0.0) out[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  return out;
}

MolecularGraph make_graph(std::string id, Matrix node_features,
                          const std::vector<std::pair<int, int>>& edges,
                          std::optional<double> label, std::vector<double> edge_orders) {
  const int n = static_cast<int>(node_features.rows());
  if (n < 1) throw ValidationError("x: graph must have at least one node");
  if (node_features.cols() < 1) throw ValidationError("x: feature dimension must be at least 1");
  if (!edge_orders.empty() && edge_orders.size() != edges.size()) {
    throw ValidationError("edges: bond order list length does not match edge list");
  }

  MolecularGraph g;
  g.id = std::move(id);
  g.node_features = std::move(node_features);
  g.adjacency = Matrix::Zero(n, n);
  g.label = label;

  std::map<std::pair<int, int>, double> unique;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [i, j] = edges[e];
    check_edge(i, j, n, "edges");
    auto key = std::minmax(i, j);
    double order = edge_orders.empty() ? 1.0 : edge_orders[e];
    unique[{key.first, key.second}] = order;
  }
  for (const auto& [pair, order] : unique) {
    g.edges.push_back(pair);
    g.edge_orders.push_back(order);
    g.adjacency(pair.first, pair.second) = 1.0;
    g.adjacency(pair.second, pair.first) = 1.0;
  }
  return g;
}

MolecularGraph parse_graph_record(const std::string& text_line) {
  json record;
  try {
    record = json::parse(text_line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!record.is_object()) throw ParseError("record is not a JSON object");
  if (!record.contains("id") || !record["id"].is_string()) {
    throw ParseError("missing or non-string \"id\"");
  }
  if (!record.contains("x") || !record["x"].is_array()) {
    throw ParseError("missing or non-array \"x\"");
  }
  if (!record.contains("edges") || !record["edges"].is_array()) {
    throw ParseError("missing or non-array \"edges\"");
  }

  const auto& x = record["x"];
  const int n = static_cast<int>(x.size());
  if (n == 0) throw ValidationError("x: graph must have at least one node");
  if (!x[0].is_array() || x[0].empty()) throw ValidationError("x: rows must be non-empty arrays");
  const int d = static_cast<int>(x[0].size());
  Matrix features(n, d);
  for (int i = 0; i < n; ++i) {
    if (!x[i].is_array() || static_cast<int>(x[i].size()) != d) {
      throw ValidationError("x: ragged feature rows (row " + std::to_string(i) + ")");
    }
    for (int j = 0; j < d; ++j) {
      if (!x[i][j].is_number()) {
        throw ValidationError("x: non-numeric entry at row " + std::to_string(i));
      }
      features(i, j) = x[i][j].get<double>();
    }
  }

  std::vector<std::pair<int, int>> edges;
  for (const auto& e : record["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw ValidationError("edges: each edge must be a pair of integers");
    }
    edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  }

  std::optional<double> label;
  if (record.contains("y") && !record["y"].is_null()) {
    if (!record["y"].is_number()) throw ValidationError("y: label must be numeric");
    label = record["y"].get<double>();
  }
  return make_graph(record["id"].get<std::string>(), std::move(features), edges, label);
}

int atom_type_index(const std::string& symbol) {
  for (std::size_t i = 0; i < kAtomSymbols.size(); ++i) {
    if (symbol == kAtomSymbols[i]) return static_cast<int>(i);
  }
  return -1;
}

MolecularGraph parse_smiles_subset(const std::string& text) {
  std::vector<int> atom_types;
  std::vector<std::pair<int, int>> edges;
  std::vector<double> orders;
  std::vector<int> branch_stack;
  // ring digit -> (open atom, bond order written at the opening, or 0)
  std::map<char, std::pair<int, double>> open_rings;
  int prev = -1;
  double pending = 0.0;  // bond order awaiting its target; 0 = unset

  auto attach = [&](int atom) {
    if (prev >= 0) {
      edges.emplace_back(prev, atom);
      orders.push_back(pending == 0.0 ? 1.0 : pending);
    } else if (pending != 0.0) {
      throw ParseError("bond symbol with no preceding atom");
    }
    pending = 0.0;
    prev = atom;
  };

  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (c == '(') {
      if (prev < 0) throw ParseError("branch before any atom");
      branch_stack.push_back(prev);
      continue;
    }
    if (c == ')') {
      if (branch_stack.empty()) throw ParseError("unmatched \")\"");
      if (pending != 0.0) throw ParseError("bond symbol before \")\"");
      prev = branch_stack.back();
      branch_stack.pop_back();
      continue;
    }
    if (c == '-' || c == '=' || c == '#') {
      if (pending != 0.0) throw ParseError("consecutive bond symbols");
      pending = c == '-' ? 1.0 : c == '=' ? 2.0 : 3.0;
      continue;
    }
    if (c >= '1' && c <= '9') {
      if (prev < 0) throw ParseError("ring closure before any atom");
      auto it = open_rings.find(c);
      if (it == open_rings.end()) {
        open_rings.emplace(c, std::make_pair(prev, pending));
        pending = 0.0;
      } else {
        auto [other, open_order] = it->second;
        open_rings.erase(it);
        if (other == prev) throw ParseError("ring closure to the same atom");
        double order = pending != 0.0 ? pending : (open_order != 0.0 ? open_order : 1.0);
        edges.emplace_back(other, prev);
        orders.push_back(order);
        pending = 0.0;
      }
      continue;
    }
    if (c >= 'A' && c <= 'Z') {
      std::string symbol(1, c);
      if (pos + 1 < text.size()) {
        std::string two = symbol + text[pos + 1];
        if (atom_type_index(two) >= 0) {
          symbol = two;
          ++pos;
        }
      }
      int type = atom_type_index(symbol);
      if (type < 0) {
        throw UnsupportedTokenError("unsupported atom symbol \"" + symbol + "\"", pos);
      }
      atom_types.push_back(type);
      attach(static_cast<int>(atom_types.size()) - 1);
      continue;
    }
    throw UnsupportedTokenError(std::string("unsupported character \"") + c + "\"", pos);
  }

  if (!branch_stack.empty()) throw ParseError("unmatched \"(\"");
  if (!open_rings.empty()) {
    throw ParseError(std::string("unclosed ring digit \"") + open_rings.begin()->first + "\"");
  }
  if (pending != 0.0) throw ParseError("trailing bond symbol");
  if (atom_types.empty()) throw ParseError("no atoms");

  const int n = static_cast<int>(atom_types.size());
  Matrix features = Matrix::Zero(n, static_cast<Eigen::Index>(kAtomSymbols.size()));
  for (int i = 0; i < n; ++i) features(i, atom_types[static_cast<std::size_t>(i)]) = 1.0;
  return make_graph(text, std::move(features), edges, std::nullopt, std::move(orders));
}

EgoNetwork ego_network(const MolecularGraph& graph, int root, int k) {
  const int n = graph.num_nodes();
  if (root < 0 || root >= n) {
    throw IndexError("ego_network: root " + std::to_string(root) + " out of range [0, " +
                     std::to_string(n) + ")");
  }
  if (k < 0) throw ValidationError("ego_network: negative hop radius");

  std::vector<int> depth(static_cast<std::size_t>(n), -1);
  std::deque<int> frontier{root};
  depth[static_cast<std::size_t>(root)] = 0;
  auto nbr = neighbor_lists(graph);
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop_front();
    if (depth[static_cast<std::size_t>(u)] == k) continue;
    for (int v : nbr[static_cast<std::size_t>(u)]) {
      if (depth[static_cast<std::size_t>(v)] < 0) {
        depth[static_cast<std::size_t>(v)] = depth[static_cast<std::size_t>(u)] + 1;
        frontier.push_back(v);
      }
    }
  }

  EgoNetwork ego;
  ego.root = root;
  for (int v = 0; v < n; ++v) {
    if (depth[static_cast<std::size_t>(v)] >= 0) ego.members.push_back(v);
  }
  const int m = static_cast<int>(ego.members.size());
  ego.induced_adjacency = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      ego.induced_adjacency(a, b) = graph.adjacency(ego.members[static_cast<std::size_t>(a)],
                                                    ego.members[static_cast<std::size_t>(b)]);
    }
  }
  return ego;
}

EgoNetworkSet ego_network_set(const MolecularGraph& graph, int k) {
  EgoNetworkSet set;
  set.hop_radius = k;
  set.networks.reserve(static_cast<std::size_t>(graph.num_nodes()));
  for (int v = 0; v < graph.num_nodes(); ++v) {
    set.networks.push_back(ego_network(graph, v, k));
  }
  return set;
}

MolecularGraph induced_subgraph(const MolecularGraph& graph, const std::vector<int>& nodes) {
  if (nodes.empty()) throw EmptyInputError("induced_subgraph: empty node set");
  const int n = graph.num_nodes();
  std::vector<int> sorted = nodes;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> local(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    int v = sorted[i];
    if (v < 0 || v >= n) {
      throw IndexError("induced_subgraph: node " + std::to_string(v) + " out of range");
    }
    local[static_cast<std::size_t>(v)] = static_cast<int>(i);
  }

  const int m = static_cast<int>(sorted.size());
  Matrix features(m, graph.node_features.cols());
  for (int i = 0; i < m; ++i) {
    features.row(i) = graph.node_features.row(sorted[static_cast<std::size_t>(i)]);
  }
  std::vector<std::pair<int, int>> edges;
  std::vector<double> orders;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    auto [i, j] = graph.edges[e];
    int li = local[static_cast<std::size_t>(i)];
    int lj = local[static_cast<std::size_t>(j)];
    if (li >= 0 && lj >= 0) {
      edges.emplace_back(li, lj);
      orders.push_back(graph.edge_orders.empty() ? 1.0 : graph.edge_orders[e]);
    }
  }
  return make_graph(graph.id, std::move(features), edges, graph.label, std::move(orders));
}

GraphBatch make_batch(const std::vector<MolecularGraph>& graphs) {
  if (graphs.empty()) throw EmptyBatchError("make_batch: no graphs");
  const Eigen::Index d = graphs.front().node_features.cols();
  int total = 0;
  for (const MolecularGraph& g : graphs) {
    if (g.node_features.cols() != d) {
      throw ValidationError("make_batch: feature dimension mismatch (" +
                            std::to_string(g.node_features.cols()) + " vs " + std::to_string(d) +
                            ")");
    }
    total += g.num_nodes();
  }

  GraphBatch batch;
  batch.graphs = graphs;
  batch.node_offsets.reserve(graphs.size() + 1);
  batch.block_adjacency = Matrix::Zero(total, total);
  batch.stacked_features = Matrix(total, d);
  int at = 0;
  for (const MolecularGraph& g : graphs) {
    batch.node_offsets.push_back(at);
    const int n = g.num_nodes();
    batch.block_adjacency.block(at, at, n, n) = g.adjacency;
    batch.stacked_features.middleRows(at, n) = g.node_features;
    at += n;
  }
  batch.node_offsets.push_back(total);
  return batch;
}

namespace {

template <typename ParseLine>
auto load_lines(const std::string& path, ParseLine&& parse_line) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open file: " + path);
  std::vector<MolecularGraph> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_line(line));
    } catch (const Error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<MolecularGraph> load_jsonl_graphs(const std::string& path) {
  return load_lines(path, [](const std::string& line) { return parse_graph_record(line); });
}

std::vector<MolecularGraph> load_smiles_file(const std::string& path) {
  return load_lines(path, [](const std::string& line) {
    std::string body = line;
    if (!body.empty() && body.back() == '\r') body.pop_back();
    std::optional<double> label;
    auto tab = body.find('\t');
    if (tab != std::string::npos) {
      std::string tail = body.substr(tab + 1);
      body = body.substr(0, tab);
      try {
        label = std::stod(tail);
      } catch (const std::exception&) {
        throw ParseError("label is not numeric: \"" + tail + "\"");
      }
    }
    MolecularGraph g = parse_smiles_subset(body);
    g.label = label;
    return g;
  });
}

}  // namespace scgib

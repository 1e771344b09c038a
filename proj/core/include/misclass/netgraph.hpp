#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/stats.hpp"

namespace misclass {

inline constexpr double kDefaultTheta = 0.3;

struct Edge {
  std::size_t from = 0;  // correct class
  std::size_t to = 0;    // misclassified class
  double weight = 0.0;   // v_{to|from}
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed graph over classes; edge i->j iff i != j and v_{j|i} >= theta.
/// Edges are kept sorted by (from, to).
struct MisclassNetwork {
  std::size_t num_classes = 0;
  double theta = kDefaultTheta;
  std::string model_id;
  std::vector<Edge> edges;

  bool has_edge(std::size_t from, std::size_t to) const;
};

MisclassNetwork build_network(const RateTable& rates, double theta = kDefaultTheta,
                              const std::string& model_id = "");

/// d_i = sum of weights of edges j -> i.
std::vector<double> in_degrees(const MisclassNetwork& network);

using ClassPair = std::pair<std::size_t, std::size_t>;

struct SymmetryReport {
  std::set<ClassPair> symmetric;      // unordered pairs {i, j} stored as (min, max)
  std::vector<Edge> asymmetric;       // edges whose reverse is absent
};

SymmetryReport symmetric_pairs(const MisclassNetwork& network);

struct ConsistencyReport {
  std::set<ClassPair> common;                  // edges present in every network
  std::map<ClassPair, std::size_t> presence;   // edge -> number of networks containing it
};

ConsistencyReport consistent_edges(std::span<const MisclassNetwork> networks);

/// Graphviz text; nodes in class order, edges sorted, labels at 3 decimals.
std::string export_dot(const MisclassNetwork& network, const std::vector<std::string>& names = {});

/// {nodes, edges[{from,to,weight}], theta, model_id, in_degrees}
nlohmann::json to_json(const MisclassNetwork& network);

}  // namespace misclass

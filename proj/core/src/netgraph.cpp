#include "misclass/netgraph.hpp"

#include <algorithm>
#include <sstream>

#include "format.hpp"

namespace misclass {

bool MisclassNetwork::has_edge(std::size_t from, std::size_t to) const {
  return std::any_of(edges.begin(), edges.end(), [&](const Edge& e) { return e.from == from && e.to == to; });
}

MisclassNetwork build_network(const RateTable& rates, double theta, const std::string& model_id) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw Error(Errc::invalid_argument, "theta must lie in [0,1]");
  MisclassNetwork net{rates.num_classes, theta, model_id, {}};
  for (std::size_t i = 0; i < rates.num_classes; ++i) {
    for (std::size_t j = 0; j < rates.num_classes; ++j) {
      if (i == j) continue;
      const double w = rates.cond(i, j);
      // theta = 0 keeps every nonzero entry, not the structural zeros.
      if (w >= theta && w > 0.0) net.edges.push_back({i, j, w});
    }
  }
  return net;
}

std::vector<double> in_degrees(const MisclassNetwork& network) {
  std::vector<double> d(network.num_classes, 0.0);
  for (const auto& e : network.edges) d[e.to] += e.weight;
  return d;
}

SymmetryReport symmetric_pairs(const MisclassNetwork& network) {
  SymmetryReport out;
  for (const auto& e : network.edges) {
    if (network.has_edge(e.to, e.from)) {
      out.symmetric.insert({std::min(e.from, e.to), std::max(e.from, e.to)});
    } else {
      out.asymmetric.push_back(e);
    }
  }
  return out;
}

ConsistencyReport consistent_edges(std::span<const MisclassNetwork> networks) {
  ConsistencyReport out;
  if (networks.empty()) return out;
  for (const auto& n : networks) {
    if (n.num_classes != networks.front().num_classes) {
      throw Error(Errc::shape_mismatch, "networks have different class counts");
    }
    for (const auto& e : n.edges) ++out.presence[{e.from, e.to}];
  }
  for (const auto& [edge, count] : out.presence) {
    if (count == networks.size()) out.common.insert(edge);
  }
  return out;
}

std::string export_dot(const MisclassNetwork& network, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "digraph misclassification {\n";
  out << "  // model: " << (network.model_id.empty() ? "-" : network.model_id)
      << ", theta: " << detail::fmt_fixed(network.theta, 3) << "\n";
  for (std::size_t i = 0; i < network.num_classes; ++i) {
    const std::string label = i < names.size() ? names[i] : std::to_string(i);
    out << "  " << i << " [label=\"" << label << "\"];\n";
  }
  for (const auto& e : network.edges) {
    out << "  " << e.from << " -> " << e.to << " [label=\"" << detail::fmt_fixed(e.weight, 3) << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

nlohmann::json to_json(const MisclassNetwork& network) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : network.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"weight", e.weight}});
  nlohmann::json nodes = nlohmann::json::array();
  const auto names = class_names(network.num_classes);
  for (std::size_t i = 0; i < network.num_classes; ++i) nodes.push_back({{"id", i}, {"name", names[i]}});
  return {{"nodes", nodes},
          {"edges", edges},
          {"theta", network.theta},
          {"model_id", network.model_id},
          {"in_degrees", in_degrees(network)}};
}

}  // namespace misclass

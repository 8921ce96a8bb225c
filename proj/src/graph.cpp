#include "odekit/graph.hpp"

#include <algorithm>
#include <cmath>

#include "odekit/common.hpp"

namespace odekit::graph {

namespace {
constexpr const char* kModule = "graph_builder";
}

std::vector<double> abs_pearson_matrix(const std::vector<double>& features, int n, int d) {
  check(n >= 2, kModule, "correlation_adjacency", "need at least 2 nodes");
  check(features.size() == static_cast<size_t>(n) * d, kModule, "correlation_adjacency",
        "feature buffer does not match n x d");
  for (double v : features)
    check(std::isfinite(v), kModule, "correlation_adjacency", "non-finite feature entry");

  std::vector<double> mean(static_cast<size_t>(n), 0.0);
  std::vector<double> norm(static_cast<size_t>(n), 0.0);  // ||row - mean||
  std::vector<double> centered(features.size());
  for (int i = 0; i < n; ++i) {
    const double* row = features.data() + static_cast<size_t>(i) * d;
    double m = 0.0;
    for (int k = 0; k < d; ++k) m += row[k];
    m /= d;
    mean[static_cast<size_t>(i)] = m;
    double ss = 0.0;
    double* crow = centered.data() + static_cast<size_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      crow[k] = row[k] - m;
      ss += crow[k] * crow[k];
    }
    norm[static_cast<size_t>(i)] = std::sqrt(ss);
  }

  std::vector<double> sim(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double r = 0.0;
      const double ni = norm[static_cast<size_t>(i)];
      const double nj = norm[static_cast<size_t>(j)];
      if (ni > 0.0 && nj > 0.0) {
        double dot = 0.0;
        const double* a = centered.data() + static_cast<size_t>(i) * d;
        const double* b = centered.data() + static_cast<size_t>(j) * d;
        for (int k = 0; k < d; ++k) dot += a[k] * b[k];
        r = std::min(std::fabs(dot / (ni * nj)), 1.0);
      }
      sim[static_cast<size_t>(i) * n + j] = r;
      sim[static_cast<size_t>(j) * n + i] = r;
    }
  }
  return sim;
}

std::vector<double> top_tau_rows(const std::vector<double>& dense, int n, int tau) {
  check(tau >= 1 && tau <= n - 1, kModule, "correlation_adjacency",
        "tau must be in [1, n-1], got " + std::to_string(tau));
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  std::vector<int> cols(static_cast<size_t>(n) - 1);
  for (int i = 0; i < n; ++i) {
    int m = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) cols[static_cast<size_t>(m++)] = j;
    // value descending, ties toward the lower column index
    std::sort(cols.begin(), cols.end(), [&](int a, int b) {
      const double va = dense[static_cast<size_t>(i) * n + a];
      const double vb = dense[static_cast<size_t>(i) * n + b];
      if (va != vb) return va > vb;
      return a < b;
    });
    for (int k = 0; k < tau; ++k) {
      const int j = cols[static_cast<size_t>(k)];
      out[static_cast<size_t>(i) * n + j] = dense[static_cast<size_t>(i) * n + j];
    }
  }
  return out;
}

EpochGraph correlation_adjacency(const std::vector<double>& features, int n, int d, int tau) {
  EpochGraph g;
  g.n = n;
  g.d = d;
  g.tau = tau;
  g.node_features = features;
  std::vector<double> dense = abs_pearson_matrix(features, n, d);
  std::vector<double> sparse = top_tau_rows(dense, n, tau);
  g.adjacency.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      g.adjacency[static_cast<size_t>(i) * n + j] =
          std::max(sparse[static_cast<size_t>(i) * n + j], sparse[static_cast<size_t>(j) * n + i]);
    }
  }
  return g;
}

EdgeSet binarize_adjacency(const std::vector<double>& adjacency, int n, int tau) {
  check(adjacency.size() == static_cast<size_t>(n) * n, kModule, "binarize_adjacency",
        "adjacency must be square");
  EdgeSet edges;
  std::vector<int> cols;
  for (int i = 0; i < n; ++i) {
    cols.clear();
    for (int j = 0; j < n; ++j)
      if (j != i && adjacency[static_cast<size_t>(i) * n + j] != 0.0) cols.push_back(j);
    std::sort(cols.begin(), cols.end(), [&](int a, int b) {
      const double va = adjacency[static_cast<size_t>(i) * n + a];
      const double vb = adjacency[static_cast<size_t>(i) * n + b];
      if (va != vb) return va > vb;
      return a < b;
    });
    const int keep = std::min<int>(tau, static_cast<int>(cols.size()));
    for (int k = 0; k < keep; ++k) {
      const int j = cols[static_cast<size_t>(k)];
      edges.emplace(std::min(i, j), std::max(i, j));
    }
  }
  return edges;
}

double global_jaccard(const EdgeSet& true_edges, const EdgeSet& pred_edges) {
  if (true_edges.empty() && pred_edges.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& e : true_edges) inter += pred_edges.count(e);
  const size_t uni = true_edges.size() + pred_edges.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

SpectralGraphSequence build_graph_sequence(const signal::SpectralFeatures& feats,
                                           const std::vector<uint8_t>& epoch_labels, int tau,
                                           int threads) {
  check(feats.count() == epoch_labels.size(), kModule, "build_graph_sequence",
        "label count does not match epoch count");
  SpectralGraphSequence seq;
  seq.labels = epoch_labels;
  seq.graphs.assign(feats.count(), {});
  parallel_for(static_cast<int>(feats.count()), threads, [&](int e) {
    seq.graphs[static_cast<size_t>(e)] = correlation_adjacency(
        feats.per_epoch[static_cast<size_t>(e)], feats.channels, feats.bins, tau);
  });
  return seq;
}

nlohmann::json epoch_graph_to_json(const EpochGraph& g) {
  nlohmann::json coo = nlohmann::json::array();
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j) {
      const double w = g.adj(i, j);
      if (w != 0.0) coo.push_back({i, j, w});
    }
  }
  return {{"n", g.n}, {"d", g.d}, {"tau", g.tau}, {"features", g.node_features}, {"adjacency", coo}};
}

EpochGraph epoch_graph_from_json(const nlohmann::json& j) {
  EpochGraph g;
  g.n = j.at("n").get<int>();
  g.d = j.at("d").get<int>();
  g.tau = j.at("tau").get<int>();
  g.node_features = j.at("features").get<std::vector<double>>();
  check(g.node_features.size() == static_cast<size_t>(g.n) * g.d, kModule,
        "epoch_graph_from_json", "feature array does not match n x d");
  g.adjacency.assign(static_cast<size_t>(g.n) * g.n, 0.0);
  for (const auto& t : j.at("adjacency")) {
    const int a = t.at(0).get<int>();
    const int b = t.at(1).get<int>();
    check(a >= 0 && a < g.n && b >= 0 && b < g.n, kModule, "epoch_graph_from_json",
          "COO index out of range");
    g.adjacency[static_cast<size_t>(a) * g.n + b] = t.at(2).get<double>();
  }
  return g;
}

}  // namespace odekit::graph

#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "odekit/signal.hpp"

namespace odekit::graph {

// Undirected edges (i, j) with i < j, no self-loops.
using EdgeSet = std::set<std::pair<int, int>>;

struct EpochGraph {
  int n = 0;    // nodes (channels)
  int d = 0;    // feature bins per node
  int tau = 0;  // retained neighbors per row before symmetrization
  std::vector<double> node_features;  // n x d row-major
  std::vector<double> adjacency;      // n x n, symmetric, zero diagonal, [0, 1]

  double adj(int i, int j) const { return adjacency[static_cast<size_t>(i) * n + j]; }
};

struct SpectralGraphSequence {
  std::vector<EpochGraph> graphs;
  std::vector<uint8_t> labels;  // per epoch
};

// |Pearson| between the d-dimensional spectral rows of every channel pair,
// clamped to [0, 1]. Zero-variance rows correlate 0 with everything. Each
// row keeps its tau largest off-diagonal entries (ties break toward the
// lower column index), then the matrix is symmetrized by elementwise max,
// so the post-symmetrization row bound is 2*tau.
EpochGraph correlation_adjacency(const std::vector<double>& features, int n, int d, int tau);

// The dense |Pearson| matrix before sparsification. Exposed for tests.
std::vector<double> abs_pearson_matrix(const std::vector<double>& features, int n, int d);

// Row-wise top-tau filter, no symmetrization. Exposed so the serialized
// sparsity assertion and tests can check the pre-symmetrization bound.
std::vector<double> top_tau_rows(const std::vector<double>& dense, int n, int tau);

// Top-tau per row, then the undirected support.
EdgeSet binarize_adjacency(const std::vector<double>& adjacency, int n, int tau);

// |E_true ∩ E_pred| / |E_true ∪ E_pred|; 1.0 when both sets are empty.
double global_jaccard(const EdgeSet& true_edges, const EdgeSet& pred_edges);

SpectralGraphSequence build_graph_sequence(const signal::SpectralFeatures& feats,
                                           const std::vector<uint8_t>& epoch_labels, int tau,
                                           int threads = 1);

nlohmann::json epoch_graph_to_json(const EpochGraph& g);
EpochGraph epoch_graph_from_json(const nlohmann::json& j);

}  // namespace odekit::graph

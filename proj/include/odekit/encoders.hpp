#pragma once

#include <random>
#include <string>
#include <vector>

#include "odekit/autodiff.hpp"
#include "odekit/graph.hpp"
#include "odekit/signal.hpp"

namespace odekit::enc {

// GRU cell convention, batched over rows:
//   r  = sigmoid(x Wr + h Ur + br)
//   u  = sigmoid(x Wz + h Uz + bz)
//   n  = tanh(x Wn + r ⊙ (h Un) + bn)
//   h' = (1 - u) ⊙ n + u ⊙ h
// Zero parameters and zero input fix the zero state.
struct GruCellParams {
  int input_dim = 0, hidden_dim = 0;
  ad::Tensor wr, ur, br, wz, uz, bz, wn, un, bn;

  void init(int input, int hidden, std::mt19937_64& rng, const std::string& prefix);
  std::vector<ad::Tensor*> tensors();
};

struct GruStackParams {
  std::vector<GruCellParams> layers;

  void init(int input, int hidden, int num_layers, std::mt19937_64& rng,
            const std::string& prefix);
  std::vector<ad::Tensor*> tensors();
  int hidden_dim() const { return layers.empty() ? 0 : layers.back().hidden_dim; }
};

ad::Value gru_cell(ad::Tape& tape, GruCellParams& p, ad::Value x, ad::Value h);

// Runs the stack over the sequence; returns the top layer's final hidden
// state (batch_rows x hidden).
ad::Value gru_run(ad::Tape& tape, GruStackParams& p, const std::vector<ad::Value>& inputs,
                  int batch_rows);

// Graph state descriptor: node GRU over spectral rows, edge GRU over
// adjacency weight sequences, one message-passing round, mean pool,
// projection to dimension m.
struct GraphEncoderParams {
  int hidden = 0, m = 0;
  GruStackParams node_gru;  // input d
  GruStackParams edge_gru;  // input 1
  ad::Tensor w_self, w_nbr, w_edge, b_agg;
  ad::Tensor w_proj, b_proj;

  void init(int feature_dim, int hidden_dim, int gru_layers, int out_m, std::mt19937_64& rng);
  std::vector<ad::Tensor*> tensors();
};

// Window [begin, begin + len) of a graph sequence.
struct SequenceView {
  const graph::SpectralGraphSequence* seq = nullptr;
  int begin = 0;
  int len = 0;

  const graph::EpochGraph& at(int i) const { return seq->graphs[static_cast<size_t>(begin + i)]; }
};

struct EdgeHidden {
  std::vector<std::pair<int, int>> pairs;  // ordered pairs, lexicographic
  ad::Value hidden;                        // pairs.size() x hidden, invalid when empty
};

ad::Value encode_node_sequences(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view);
// Ordered pairs with a nonzero weight at any epoch in the window; absent
// edges are skipped and contribute zero in aggregation.
EdgeHidden encode_edge_sequences(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view);
// Neighborhoods and weights come from the final observed epoch's adjacency.
ad::Value aggregate_graph(ad::Tape& tape, GraphEncoderParams& p, ad::Value h_nodes,
                          const EdgeHidden& edges, const graph::EpochGraph& last);
// Full graph descriptor: z_g (1 x m).
ad::Value encode_graph_state(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view);

// Temporal descriptor with controlled stochasticity: channel-mean series,
// standardized, three (conv k=2 -> per-channel normalization -> maxpool 2)
// stages, temporal mean pool, projection to dimension c. Training adds
// Gaussian noise of scale sigma_noise to the output; evaluation does not.
struct TemporalEncoderParams {
  struct Stage {
    int in_ch = 0, out_ch = 0;
    ad::Tensor w;  // (2*in_ch) x out_ch
    ad::Tensor b, gamma, beta;
  };
  int c = 0;
  double sigma_noise = 0.1;
  int decimate = 1;  // mean over sample blocks before encoding (1 = off)
  std::vector<Stage> stages;
  ad::Tensor w_proj, b_proj;

  void init(const std::vector<int>& channels, int out_c, double sigma, int decimate_factor,
            std::mt19937_64& rng);
  std::vector<ad::Tensor*> tensors();
  // Smallest input length the conv/pool stack accepts.
  int min_input_len() const;
};

// Channel-mean of record samples [start, start + len), block-averaged by
// decimate, then standardized to zero mean / unit variance.
std::vector<double> channel_mean_series(const signal::SignalRecord& rec, size_t start, size_t len,
                                        int decimate);

// noise: nullptr or c values added to the output (drawn by the caller).
ad::Value encode_temporal(ad::Tape& tape, TemporalEncoderParams& p,
                          const std::vector<double>& series, const double* noise);

ad::Value encode_temporal_stochastic(ad::Tape& tape, TemporalEncoderParams& p,
                                     const std::vector<double>& series, std::mt19937_64& rng,
                                     bool training);

// z0 = [z_s ; z_g], stochastic block leading.
ad::Value build_initial_state(ad::Tape& tape, ad::Value z_s, ad::Value z_g);

// Xavier-style uniform init, bound sqrt(6 / (fan_in + fan_out)).
void init_weight(ad::Tensor& t, int rows, int cols, std::mt19937_64& rng,
                 const std::string& name);
void init_bias(ad::Tensor& t, int cols, const std::string& name);

}  // namespace odekit::enc

#include "odekit/encoders.hpp"

#include <cmath>

#include "odekit/common.hpp"

namespace odekit::enc {

namespace {
constexpr const char* kModule = "encoders";
}

void init_weight(ad::Tensor& t, int rows, int cols, std::mt19937_64& rng,
                 const std::string& name) {
  t = ad::Tensor(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
  t.requires_grad = true;
  t.name = name;
}

void init_bias(ad::Tensor& t, int cols, const std::string& name) {
  t = ad::Tensor(1, cols, 0.0);
  t.requires_grad = true;
  t.name = name;
}

void GruCellParams::init(int input, int hidden, std::mt19937_64& rng, const std::string& prefix) {
  input_dim = input;
  hidden_dim = hidden;
  init_weight(wr, input, hidden, rng, prefix + ".wr");
  init_weight(ur, hidden, hidden, rng, prefix + ".ur");
  init_bias(br, hidden, prefix + ".br");
  init_weight(wz, input, hidden, rng, prefix + ".wz");
  init_weight(uz, hidden, hidden, rng, prefix + ".uz");
  init_bias(bz, hidden, prefix + ".bz");
  init_weight(wn, input, hidden, rng, prefix + ".wn");
  init_weight(un, hidden, hidden, rng, prefix + ".un");
  init_bias(bn, hidden, prefix + ".bn");
}

std::vector<ad::Tensor*> GruCellParams::tensors() {
  return {&wr, &ur, &br, &wz, &uz, &bz, &wn, &un, &bn};
}

void GruStackParams::init(int input, int hidden, int num_layers, std::mt19937_64& rng,
                          const std::string& prefix) {
  check(num_layers >= 1, kModule, "init", "GRU needs at least one layer");
  layers.assign(static_cast<size_t>(num_layers), {});
  for (int l = 0; l < num_layers; ++l) {
    layers[static_cast<size_t>(l)].init(l == 0 ? input : hidden, hidden, rng,
                                        prefix + ".l" + std::to_string(l));
  }
}

std::vector<ad::Tensor*> GruStackParams::tensors() {
  std::vector<ad::Tensor*> out;
  for (auto& l : layers)
    for (ad::Tensor* t : l.tensors()) out.push_back(t);
  return out;
}

ad::Value gru_cell(ad::Tape& tape, GruCellParams& p, ad::Value x, ad::Value h) {
  ad::Value r = tape.sigmoid(tape.add_bias(
      tape.add(tape.matmul(x, tape.leaf(p.wr)), tape.matmul(h, tape.leaf(p.ur))),
      tape.leaf(p.br)));
  ad::Value u = tape.sigmoid(tape.add_bias(
      tape.add(tape.matmul(x, tape.leaf(p.wz)), tape.matmul(h, tape.leaf(p.uz))),
      tape.leaf(p.bz)));
  ad::Value n = tape.tanh(tape.add_bias(
      tape.add(tape.matmul(x, tape.leaf(p.wn)), tape.mul(r, tape.matmul(h, tape.leaf(p.un)))),
      tape.leaf(p.bn)));
  ad::Value one_minus_u = tape.sub(tape.constant_fill(tape.rows(u), tape.cols(u), 1.0), u);
  return tape.add(tape.mul(one_minus_u, n), tape.mul(u, h));
}

ad::Value gru_run(ad::Tape& tape, GruStackParams& p, const std::vector<ad::Value>& inputs,
                  int batch_rows) {
  check(!inputs.empty(), kModule, "gru_run", "sequence of length 0");
  std::vector<ad::Value> hidden(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l)
    hidden[l] = tape.constant_fill(batch_rows, p.layers[l].hidden_dim, 0.0);
  for (const ad::Value& input : inputs) {
    ad::Value x = input;
    for (size_t l = 0; l < p.layers.size(); ++l) {
      hidden[l] = gru_cell(tape, p.layers[l], x, hidden[l]);
      x = hidden[l];
    }
  }
  return hidden.back();
}

void GraphEncoderParams::init(int feature_dim, int hidden_dim, int gru_layers, int out_m,
                              std::mt19937_64& rng) {
  hidden = hidden_dim;
  m = out_m;
  node_gru.init(feature_dim, hidden_dim, gru_layers, rng, "phi.node_gru");
  edge_gru.init(1, hidden_dim, gru_layers, rng, "phi.edge_gru");
  init_weight(w_self, hidden_dim, hidden_dim, rng, "phi.gnn.w_self");
  init_weight(w_nbr, hidden_dim, hidden_dim, rng, "phi.gnn.w_nbr");
  init_weight(w_edge, hidden_dim, hidden_dim, rng, "phi.gnn.w_edge");
  init_bias(b_agg, hidden_dim, "phi.gnn.b_agg");
  init_weight(w_proj, hidden_dim, out_m, rng, "phi.gnn.w_proj");
  init_bias(b_proj, out_m, "phi.gnn.b_proj");
}

std::vector<ad::Tensor*> GraphEncoderParams::tensors() {
  std::vector<ad::Tensor*> out = node_gru.tensors();
  for (ad::Tensor* t : edge_gru.tensors()) out.push_back(t);
  for (ad::Tensor* t : {&w_self, &w_nbr, &w_edge, &b_agg, &w_proj, &b_proj}) out.push_back(t);
  return out;
}

ad::Value encode_node_sequences(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view) {
  check(view.len >= 1, kModule, "encode_node_sequences", "sequence of length 0");
  const int n = view.at(0).n;
  const int d = view.at(0).d;
  std::vector<ad::Value> inputs;
  inputs.reserve(static_cast<size_t>(view.len));
  for (int t = 0; t < view.len; ++t) {
    const graph::EpochGraph& g = view.at(t);
    check(g.n == n && g.d == d, kModule, "encode_node_sequences",
          "graphs in the window disagree on n or d");
    inputs.push_back(tape.constant(n, d, g.node_features));
  }
  return gru_run(tape, p.node_gru, inputs, n);
}

EdgeHidden encode_edge_sequences(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view) {
  check(view.len >= 1, kModule, "encode_edge_sequences", "sequence of length 0");
  const int n = view.at(0).n;
  EdgeHidden out;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      bool present = false;
      for (int t = 0; t < view.len && !present; ++t) present = view.at(t).adj(i, j) != 0.0;
      if (present) out.pairs.emplace_back(i, j);
    }
  }
  if (out.pairs.empty()) return out;

  const int e = static_cast<int>(out.pairs.size());
  std::vector<ad::Value> inputs;
  inputs.reserve(static_cast<size_t>(view.len));
  for (int t = 0; t < view.len; ++t) {
    std::vector<double> col(static_cast<size_t>(e));
    for (int k = 0; k < e; ++k)
      col[static_cast<size_t>(k)] = view.at(t).adj(out.pairs[static_cast<size_t>(k)].first,
                                                   out.pairs[static_cast<size_t>(k)].second);
    inputs.push_back(tape.constant(e, 1, std::move(col)));
  }
  out.hidden = gru_run(tape, p.edge_gru, inputs, e);
  return out;
}

ad::Value aggregate_graph(ad::Tape& tape, GraphEncoderParams& p, ad::Value h_nodes,
                          const EdgeHidden& edges, const graph::EpochGraph& last) {
  const int n = tape.rows(h_nodes);
  check(tape.cols(h_nodes) == p.hidden, kModule, "aggregate_graph",
        "node hidden width does not match parameters");
  check(last.n == n, kModule, "aggregate_graph", "adjacency size does not match node count");

  // message_i = sum_j a_ij (W_nbr h_j + W_edge h_ij)
  ad::Value adj = tape.constant(n, n, last.adjacency);
  ad::Value msg = tape.matmul(adj, tape.matmul(h_nodes, tape.leaf(p.w_nbr)));
  if (!edges.pairs.empty()) {
    const int e = static_cast<int>(edges.pairs.size());
    std::vector<double> inc(static_cast<size_t>(n) * e, 0.0);
    for (int k = 0; k < e; ++k) {
      const auto [i, j] = edges.pairs[static_cast<size_t>(k)];
      inc[static_cast<size_t>(i) * e + k] = last.adj(i, j);
    }
    ad::Value incidence = tape.constant(n, e, std::move(inc));
    msg = tape.add(msg, tape.matmul(incidence, tape.matmul(edges.hidden, tape.leaf(p.w_edge))));
  }
  ad::Value updated = tape.relu(tape.add_bias(
      tape.add(tape.matmul(h_nodes, tape.leaf(p.w_self)), msg), tape.leaf(p.b_agg)));
  ad::Value pooled = tape.mean_rows(updated);
  return tape.add_bias(tape.matmul(pooled, tape.leaf(p.w_proj)), tape.leaf(p.b_proj));
}

ad::Value encode_graph_state(ad::Tape& tape, GraphEncoderParams& p, const SequenceView& view) {
  ad::Value h_nodes = encode_node_sequences(tape, p, view);
  EdgeHidden edges = encode_edge_sequences(tape, p, view);
  return aggregate_graph(tape, p, h_nodes, edges, view.at(view.len - 1));
}

void TemporalEncoderParams::init(const std::vector<int>& channels, int out_c, double sigma,
                                 int decimate_factor, std::mt19937_64& rng) {
  check(channels.size() == 3, kModule, "init", "temporal encoder uses exactly 3 stages");
  c = out_c;
  sigma_noise = sigma;
  decimate = decimate_factor;
  stages.assign(3, {});
  int in_ch = 1;
  for (size_t s = 0; s < 3; ++s) {
    Stage& st = stages[s];
    st.in_ch = in_ch;
    st.out_ch = channels[s];
    const std::string prefix = "psi.stage" + std::to_string(s);
    init_weight(st.w, 2 * in_ch, st.out_ch, rng, prefix + ".w");
    init_bias(st.b, st.out_ch, prefix + ".b");
    st.gamma = ad::Tensor(1, st.out_ch, 1.0);
    st.gamma.requires_grad = true;
    st.gamma.name = prefix + ".gamma";
    init_bias(st.beta, st.out_ch, prefix + ".beta");
    in_ch = st.out_ch;
  }
  init_weight(w_proj, in_ch, out_c, rng, "psi.proj.w");
  init_bias(b_proj, out_c, "psi.proj.b");
}

std::vector<ad::Tensor*> TemporalEncoderParams::tensors() {
  std::vector<ad::Tensor*> out;
  for (auto& s : stages)
    for (ad::Tensor* t : {&s.w, &s.b, &s.gamma, &s.beta}) out.push_back(t);
  out.push_back(&w_proj);
  out.push_back(&b_proj);
  return out;
}

int TemporalEncoderParams::min_input_len() const {
  // Invert conv(k=2): len-1, then pool: floor(len/2), per stage, needing >= 1.
  int len = 1;
  for (int s = 0; s < 3; ++s) len = 2 * len + 1;
  return len;
}

std::vector<double> channel_mean_series(const signal::SignalRecord& rec, size_t start, size_t len,
                                        int decimate) {
  check(start + len <= rec.num_samples, kModule, "encode_temporal_stochastic",
        "raw window out of record range");
  check(decimate >= 1, kModule, "encode_temporal_stochastic", "decimate must be >= 1");
  std::vector<double> series(len / static_cast<size_t>(decimate), 0.0);
  for (size_t i = 0; i < series.size(); ++i) {
    double acc = 0.0;
    for (int b = 0; b < decimate; ++b) {
      const size_t s = start + i * static_cast<size_t>(decimate) + static_cast<size_t>(b);
      for (int c = 0; c < rec.channels; ++c) acc += rec.channel(c)[s];
    }
    series[i] = acc / (static_cast<double>(rec.channels) * decimate);
  }
  // Standardize; silent windows stay zero.
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(series.size());
  const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  for (double& v : series) v = (v - mean) * inv;
  return series;
}

namespace {

ad::Value instance_norm(ad::Tape& tape, ad::Value x, ad::Tensor& gamma, ad::Tensor& beta) {
  ad::Value mu = tape.mean_rows(x);
  ad::Value centered = tape.add_bias(x, tape.scale(mu, -1.0));
  ad::Value var = tape.mean_rows(tape.mul(centered, centered));
  ad::Value normed = tape.mul_rows(centered, tape.rsqrt(var, 1e-5));
  return tape.add_bias(tape.mul_rows(normed, tape.leaf(gamma)), tape.leaf(beta));
}

}  // namespace

ad::Value encode_temporal(ad::Tape& tape, TemporalEncoderParams& p,
                          const std::vector<double>& series, const double* noise) {
  check(static_cast<int>(series.size()) >= p.min_input_len(), kModule,
        "encode_temporal_stochastic",
        "window of " + std::to_string(series.size()) + " samples is shorter than the conv receptive field (" +
            std::to_string(p.min_input_len()) + ")");
  ad::Value x = tape.constant(static_cast<int>(series.size()), 1, series);
  for (auto& st : p.stages) {
    const int len = tape.rows(x);
    ad::Value left = tape.slice_rows(x, 0, len - 1);
    ad::Value right = tape.slice_rows(x, 1, len - 1);
    ad::Value conv = tape.add_bias(tape.matmul(tape.concat_cols(left, right), tape.leaf(st.w)),
                                   tape.leaf(st.b));
    ad::Value normed = instance_norm(tape, conv, st.gamma, st.beta);
    const int half = tape.rows(normed) / 2;
    check(half >= 1, kModule, "encode_temporal_stochastic", "window collapsed inside the pool stack");
    x = tape.maximum(tape.stride_rows(normed, 0, 2, half), tape.stride_rows(normed, 1, 2, half));
  }
  ad::Value z = tape.add_bias(tape.matmul(tape.mean_rows(x), tape.leaf(p.w_proj)),
                              tape.leaf(p.b_proj));
  if (noise != nullptr) {
    z = tape.add(z, tape.constant(1, p.c, std::vector<double>(noise, noise + p.c)));
  }
  return z;
}

ad::Value encode_temporal_stochastic(ad::Tape& tape, TemporalEncoderParams& p,
                                     const std::vector<double>& series, std::mt19937_64& rng,
                                     bool training) {
  if (!training || p.sigma_noise <= 0.0) return encode_temporal(tape, p, series, nullptr);
  std::normal_distribution<double> gauss(0.0, p.sigma_noise);
  std::vector<double> noise(static_cast<size_t>(p.c));
  for (double& v : noise) v = gauss(rng);
  return encode_temporal(tape, p, series, noise.data());
}

ad::Value build_initial_state(ad::Tape& tape, ad::Value z_s, ad::Value z_g) {
  check(tape.rows(z_s) == 1 && tape.rows(z_g) == 1, kModule, "build_initial_state",
        "latent blocks must be row vectors");
  return tape.concat_cols(z_s, z_g);
}

}  // namespace odekit::enc

#include "odekit/forecaster.hpp"

#include <cmath>

#include "odekit/common.hpp"
#include "odekit/encoders.hpp"

namespace odekit::fc {

namespace {
constexpr const char* kModule = "forecaster";
}

void DecoderParams::init(int latent_dim, int hidden_dim, int n, int d, std::mt19937_64& rng) {
  in_dim = latent_dim;
  hidden = hidden_dim;
  nodes = n;
  bins = d;
  enc::init_weight(w1, latent_dim, hidden_dim, rng, "decoder.w1");
  enc::init_bias(b1, hidden_dim, "decoder.b1");
  enc::init_weight(w2, hidden_dim, n * d, rng, "decoder.w2");
  enc::init_bias(b2, n * d, "decoder.b2");
}

std::vector<ad::Tensor*> DecoderParams::tensors() { return {&w1, &b1, &w2, &b2}; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "max") return Pooling::max;
  if (s == "mean") return Pooling::mean;
  if (s == "sum") return Pooling::sum;
  fail(kModule, "pool_trajectory", "unknown pooling mode '" + s + "' (max|mean|sum)");
}

std::string pooling_to_string(Pooling p) {
  switch (p) {
    case Pooling::max: return "max";
    case Pooling::mean: return "mean";
    case Pooling::sum: return "sum";
  }
  return "max";
}

void ClassifierParams::init(int latent_dim, Pooling mode, std::mt19937_64& rng) {
  pooling = mode;
  in_dim = latent_dim;
  enc::init_weight(w, latent_dim, 1, rng, "classifier.w");
  enc::init_bias(b, 1, "classifier.b");
}

std::vector<ad::Tensor*> ClassifierParams::tensors() { return {&w, &b}; }

ad::Value decode_step(ad::Tape& tape, DecoderParams& p, ad::Value z) {
  check(tape.rows(z) == 1 && tape.cols(z) == p.in_dim, kModule, "decode_step",
        "latent state has wrong dimension");
  ad::Value hidden = tape.relu(tape.add(tape.matmul(z, tape.leaf(p.w1)), tape.leaf(p.b1)));
  return tape.add(tape.matmul(hidden, tape.leaf(p.w2)), tape.leaf(p.b2));
}

ad::Value dense_abs_pearson(ad::Tape& tape, ad::Value features_nd, int nodes, int bins) {
  check(tape.rows(features_nd) == nodes && tape.cols(features_nd) == bins, kModule,
        "dense_abs_pearson", "attribute block has wrong shape");
  // Per node: centered row, norm; entries |<a,b>| / (|a||b|).
  std::vector<ad::Value> centered(static_cast<size_t>(nodes));
  std::vector<ad::Value> norms(static_cast<size_t>(nodes));
  for (int i = 0; i < nodes; ++i) {
    ad::Value row = tape.slice_rows(features_nd, i, 1);
    ad::Value mu = tape.mean(row);
    ad::Value cen = tape.sub(row, tape.mul_scalar(tape.constant_fill(1, bins, 1.0), mu));
    centered[static_cast<size_t>(i)] = cen;
    norms[static_cast<size_t>(i)] = tape.l2norm(cen);
  }
  std::vector<ad::Value> rows(static_cast<size_t>(nodes));
  ad::Value eps = tape.scalar(1e-12);
  for (int i = 0; i < nodes; ++i) {
    std::vector<ad::Value> cells;
    cells.reserve(static_cast<size_t>(nodes));
    for (int j = 0; j < nodes; ++j) {
      if (i == j) {
        cells.push_back(tape.scalar(0.0));
        continue;
      }
      ad::Value dotv = tape.sum(tape.mul(centered[static_cast<size_t>(i)],
                                         centered[static_cast<size_t>(j)]));
      ad::Value denom = tape.add(
          tape.mul(norms[static_cast<size_t>(i)], norms[static_cast<size_t>(j)]), eps);
      ad::Value r = tape.div_scalar(dotv, denom);
      // |r| = relu(r) + relu(-r)
      cells.push_back(tape.add(tape.relu(r), tape.relu(tape.scale(r, -1.0))));
    }
    ad::Value row = cells[0];
    for (int j = 1; j < nodes; ++j) row = tape.concat_cols(row, cells[static_cast<size_t>(j)]);
    rows[static_cast<size_t>(i)] = row;
  }
  ad::Value out = rows[0];
  for (int i = 1; i < nodes; ++i) out = tape.concat_rows(out, rows[static_cast<size_t>(i)]);
  return out;
}

ad::Value forecast_loss(ad::Tape& tape, const std::vector<ad::Value>& predicted,
                        const std::vector<const std::vector<double>*>& truth, int nodes, int bins,
                        double beta_adjacency,
                        const std::vector<const std::vector<double>*>* truth_adjacency) {
  check(!predicted.empty(), kModule, "forecast_loss", "no predicted steps");
  check(predicted.size() == truth.size(), kModule, "forecast_loss",
        "horizon mismatch: " + std::to_string(predicted.size()) + " predicted vs " +
            std::to_string(truth.size()) + " ground-truth steps");
  const size_t flat = static_cast<size_t>(nodes) * bins;
  ad::Value total;
  for (size_t k = 0; k < predicted.size(); ++k) {
    check(tape.size(predicted[k]) == flat, kModule, "forecast_loss",
          "predicted step has wrong size");
    check(truth[k]->size() == flat, kModule, "forecast_loss", "ground-truth step has wrong size");
    ad::Value diff = tape.sub(predicted[k], tape.constant(1, static_cast<int>(flat), *truth[k]));
    ad::Value norm = tape.l2norm(diff);
    total = (k == 0) ? norm : tape.add(total, norm);
  }
  ad::Value loss = tape.scale(total, 1.0 / static_cast<double>(predicted.size()));

  if (beta_adjacency > 0.0) {
    check(truth_adjacency != nullptr && truth_adjacency->size() == predicted.size(), kModule,
          "forecast_loss", "adjacency term needs per-step ground-truth adjacency");
    ad::Value adj_total;
    for (size_t k = 0; k < predicted.size(); ++k) {
      // Reshape the flat prediction into N x d through slicing rows.
      ad::Value block = tape.slice_cols(predicted[k], 0, bins);
      for (int i = 1; i < nodes; ++i)
        block = tape.concat_rows(block, tape.slice_cols(predicted[k], i * bins, bins));
      ad::Value pred_adj = dense_abs_pearson(tape, block, nodes, bins);
      ad::Value diff = tape.sub(
          pred_adj, tape.constant(nodes, nodes, *(*truth_adjacency)[k]));
      ad::Value norm = tape.l2norm(diff);
      adj_total = (k == 0) ? norm : tape.add(adj_total, norm);
    }
    loss = tape.add(loss, tape.scale(adj_total, beta_adjacency / static_cast<double>(predicted.size())));
  }
  return loss;
}

ad::Value pool_states(ad::Tape& tape, const std::vector<ad::Value>& states, Pooling mode) {
  check(!states.empty(), kModule, "pool_trajectory", "empty trajectory");
  ad::Value acc = states[0];
  for (size_t i = 1; i < states.size(); ++i) {
    acc = (mode == Pooling::max) ? tape.maximum(acc, states[i]) : tape.add(acc, states[i]);
  }
  if (mode == Pooling::mean) acc = tape.scale(acc, 1.0 / static_cast<double>(states.size()));
  return acc;
}

ad::Value pool_trajectory(ad::Tape& tape, const ode::Trajectory& traj, Pooling mode) {
  return pool_states(tape, traj.states, mode);
}

ad::Value classify_logit(ad::Tape& tape, ClassifierParams& p, ad::Value pooled) {
  check(tape.rows(pooled) == 1 && tape.cols(pooled) == p.in_dim, kModule, "classify",
        "pooled vector has wrong dimension");
  return tape.add(tape.matmul(pooled, tape.leaf(p.w)), tape.leaf(p.b));
}

double classify_probability(ad::Tape& tape, ClassifierParams& p, ad::Value pooled) {
  ad::Value prob = tape.sigmoid(classify_logit(tape, p, pooled));
  return tape.scalar_value(prob);
}

ad::Value bce_loss(ad::Tape& tape, ad::Value logit, int label) {
  check(label == 0 || label == 1, kModule, "classify", "label must be 0 or 1");
  if (label == 1) return tape.softplus(tape.scale(logit, -1.0));
  return tape.softplus(logit);
}

}  // namespace odekit::fc

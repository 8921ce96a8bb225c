#pragma once

#include <random>
#include <string>
#include <vector>

#include "odekit/autodiff.hpp"
#include "odekit/graph.hpp"
#include "odekit/ode.hpp"

namespace odekit::fc {

// Latent state -> N*d node attributes: affine, relu, affine.
struct DecoderParams {
  int in_dim = 0, hidden = 0, nodes = 0, bins = 0;
  ad::Tensor w1, b1, w2, b2;

  void init(int latent_dim, int hidden_dim, int n, int d, std::mt19937_64& rng);
  std::vector<ad::Tensor*> tensors();
};

enum class Pooling { max, mean, sum };
Pooling pooling_from_string(const std::string& s);
std::string pooling_to_string(Pooling p);

struct ClassifierParams {
  Pooling pooling = Pooling::max;
  int in_dim = 0;
  ad::Tensor w;  // in_dim x 1
  ad::Tensor b;  // 1 x 1

  void init(int latent_dim, Pooling mode, std::mt19937_64& rng);
  std::vector<ad::Tensor*> tensors();
};

// 1 x (N*d); reshape to N x d is a view decision of the caller.
ad::Value decode_step(ad::Tape& tape, DecoderParams& p, ad::Value z);

// Mean over steps of the Frobenius norm of the node-attribute difference.
// truth entries are row-major N x d per step. When beta_adjacency > 0 a
// dense |Pearson| adjacency difference term (Frobenius, same mean-over-steps
// reduction) is added with weight beta.
ad::Value forecast_loss(ad::Tape& tape, const std::vector<ad::Value>& predicted,
                        const std::vector<const std::vector<double>*>& truth, int nodes, int bins,
                        double beta_adjacency = 0.0,
                        const std::vector<const std::vector<double>*>* truth_adjacency = nullptr);

// Coordinatewise max / mean / sum across the trajectory states.
ad::Value pool_trajectory(ad::Tape& tape, const ode::Trajectory& traj, Pooling mode);
ad::Value pool_states(ad::Tape& tape, const std::vector<ad::Value>& states, Pooling mode);

ad::Value classify_logit(ad::Tape& tape, ClassifierParams& p, ad::Value pooled);
// sigmoid(logit), strictly in (0,1)
double classify_probability(ad::Tape& tape, ClassifierParams& p, ad::Value pooled);
// Binary cross-entropy via softplus: y*softplus(-x) + (1-y)*softplus(x).
ad::Value bce_loss(ad::Tape& tape, ad::Value logit, int label);

// Differentiable dense |Pearson| rows-correlation matrix of an N x d
// attribute block (no top-tau), used by the optional structural loss term.
ad::Value dense_abs_pearson(ad::Tape& tape, ad::Value features_nd, int nodes, int bins);

}  // namespace odekit::fc

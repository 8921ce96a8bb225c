#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "odekit/autodiff.hpp"

namespace odekit::ode {

// f(z) = (g(z) + 1) ⊙ h(z) - lambda(z_s) z with
//   h(z)        = z + tanh(z W1 + b1) W2 + b2          (identity skip)
//   g(z)        = sigmoid(z Wg + bg)                   in (0,1)^dim
//   lambda(z_s) = softplus(tanh(z_s Dw1 + db1) Dw2 + db2) > 0, scalar,
// conditioned on the initial stochastic block and held constant over the
// trajectory.
struct VectorFieldParams {
  int dim = 0;              // m + c
  int c = 0;                // stochastic block width (leading coordinates)
  int residual_hidden = 0;
  int decay_hidden = 0;
  ad::Tensor w1, b1, w2, b2;
  ad::Tensor wg, bg;
  ad::Tensor dw1, db1, dw2, db2;

  void init(int state_dim, int stochastic_dim, int res_hidden, int dec_hidden,
            std::mt19937_64& rng);
  std::vector<ad::Tensor*> tensors();
};

struct FieldConfig {
  bool gate_enabled = true;
  // Replaces the learned gate with fixed random coefficients in (0,1),
  // drawn once per trajectory.
  bool random_gate = false;
  // Zeroes the derivative of the leading c coordinates so the stochastic
  // block does not evolve over the horizon.
  bool freeze_stochastic_block = true;
};

ad::Value gate(ad::Tape& tape, VectorFieldParams& p, ad::Value z);
ad::Value decay_coefficient(ad::Tape& tape, VectorFieldParams& p, ad::Value z_s);  // 1 x 1

// lambda is precomputed once per trajectory (decay_coefficient on the initial
// stochastic block). random_gate_coeffs must be dim values when
// cfg.random_gate is set. Non-finite intermediates abort naming the term.
ad::Value vector_field(ad::Tape& tape, VectorFieldParams& p, const FieldConfig& cfg, ad::Value z,
                       ad::Value lambda, const std::vector<double>* random_gate_coeffs = nullptr);

using FieldFn = std::function<ad::Value(ad::Tape&, ad::Value)>;

// Classical RK4: z + (dt/6)(k1 + 2 k2 + 2 k3 + k4); adds 4 to *nfe.
ad::Value rk4_step(ad::Tape& tape, const FieldFn& field, ad::Value z, double dt, long* nfe);

struct Trajectory {
  std::vector<ad::Value> states;  // z at t0+1 .. t0+K
  std::vector<double> times;
  long nfe = 0;
  int substeps = 0;  // per unit interval
};

// Fixed step dt = 1/substeps_per_unit across K unit intervals, recording the
// state at each integer time. nfe = 4 * K * substeps_per_unit. Gradients
// flow through every stage.
Trajectory solve_trajectory(ad::Tape& tape, const FieldFn& field, ad::Value z0, int horizon_k,
                            int substeps_per_unit, double t0 = 0.0);

// Builds the field closure for a given initial state: slices the stochastic
// block and fixes lambda. When cfg.random_gate is set the caller supplies
// the dim coefficients (pre-drawn so batch workers stay deterministic).
FieldFn make_field(ad::Tape& tape, VectorFieldParams& p, const FieldConfig& cfg, ad::Value z0,
                   const std::vector<double>* random_gate_coeffs = nullptr);

std::vector<double> draw_gate_coefficients(std::mt19937_64& rng, int dim);

// 2-D arrow grid over the plane of the top-2 principal directions of the
// reference states; grid points are lifted back through the transposed
// basis with the remaining coordinates held at the reference mean.
struct FieldGrid {
  int grid_n = 0;
  std::vector<std::array<double, 4>> rows;  // x, y, dx, dy
  std::vector<double> basis1, basis2, mean;
};

FieldGrid export_field_grid(VectorFieldParams& p, const FieldConfig& cfg,
                            const std::vector<std::vector<double>>& reference_states, int grid_n,
                            double span_scale);

// CSV header "x,y,dx,dy", plain decimal, 9 significant digits.
void write_field_csv(const FieldGrid& grid, const std::string& path);
nlohmann::json field_grid_json(const FieldGrid& grid);

}  // namespace odekit::ode

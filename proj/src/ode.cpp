#include "odekit/ode.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "odekit/common.hpp"
#include "odekit/encoders.hpp"

namespace odekit::ode {

namespace {

constexpr const char* kModule = "neural_ode";

void require_finite(ad::Tape& tape, ad::Value v, const char* term) {
  for (double x : tape.data(v)) {
    if (!std::isfinite(x)) {
      throw Error(Error::Kind::internal, kModule, "vector_field",
                  std::string("non-finite value in ") + term + " term");
    }
  }
}

}  // namespace

void VectorFieldParams::init(int state_dim, int stochastic_dim, int res_hidden, int dec_hidden,
                             std::mt19937_64& rng) {
  check(stochastic_dim >= 1 && stochastic_dim < state_dim, kModule, "init",
        "stochastic block must be a proper leading slice of the state");
  dim = state_dim;
  c = stochastic_dim;
  residual_hidden = res_hidden > 0 ? res_hidden : state_dim;
  decay_hidden = dec_hidden;
  enc::init_weight(w1, dim, residual_hidden, rng, "field.residual.w1");
  enc::init_bias(b1, residual_hidden, "field.residual.b1");
  enc::init_weight(w2, residual_hidden, dim, rng, "field.residual.w2");
  enc::init_bias(b2, dim, "field.residual.b2");
  enc::init_weight(wg, dim, dim, rng, "field.gate.w");
  enc::init_bias(bg, dim, "field.gate.b");
  enc::init_weight(dw1, c, decay_hidden, rng, "field.decay.w1");
  enc::init_bias(db1, decay_hidden, "field.decay.b1");
  enc::init_weight(dw2, decay_hidden, 1, rng, "field.decay.w2");
  enc::init_bias(db2, 1, "field.decay.b2");
}

std::vector<ad::Tensor*> VectorFieldParams::tensors() {
  return {&w1, &b1, &w2, &b2, &wg, &bg, &dw1, &db1, &dw2, &db2};
}

ad::Value gate(ad::Tape& tape, VectorFieldParams& p, ad::Value z) {
  return tape.sigmoid(tape.add(tape.matmul(z, tape.leaf(p.wg)), tape.leaf(p.bg)));
}

ad::Value decay_coefficient(ad::Tape& tape, VectorFieldParams& p, ad::Value z_s) {
  check(tape.rows(z_s) == 1 && tape.cols(z_s) == p.c, kModule, "decay_coefficient",
        "stochastic block has wrong width");
  ad::Value hidden = tape.tanh(tape.add(tape.matmul(z_s, tape.leaf(p.dw1)), tape.leaf(p.db1)));
  return tape.softplus(tape.add(tape.matmul(hidden, tape.leaf(p.dw2)), tape.leaf(p.db2)));
}

ad::Value vector_field(ad::Tape& tape, VectorFieldParams& p, const FieldConfig& cfg, ad::Value z,
                       ad::Value lambda, const std::vector<double>* random_gate_coeffs) {
  check(tape.rows(z) == 1 && tape.cols(z) == p.dim, kModule, "vector_field",
        "state has wrong dimension");
  ad::Value residual = tape.add(
      tape.add(z, tape.matmul(tape.tanh(tape.add(tape.matmul(z, tape.leaf(p.w1)), tape.leaf(p.b1))),
                              tape.leaf(p.w2))),
      tape.leaf(p.b2));
  require_finite(tape, residual, "residual");
  require_finite(tape, lambda, "decay");

  ad::Value scaled;
  if (cfg.random_gate) {
    check(random_gate_coeffs != nullptr &&
              random_gate_coeffs->size() == static_cast<size_t>(p.dim),
          kModule, "vector_field", "random gate requires dim coefficients");
    ad::Value coeffs = tape.constant(1, p.dim, *random_gate_coeffs);
    scaled = tape.mul(tape.add(coeffs, tape.constant_fill(1, p.dim, 1.0)), residual);
  } else if (cfg.gate_enabled) {
    ad::Value g = gate(tape, p, z);
    require_finite(tape, g, "gate");
    scaled = tape.mul(tape.add(g, tape.constant_fill(1, p.dim, 1.0)), residual);
  } else {
    scaled = residual;
  }

  ad::Value f = tape.sub(scaled, tape.mul_scalar(z, lambda));
  if (cfg.freeze_stochastic_block) {
    std::vector<double> mask(static_cast<size_t>(p.dim), 1.0);
    for (int i = 0; i < p.c; ++i) mask[static_cast<size_t>(i)] = 0.0;
    f = tape.mul(f, tape.constant(1, p.dim, std::move(mask)));
  }
  return f;
}

ad::Value rk4_step(ad::Tape& tape, const FieldFn& field, ad::Value z, double dt, long* nfe) {
  check(dt > 0.0, kModule, "rk4_step", "step size must be positive");
  auto finite_stage = [&](ad::Value k, int stage) {
    for (double x : tape.data(k)) {
      if (!std::isfinite(x)) {
        throw Error(Error::Kind::internal, kModule, "rk4_step",
                    "non-finite stage k" + std::to_string(stage));
      }
    }
  };
  ad::Value k1 = field(tape, z);
  finite_stage(k1, 1);
  ad::Value k2 = field(tape, tape.add(z, tape.scale(k1, dt / 2.0)));
  finite_stage(k2, 2);
  ad::Value k3 = field(tape, tape.add(z, tape.scale(k2, dt / 2.0)));
  finite_stage(k3, 3);
  ad::Value k4 = field(tape, tape.add(z, tape.scale(k3, dt)));
  finite_stage(k4, 4);
  if (nfe) *nfe += 4;
  ad::Value sum = tape.add(tape.add(tape.add(k1, tape.scale(k2, 2.0)), tape.scale(k3, 2.0)), k4);
  return tape.add(z, tape.scale(sum, dt / 6.0));
}

Trajectory solve_trajectory(ad::Tape& tape, const FieldFn& field, ad::Value z0, int horizon_k,
                            int substeps_per_unit, double t0) {
  check(horizon_k >= 1, kModule, "solve_trajectory", "horizon must be >= 1");
  check(substeps_per_unit >= 1, kModule, "solve_trajectory", "substeps_per_unit must be >= 1");
  Trajectory traj;
  traj.substeps = substeps_per_unit;
  const double dt = 1.0 / substeps_per_unit;
  ad::Value z = z0;
  for (int k = 1; k <= horizon_k; ++k) {
    try {
      for (int s = 0; s < substeps_per_unit; ++s) z = rk4_step(tape, field, z, dt, &traj.nfe);
    } catch (const Error& e) {
      throw Error(e.kind(), kModule, "solve_trajectory",
                  "interval " + std::to_string(k) + ": " + e.what());
    }
    traj.states.push_back(z);
    traj.times.push_back(t0 + k);
  }
  return traj;
}

FieldFn make_field(ad::Tape& tape, VectorFieldParams& p, const FieldConfig& cfg, ad::Value z0,
                   const std::vector<double>* random_gate_coeffs) {
  ad::Value z_s = tape.slice_cols(z0, 0, p.c);
  ad::Value lambda = decay_coefficient(tape, p, z_s);
  auto coeffs = std::make_shared<std::vector<double>>();
  if (cfg.random_gate) {
    check(random_gate_coeffs != nullptr, kModule, "make_field",
          "random gate requires pre-drawn coefficients");
    *coeffs = *random_gate_coeffs;
  }
  return [&p, cfg, coeffs, lambda](ad::Tape& t, ad::Value z) {
    return vector_field(t, p, cfg, z, lambda, cfg.random_gate ? coeffs.get() : nullptr);
  };
}

std::vector<double> draw_gate_coefficients(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> coeffs(static_cast<size_t>(dim));
  for (double& v : coeffs) v = unit(rng);
  return coeffs;
}

namespace {

// Power iteration with deflation; inputs are small (dim <= a few hundred).
std::vector<double> top_eigvec(const std::vector<double>& cov, int dim,
                               const std::vector<double>* deflate, int canonical_axis) {
  std::mt19937_64 rng(0x0ddf1e1dULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> v(static_cast<size_t>(dim));
  for (double& x : v) x = unit(rng);
  std::vector<double> next(static_cast<size_t>(dim));
  for (int it = 0; it < 300; ++it) {
    for (int i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) acc += cov[static_cast<size_t>(i) * dim + j] * v[static_cast<size_t>(j)];
      next[static_cast<size_t>(i)] = acc;
    }
    if (deflate) {
      double proj = 0.0;
      for (int i = 0; i < dim; ++i) proj += next[static_cast<size_t>(i)] * (*deflate)[static_cast<size_t>(i)];
      for (int i = 0; i < dim; ++i) next[static_cast<size_t>(i)] -= proj * (*deflate)[static_cast<size_t>(i)];
    }
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate spread: fall back to a canonical axis.
      std::fill(v.begin(), v.end(), 0.0);
      v[static_cast<size_t>(canonical_axis % dim)] = 1.0;
      if (deflate) {
        double proj = (*deflate)[static_cast<size_t>(canonical_axis % dim)];
        for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i)] -= proj * (*deflate)[static_cast<size_t>(i)];
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 > 1e-24) {
          for (double& x : v) x /= std::sqrt(n2);
        } else {
          std::fill(v.begin(), v.end(), 0.0);
          v[static_cast<size_t>((canonical_axis + 1) % dim)] = 1.0;
        }
      }
      return v;
    }
    for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i)] = next[static_cast<size_t>(i)] / norm;
  }
  return v;
}

}  // namespace

FieldGrid export_field_grid(VectorFieldParams& p, const FieldConfig& cfg,
                            const std::vector<std::vector<double>>& reference_states, int grid_n,
                            double span_scale) {
  check(reference_states.size() >= 3, kModule, "export_field_grid",
        "need at least 3 reference states to fit a plane, got " +
            std::to_string(reference_states.size()));
  check(grid_n >= 2, kModule, "export_field_grid", "grid resolution must be >= 2");
  const int dim = p.dim;
  for (const auto& s : reference_states)
    check(static_cast<int>(s.size()) == dim, kModule, "export_field_grid",
          "reference state has wrong dimension");

  const size_t n = reference_states.size();
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  for (const auto& s : reference_states)
    for (int i = 0; i < dim; ++i) mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<double> cov(static_cast<size_t>(dim) * dim, 0.0);
  for (const auto& s : reference_states) {
    for (int i = 0; i < dim; ++i) {
      const double di = s[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
      for (int j = 0; j < dim; ++j) {
        cov[static_cast<size_t>(i) * dim + j] +=
            di * (s[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]);
      }
    }
  }
  for (double& v : cov) v /= static_cast<double>(n - 1);

  std::vector<double> v1 = top_eigvec(cov, dim, nullptr, 0);
  std::vector<double> v2 = top_eigvec(cov, dim, &v1, 1);
  // Re-orthonormalize v2 against v1.
  double proj = 0.0;
  for (int i = 0; i < dim; ++i) proj += v2[static_cast<size_t>(i)] * v1[static_cast<size_t>(i)];
  double n2 = 0.0;
  for (int i = 0; i < dim; ++i) {
    v2[static_cast<size_t>(i)] -= proj * v1[static_cast<size_t>(i)];
    n2 += v2[static_cast<size_t>(i)] * v2[static_cast<size_t>(i)];
  }
  if (n2 > 1e-24) {
    for (double& x : v2) x /= std::sqrt(n2);
  } else {
    std::fill(v2.begin(), v2.end(), 0.0);
    v2[dim >= 2 ? 1 : 0] = 1.0;
  }

  // Grid bounds from the projected reference coordinates.
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  bool first = true;
  for (const auto& s : reference_states) {
    double x = 0.0, y = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double d = s[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
      x += d * v1[static_cast<size_t>(i)];
      y += d * v2[static_cast<size_t>(i)];
    }
    if (first) {
      x_min = x_max = x;
      y_min = y_max = y;
      first = false;
    } else {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  auto expand = [span_scale](double& lo, double& hi) {
    const double mid = 0.5 * (lo + hi);
    double half = 0.5 * (hi - lo) * span_scale;
    if (half <= 0.0) half = 1.0;
    lo = mid - half;
    hi = mid + half;
  };
  expand(x_min, x_max);
  expand(y_min, y_max);

  FieldGrid grid;
  grid.grid_n = grid_n;
  grid.basis1 = v1;
  grid.basis2 = v2;
  grid.mean = mean;
  grid.rows.reserve(static_cast<size_t>(grid_n) * grid_n);

  ad::Tape tape;
  tape.set_grad_enabled(false);
  for (int gy = 0; gy < grid_n; ++gy) {
    for (int gx = 0; gx < grid_n; ++gx) {
      const double x = x_min + (x_max - x_min) * gx / (grid_n - 1);
      const double y = y_min + (y_max - y_min) * gy / (grid_n - 1);
      std::vector<double> z(static_cast<size_t>(dim));
      for (int i = 0; i < dim; ++i) {
        z[static_cast<size_t>(i)] = mean[static_cast<size_t>(i)] +
                                    x * v1[static_cast<size_t>(i)] + y * v2[static_cast<size_t>(i)];
      }
      ad::Value zv = tape.constant(1, dim, z);
      ad::Value lambda = decay_coefficient(tape, p, tape.slice_cols(zv, 0, p.c));
      ad::Value f = vector_field(tape, p, cfg, zv, lambda, nullptr);
      auto fv = tape.data(f);
      double dx = 0.0, dy = 0.0;
      for (int i = 0; i < dim; ++i) {
        dx += fv[static_cast<size_t>(i)] * v1[static_cast<size_t>(i)];
        dy += fv[static_cast<size_t>(i)] * v2[static_cast<size_t>(i)];
      }
      grid.rows.push_back({x, y, dx, dy});
    }
  }
  return grid;
}

void write_field_csv(const FieldGrid& grid, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  check(f != nullptr, kModule, "export_field_grid", "cannot open " + path);
  std::fputs("x,y,dx,dy\n", f);
  for (const auto& row : grid.rows) {
    std::fprintf(f, "%.9g,%.9g,%.9g,%.9g\n", row[0], row[1], row[2], row[3]);
  }
  std::fclose(f);
}

nlohmann::json field_grid_json(const FieldGrid& grid) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : grid.rows) rows.push_back({r[0], r[1], r[2], r[3]});
  return {{"grid_n", grid.grid_n},
          {"basis1", grid.basis1},
          {"basis2", grid.basis2},
          {"mean", grid.mean},
          {"rows", rows}};
}

}  // namespace odekit::ode

#include "odekit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "odekit/common.hpp"
#include "odekit/kernels/kernels.hpp"

namespace odekit::train {

namespace {

constexpr const char* kModule = "training_eval";

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<double> draw_noise(std::mt19937_64& rng, int c, double sigma) {
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<double> noise(static_cast<size_t>(c));
  for (double& v : noise) v = gauss(rng);
  return noise;
}

}  // namespace

void Model::init(const ModelConfig& config, int n_nodes, int n_bins, uint64_t seed) {
  cfg = config;
  nodes = n_nodes;
  bins = n_bins;
  check(cfg.c >= 1 && cfg.c < cfg.m, kModule, "init",
        "stochastic dimension c must satisfy 1 <= c < m");
  std::mt19937_64 rng(derive_seed(seed, 0xF00D));
  phi.init(n_bins, cfg.gru_hidden, cfg.gru_layers, cfg.m, rng);
  psi.init(cfg.conv_channels, cfg.c, cfg.sigma_noise, cfg.psi_decimate, rng);
  field.init(cfg.m + cfg.c, cfg.c, cfg.residual_hidden, cfg.decay_hidden, rng);
  decoder.init(cfg.m + cfg.c, cfg.decoder_hidden, n_nodes, n_bins, rng);
  classifier.init(cfg.m + cfg.c, fc::Pooling::max, rng);
}

std::vector<ad::Tensor*> Model::tensors() {
  std::vector<ad::Tensor*> out = trunk_tensors();
  for (ad::Tensor* t : classifier.tensors()) out.push_back(t);
  return out;
}

std::vector<ad::Tensor*> Model::trunk_tensors() {
  std::vector<ad::Tensor*> out = phi.tensors();
  for (ad::Tensor* t : psi.tensors()) out.push_back(t);
  for (ad::Tensor* t : field.tensors()) out.push_back(t);
  for (ad::Tensor* t : decoder.tensors()) out.push_back(t);
  return out;
}

void Model::set_trainable(bool trunk, bool head) {
  for (ad::Tensor* t : trunk_tensors()) t->requires_grad = trunk;
  for (ad::Tensor* t : classifier.tensors()) t->requires_grad = head;
}

std::vector<std::vector<double>> Model::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (ad::Tensor* t : const_cast<Model*>(this)->tensors()) snap.push_back(t->data);
  return snap;
}

void Model::restore(const std::vector<std::vector<double>>& snap) {
  auto ts = tensors();
  check(snap.size() == ts.size(), kModule, "restore", "snapshot does not match model");
  for (size_t i = 0; i < ts.size(); ++i) ts[i]->data = snap[i];
}

void TrainConfig::validate() const {
  check(learning_rate > 0.0, kModule, "config", "learning_rate must be positive");
  check(weight_decay >= 0.0, kModule, "config", "weight_decay must be non-negative");
  check(batch_size >= 1 && eval_batch_size >= 1, kModule, "config", "batch sizes must be >= 1");
  check(max_epochs >= 1, kModule, "config", "max_epochs must be >= 1");
  check(grad_clip_norm > 0.0, kModule, "config", "grad_clip_norm must be positive");
  check(early_stop_patience >= 1, kModule, "config", "early_stop_patience must be >= 1");
  check(stage == "forecast_pretrain" || stage == "classify_finetune", kModule, "config",
        "stage must be forecast_pretrain or classify_finetune");
  check(horizon_k >= 1, kModule, "config", "horizon K must be >= 1");
  check(substeps_per_unit >= 1, kModule, "config", "substeps_per_unit must be >= 1");
  check(observed_epochs >= 1, kModule, "config", "observed_epochs must be >= 1");
  check(sample_stride >= 1, kModule, "config", "sample_stride must be >= 1");
  check(tau >= 1, kModule, "config", "tau must be >= 1");
  check(sigma_noise >= 0.0, kModule, "config", "sigma_noise must be non-negative");
  check(threads >= 1, kModule, "config", "threads must be >= 1");
  fc::pooling_from_string(pooling);
}

std::vector<Sample> enumerate_samples(const std::vector<RecordData>& records,
                                      const std::vector<int>& record_ids, int observed, int horizon,
                                      int stride) {
  std::vector<Sample> samples;
  for (int rid : record_ids) {
    const int total = static_cast<int>(records[static_cast<size_t>(rid)].seq.graphs.size());
    const int last_begin = total - observed - horizon;
    for (int begin = 0; begin <= last_begin; begin += stride) samples.push_back({rid, begin});
  }
  return samples;
}

DataSplit split_dataset(const std::vector<RecordData>& records, const TrainConfig& cfg) {
  std::vector<int> with_event, without_event;
  for (int i = 0; i < static_cast<int>(records.size()); ++i) {
    (records[static_cast<size_t>(i)].has_event ? with_event : without_event).push_back(i);
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5917));
  std::vector<int> train_ids, val_ids, test_ids;
  for (std::vector<int>* stratum : {&with_event, &without_event}) {
    std::shuffle(stratum->begin(), stratum->end(), rng);
    const int n = static_cast<int>(stratum->size());
    int n_val = n >= 3 ? std::max(1, static_cast<int>(std::llround(0.15 * n))) : 0;
    int n_test = n >= 3 ? std::max(1, static_cast<int>(std::llround(0.15 * n))) : 0;
    for (int i = 0; i < n; ++i) {
      const int rid = (*stratum)[static_cast<size_t>(i)];
      if (i < n_val) val_ids.push_back(rid);
      else if (i < n_val + n_test) test_ids.push_back(rid);
      else train_ids.push_back(rid);
    }
  }
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  DataSplit split;
  split.train = enumerate_samples(records, train_ids, cfg.observed_epochs, cfg.horizon_k,
                                  cfg.sample_stride);
  split.val = enumerate_samples(records, val_ids, cfg.observed_epochs, cfg.horizon_k,
                                cfg.sample_stride);
  split.test = enumerate_samples(records, test_ids, cfg.observed_epochs, cfg.horizon_k,
                                 cfg.sample_stride);
  check(!split.train.empty(), kModule, "split_dataset",
        "no training samples; records too short for the configured window");
  return split;
}

void AdamState::reset(const std::vector<ad::Tensor*>& params) {
  slots.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    slots[i].m.assign(params[i]->size(), 0.0);
    slots[i].v.assign(params[i]->size(), 0.0);
  }
  step = 0;
}

void adam_step(const std::vector<ad::Tensor*>& params, AdamState& state, double learning_rate,
               double weight_decay) {
  check(state.slots.size() == params.size(), kModule, "adam_step",
        "optimizer state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ad::Tensor* p = params[pi];
    p->ensure_grad();
    AdamState::Slot& slot = state.slots[pi];
    for (size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw Error(Error::Kind::internal, kModule, "adam_step",
                    "non-finite gradient in parameter '" + p->name + "'");
      }
      slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g;
      slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p->data[i] -= learning_rate * weight_decay * p->data[i];
      p->data[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double clip_gradients(const std::vector<ad::Tensor*>& params, double max_norm) {
  double sq = 0.0;
  for (ad::Tensor* p : params) {
    p->ensure_grad();
    for (double g : p->grad) {
      check(std::isfinite(g), kModule, "clip_gradients", "non-finite gradient");
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (ad::Tensor* p : params)
      for (double& g : p->grad) g *= s;
  }
  return norm;
}

namespace {

// z_s (possibly disabled or noisy), z_g, z0 for one sample.
ad::Value initial_state(ad::Tape& tape, Model& model, const RecordData& rec, const Sample& sample,
                        const TrainConfig& cfg, const double* noise) {
  const int t_obs = cfg.observed_epochs;
  check(sample.begin >= 0 &&
            sample.begin + t_obs + cfg.horizon_k <= static_cast<int>(rec.seq.graphs.size()),
        kModule, "forecast_forward", "sample window out of record range");
  enc::SequenceView view{&rec.seq, sample.begin, t_obs};
  ad::Value z_g = enc::encode_graph_state(tape, model.phi, view);
  ad::Value z_s;
  if (cfg.stochastic_enabled) {
    const size_t start = rec.epoch_starts[static_cast<size_t>(sample.begin)];
    const size_t end = rec.epoch_starts[static_cast<size_t>(sample.begin + t_obs - 1)] +
                       static_cast<size_t>(rec.epoch_len);
    std::vector<double> series =
        enc::channel_mean_series(rec.raw, start, end - start, model.psi.decimate);
    z_s = enc::encode_temporal(tape, model.psi, series, noise);
  } else {
    z_s = tape.constant_fill(1, model.cfg.c, 0.0);
  }
  return enc::build_initial_state(tape, z_s, z_g);
}

}  // namespace

ForecastForward forecast_forward(ad::Tape& tape, Model& model, const RecordData& rec,
                                 const Sample& sample, const TrainConfig& cfg, const double* noise,
                                 const std::vector<double>* gate_coeffs) {
  ForecastForward out;
  ad::Value z0 = initial_state(tape, model, rec, sample, cfg, noise);
  ode::FieldFn field = ode::make_field(tape, model.field, cfg.field_config(), z0, gate_coeffs);
  out.traj = ode::solve_trajectory(tape, field, z0, cfg.horizon_k, cfg.substeps_per_unit);

  std::vector<const std::vector<double>*> truth;
  std::vector<const std::vector<double>*> truth_adj;
  for (int k = 0; k < cfg.horizon_k; ++k) {
    out.predictions.push_back(fc::decode_step(tape, model.decoder, out.traj.states[static_cast<size_t>(k)]));
    const graph::EpochGraph& g =
        rec.seq.graphs[static_cast<size_t>(sample.begin + cfg.observed_epochs + k)];
    truth.push_back(&g.node_features);
    truth_adj.push_back(&g.adjacency);
  }
  out.loss = fc::forecast_loss(tape, out.predictions, truth, model.nodes, model.bins,
                               cfg.beta_adjacency, cfg.beta_adjacency > 0.0 ? &truth_adj : nullptr);
  return out;
}

EncodedSample encode_sample(Model& model, const RecordData& rec, const Sample& sample,
                            const TrainConfig& cfg) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  ad::Value z0 = initial_state(tape, model, rec, sample, cfg, nullptr);
  EncodedSample enc;
  auto z = tape.values(z0);
  enc.z_s.assign(z.begin(), z.begin() + model.cfg.c);
  enc.z_g.assign(z.begin() + model.cfg.c, z.end());
  enc.label = rec.seq.labels[static_cast<size_t>(sample.begin + cfg.observed_epochs - 1)];
  return enc;
}

ClassifierForward classifier_forward(ad::Tape& tape, Model& model, const EncodedSample& encoded,
                                     const TrainConfig& cfg, const double* noise,
                                     const std::vector<double>* gate_coeffs) {
  std::vector<double> z_s = encoded.z_s;
  if (noise != nullptr) {
    for (size_t i = 0; i < z_s.size(); ++i) z_s[i] += noise[i];
  }
  ad::Value z0 = tape.concat_cols(tape.constant(1, model.cfg.c, z_s),
                                  tape.constant(1, model.cfg.m, encoded.z_g));
  ode::FieldFn field = ode::make_field(tape, model.field, cfg.field_config(), z0, gate_coeffs);
  ode::Trajectory traj =
      ode::solve_trajectory(tape, field, z0, cfg.horizon_k, cfg.substeps_per_unit);
  ad::Value pooled = fc::pool_trajectory(tape, traj, fc::pooling_from_string(cfg.pooling));
  ClassifierForward out;
  out.logit = fc::classify_logit(tape, model.classifier, pooled);
  out.loss = fc::bce_loss(tape, out.logit, encoded.label);
  out.nfe = traj.nfe;
  return out;
}

void write_history_jsonl(const History& history, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  check(os.good(), kModule, "write_history", "cannot open " + path);
  for (const EpochRecord& r : history) {
    nlohmann::json row = {{"epoch", r.epoch},
                          {"train_loss", r.train_loss},
                          {"val_metric", r.val_metric},
                          {"lr", r.lr},
                          {"seconds", r.seconds}};
    os << row.dump() << "\n";
  }
}

namespace {

// Eval-mode gate coefficients for the +Random variant: the distribution mean,
// so evaluation stays deterministic.
std::vector<double> eval_gate_coeffs(const TrainConfig& cfg, int dim) {
  if (!cfg.random_gate) return {};
  return std::vector<double>(static_cast<size_t>(dim), 0.5);
}

double mean_val_forecast_loss(const std::vector<RecordData>& records,
                              const std::vector<Sample>& samples, Model& model,
                              const TrainConfig& cfg) {
  if (samples.empty()) return 0.0;
  std::vector<double> losses(samples.size(), 0.0);
  const std::vector<double> coeffs = eval_gate_coeffs(cfg, model.latent_dim());
  parallel_for(static_cast<int>(samples.size()), cfg.threads, [&](int i) {
    ad::Tape tape;
    tape.set_grad_enabled(false);
    ForecastForward fwd =
        forecast_forward(tape, model, records[static_cast<size_t>(samples[static_cast<size_t>(i)].record)],
                         samples[static_cast<size_t>(i)], cfg, nullptr,
                         cfg.random_gate ? &coeffs : nullptr);
    losses[static_cast<size_t>(i)] = tape.scalar_value(fwd.loss);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(samples.size());
}

}  // namespace

History train_forecaster(const std::vector<RecordData>& records, const DataSplit& split,
                         Model& model, const TrainConfig& cfg) {
  cfg.validate();
  check(cfg.stage == "forecast_pretrain", kModule, "train_forecaster",
        "config stage must be forecast_pretrain");
  check(!split.val.empty(), kModule, "train_forecaster", "validation split is empty");

  model.set_trainable(true, false);
  std::vector<ad::Tensor*> params;
  for (ad::Tensor* t : model.trunk_tensors()) {
    if (t->requires_grad) params.push_back(t);
  }
  AdamState adam;
  adam.reset(params);

  History history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<std::vector<double>> best_snap;

  std::vector<Sample> order = split.train;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double t_start = now_seconds();
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0xA11CE, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, 0xB0B, static_cast<uint64_t>(epoch)));

    double train_loss = 0.0;
    size_t seen = 0;
    for (size_t batch_start = 0; batch_start < order.size(); batch_start += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - batch_start);

      // Randomness is pre-drawn in item order so worker scheduling cannot
      // perturb it.
      std::vector<std::vector<double>> noises(batch_n);
      std::vector<std::vector<double>> coeffs(batch_n);
      for (size_t i = 0; i < batch_n; ++i) {
        if (cfg.stochastic_enabled && cfg.sigma_noise > 0.0)
          noises[i] = draw_noise(noise_rng, model.cfg.c, cfg.sigma_noise);
        if (cfg.random_gate)
          coeffs[i] = ode::draw_gate_coefficients(noise_rng, model.latent_dim());
      }

      for (ad::Tensor* p : params) p->zero_grad();
      std::vector<std::unique_ptr<ad::Tape>> tapes(batch_n);
      std::vector<double> losses(batch_n, 0.0);
      parallel_for(static_cast<int>(batch_n), cfg.threads, [&](int i) {
        const Sample& s = order[batch_start + static_cast<size_t>(i)];
        tapes[static_cast<size_t>(i)] = std::make_unique<ad::Tape>();
        ad::Tape& tape = *tapes[static_cast<size_t>(i)];
        ForecastForward fwd = forecast_forward(
            tape, model, records[static_cast<size_t>(s.record)], s, cfg,
            noises[static_cast<size_t>(i)].empty() ? nullptr : noises[static_cast<size_t>(i)].data(),
            cfg.random_gate ? &coeffs[static_cast<size_t>(i)] : nullptr);
        losses[static_cast<size_t>(i)] = tape.scalar_value(fwd.loss);
        tape.backward(fwd.loss);
      });
      for (size_t i = 0; i < batch_n; ++i) {
        if (!std::isfinite(losses[i])) {
          throw Error(Error::Kind::internal, kModule, "train_forecaster",
                      "loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_start / static_cast<size_t>(cfg.batch_size)));
        }
        tapes[i]->apply_leaf_grads(1.0 / static_cast<double>(batch_n));
        train_loss += losses[i];
      }
      seen += batch_n;
      clip_gradients(params, cfg.grad_clip_norm);
      adam_step(params, adam, cfg.learning_rate, cfg.weight_decay);
    }
    train_loss /= static_cast<double>(seen);

    const double val_loss = mean_val_forecast_loss(records, split.val, model, cfg);
    EpochRecord row;
    row.epoch = epoch;
    row.train_loss = train_loss;
    row.val_metric = val_loss;
    row.lr = cfg.learning_rate;
    row.seconds = cfg.timing ? now_seconds() - t_start : 0.0;
    history.push_back(row);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best_snap = model.snapshot();
    } else if (epoch - best_epoch >= cfg.early_stop_patience) {
      break;
    }
  }
  if (!best_snap.empty()) model.restore(best_snap);
  return history;
}

ClassifierEval evaluate_classifier(const std::vector<RecordData>& records,
                                   const std::vector<Sample>& samples, Model& model,
                                   const TrainConfig& cfg) {
  ClassifierEval eval;
  eval.scores.assign(samples.size(), 0.0);
  eval.labels.assign(samples.size(), 0);
  std::vector<long> nfes(samples.size(), 0);
  const std::vector<double> coeffs = eval_gate_coeffs(cfg, model.latent_dim());
  parallel_for(static_cast<int>(samples.size()), cfg.threads, [&](int i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    const RecordData& rec = records[static_cast<size_t>(s.record)];
    ad::Tape tape;
    tape.set_grad_enabled(false);
    ad::Value z0 = initial_state(tape, model, rec, s, cfg, nullptr);
    ode::FieldFn field =
        ode::make_field(tape, model.field, cfg.field_config(), z0, cfg.random_gate ? &coeffs : nullptr);
    ode::Trajectory traj =
        ode::solve_trajectory(tape, field, z0, cfg.horizon_k, cfg.substeps_per_unit);
    ad::Value pooled = fc::pool_trajectory(tape, traj, fc::pooling_from_string(cfg.pooling));
    ad::Value prob = tape.sigmoid(fc::classify_logit(tape, model.classifier, pooled));
    eval.scores[static_cast<size_t>(i)] = tape.scalar_value(prob);
    eval.labels[static_cast<size_t>(i)] =
        rec.seq.labels[static_cast<size_t>(s.begin + cfg.observed_epochs - 1)];
    nfes[static_cast<size_t>(i)] = traj.nfe;
  });
  for (long n : nfes) eval.nfe += n;
  return eval;
}

FinetuneResult finetune_classifier(const std::vector<RecordData>& records, const DataSplit& split,
                                   Model& model, const TrainConfig& cfg) {
  cfg.validate();
  check(cfg.stage == "classify_finetune", kModule, "finetune_classifier",
        "config stage must be classify_finetune");
  check(!split.val.empty() && !split.test.empty(), kModule, "finetune_classifier",
        "validation and test splits must be non-empty");

  auto check_both_classes = [&](const std::vector<Sample>& samples, const char* name) {
    size_t pos = 0;
    for (const Sample& s : samples) {
      pos += records[static_cast<size_t>(s.record)]
                 .seq.labels[static_cast<size_t>(s.begin + cfg.observed_epochs - 1)];
    }
    check(pos > 0 && pos < samples.size(), kModule, "finetune_classifier",
          std::string(name) + " split has a single class; AUROC undefined");
  };
  check_both_classes(split.val, "validation");
  check_both_classes(split.test, "test");

  const bool frozen = !cfg.unfreeze_all;
  model.set_trainable(!frozen, true);
  std::vector<ad::Tensor*> params;
  if (frozen) {
    params = model.classifier.tensors();
  } else {
    params = model.tensors();
  }
  AdamState adam;
  adam.reset(params);

  // Frozen trunk: encoder outputs are deterministic, compute them once.
  std::vector<EncodedSample> train_enc;
  if (frozen) {
    train_enc.assign(split.train.size(), {});
    parallel_for(static_cast<int>(split.train.size()), cfg.threads, [&](int i) {
      const Sample& s = split.train[static_cast<size_t>(i)];
      train_enc[static_cast<size_t>(i)] =
          encode_sample(model, records[static_cast<size_t>(s.record)], s, cfg);
    });
  }

  History history;
  double best_val = -1.0;
  int best_epoch = -1;
  std::vector<std::vector<double>> best_snap;

  std::vector<size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double t_start = now_seconds();
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0xCAFE, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, 0xD00D, static_cast<uint64_t>(epoch)));

    double train_loss = 0.0;
    size_t seen = 0;
    for (size_t batch_start = 0; batch_start < order.size(); batch_start += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - batch_start);
      std::vector<std::vector<double>> noises(batch_n);
      std::vector<std::vector<double>> coeffs(batch_n);
      for (size_t i = 0; i < batch_n; ++i) {
        if (cfg.stochastic_enabled && cfg.sigma_noise > 0.0)
          noises[i] = draw_noise(noise_rng, model.cfg.c, cfg.sigma_noise);
        if (cfg.random_gate)
          coeffs[i] = ode::draw_gate_coefficients(noise_rng, model.latent_dim());
      }
      for (ad::Tensor* p : params) p->zero_grad();
      std::vector<std::unique_ptr<ad::Tape>> tapes(batch_n);
      std::vector<double> losses(batch_n, 0.0);
      parallel_for(static_cast<int>(batch_n), cfg.threads, [&](int i) {
        const size_t si = order[batch_start + static_cast<size_t>(i)];
        const Sample& s = split.train[si];
        tapes[static_cast<size_t>(i)] = std::make_unique<ad::Tape>();
        ad::Tape& tape = *tapes[static_cast<size_t>(i)];
        const double* noise =
            noises[static_cast<size_t>(i)].empty() ? nullptr : noises[static_cast<size_t>(i)].data();
        const std::vector<double>* gc = cfg.random_gate ? &coeffs[static_cast<size_t>(i)] : nullptr;
        ad::Value loss;
        if (frozen) {
          loss = classifier_forward(tape, model, train_enc[si], cfg, noise, gc).loss;
        } else {
          ad::Value z0 = initial_state(tape, model, records[static_cast<size_t>(s.record)], s, cfg,
                                       noise);
          ode::FieldFn field = ode::make_field(tape, model.field, cfg.field_config(), z0, gc);
          ode::Trajectory traj =
              ode::solve_trajectory(tape, field, z0, cfg.horizon_k, cfg.substeps_per_unit);
          ad::Value pooled = fc::pool_trajectory(tape, traj, fc::pooling_from_string(cfg.pooling));
          const int label = records[static_cast<size_t>(s.record)]
                                .seq.labels[static_cast<size_t>(s.begin + cfg.observed_epochs - 1)];
          loss = fc::bce_loss(tape, fc::classify_logit(tape, model.classifier, pooled), label);
        }
        losses[static_cast<size_t>(i)] = tape.scalar_value(loss);
        tape.backward(loss);
      });
      for (size_t i = 0; i < batch_n; ++i) {
        if (!std::isfinite(losses[i])) {
          throw Error(Error::Kind::internal, kModule, "finetune_classifier",
                      "loss diverged at epoch " + std::to_string(epoch));
        }
        tapes[i]->apply_leaf_grads(1.0 / static_cast<double>(batch_n));
        train_loss += losses[i];
      }
      seen += batch_n;
      clip_gradients(params, cfg.grad_clip_norm);
      adam_step(params, adam, cfg.learning_rate, cfg.weight_decay);
    }
    train_loss /= static_cast<double>(seen);

    ClassifierEval val_eval = evaluate_classifier(records, split.val, model, cfg);
    const double val_auroc = metrics::compute_auroc(val_eval.scores, val_eval.labels);

    EpochRecord row;
    row.epoch = epoch;
    row.train_loss = train_loss;
    row.val_metric = val_auroc;
    row.lr = cfg.learning_rate;
    row.seconds = cfg.timing ? now_seconds() - t_start : 0.0;
    history.push_back(row);

    if (val_auroc > best_val) {
      best_val = val_auroc;
      best_epoch = epoch;
      best_snap = model.snapshot();
    } else if (epoch - best_epoch >= cfg.early_stop_patience) {
      break;
    }
  }
  if (!best_snap.empty()) model.restore(best_snap);

  FinetuneResult result;
  result.history = std::move(history);

  const double t_eval = now_seconds();
  ClassifierEval test_eval = evaluate_classifier(records, split.test, model, cfg);
  result.report.auroc = metrics::compute_auroc(test_eval.scores, test_eval.labels);
  metrics::ThresholdMetrics tm = metrics::compute_f1_acc_recall(
      test_eval.scores, test_eval.labels, metrics::ThresholdPolicy::optimal_f1);
  result.report.f1 = tm.f1;
  result.report.accuracy = tm.accuracy;
  result.report.recall = tm.recall;
  ForecastEval fe = evaluate_graph_forecast(records, split.test, model, cfg);
  result.report.gji = fe.gji;
  result.report.cosine_similarity = fe.cosine;
  result.report.nfe = test_eval.nfe + fe.nfe;
  result.report.wall_seconds = cfg.timing ? now_seconds() - t_eval : 0.0;
  return result;
}

ForecastEval evaluate_graph_forecast(const std::vector<RecordData>& records,
                                     const std::vector<Sample>& samples, Model& model,
                                     const TrainConfig& cfg) {
  ForecastEval out;
  if (samples.empty()) return out;
  std::vector<double> gji(samples.size(), 0.0);
  std::vector<double> cosine(samples.size(), 0.0);
  std::vector<long> nfes(samples.size(), 0);
  const std::vector<double> coeffs = eval_gate_coeffs(cfg, model.latent_dim());
  parallel_for(static_cast<int>(samples.size()), cfg.threads, [&](int i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    const RecordData& rec = records[static_cast<size_t>(s.record)];
    ad::Tape tape;
    tape.set_grad_enabled(false);
    ForecastForward fwd = forecast_forward(tape, model, rec, s, cfg, nullptr,
                                           cfg.random_gate ? &coeffs : nullptr);
    double g_acc = 0.0, c_acc = 0.0;
    for (int k = 0; k < cfg.horizon_k; ++k) {
      const graph::EpochGraph& truth =
          rec.seq.graphs[static_cast<size_t>(s.begin + cfg.observed_epochs + k)];
      std::vector<double> pred = tape.values(fwd.predictions[static_cast<size_t>(k)]);
      graph::EpochGraph pred_graph =
          graph::correlation_adjacency(pred, model.nodes, model.bins, cfg.tau);
      graph::EdgeSet pred_edges =
          graph::binarize_adjacency(pred_graph.adjacency, model.nodes, cfg.tau);
      graph::EdgeSet true_edges =
          graph::binarize_adjacency(truth.adjacency, model.nodes, cfg.tau);
      g_acc += graph::global_jaccard(true_edges, pred_edges);
      c_acc += metrics::mean_row_cosine(pred, truth.node_features, model.nodes, model.bins);
    }
    gji[static_cast<size_t>(i)] = g_acc / cfg.horizon_k;
    cosine[static_cast<size_t>(i)] = c_acc / cfg.horizon_k;
    nfes[static_cast<size_t>(i)] = fwd.traj.nfe;
  });
  for (size_t i = 0; i < samples.size(); ++i) {
    out.gji += gji[i];
    out.cosine += cosine[i];
    out.nfe += nfes[i];
  }
  out.gji /= static_cast<double>(samples.size());
  out.cosine /= static_cast<double>(samples.size());
  return out;
}

double persistence_gji(const std::vector<RecordData>& records, const std::vector<Sample>& samples,
                       const TrainConfig& cfg) {
  check(!samples.empty(), kModule, "persistence_gji", "no samples");
  double total = 0.0;
  for (const Sample& s : samples) {
    const RecordData& rec = records[static_cast<size_t>(s.record)];
    const graph::EpochGraph& last =
        rec.seq.graphs[static_cast<size_t>(s.begin + cfg.observed_epochs - 1)];
    graph::EdgeSet pred = graph::binarize_adjacency(last.adjacency, last.n, cfg.tau);
    double acc = 0.0;
    for (int k = 0; k < cfg.horizon_k; ++k) {
      const graph::EpochGraph& truth =
          rec.seq.graphs[static_cast<size_t>(s.begin + cfg.observed_epochs + k)];
      acc += graph::global_jaccard(graph::binarize_adjacency(truth.adjacency, truth.n, cfg.tau),
                                   pred);
    }
    total += acc / cfg.horizon_k;
  }
  return total / static_cast<double>(samples.size());
}

BenchmarkResult benchmark_inference(const std::vector<RecordData>& records,
                                    const std::vector<Sample>& samples, Model& model,
                                    const TrainConfig& cfg, int runs) {
  check(runs >= 5, kModule, "benchmark_inference", "need at least 5 timed runs");
  BenchmarkResult result;
  // Warm-up, also captures the NFE accounting.
  ClassifierEval warm = evaluate_classifier(records, samples, model, cfg);
  result.nfe = warm.nfe;
  std::vector<double> walls(static_cast<size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    const double t0 = now_seconds();
    (void)evaluate_classifier(records, samples, model, cfg);
    walls[static_cast<size_t>(r)] = now_seconds() - t0;
  }
  std::sort(walls.begin(), walls.end());
  result.wall_seconds = walls[walls.size() / 2];
  return result;
}

RecordData featurize_record(signal::SignalRecord raw, const std::string& name,
                            double window_seconds, double step_seconds, int fft_size, int hop,
                            double floor_epsilon, int tau, int threads) {
  RecordData rec;
  rec.name = name;
  rec.raw = std::move(raw);
  signal::EpochSequence epochs = signal::segment_epochs(rec.raw, window_seconds, step_seconds);
  signal::SpectralFeatures feats =
      signal::stft_log_spectrum(epochs, fft_size, hop, floor_epsilon, threads);
  rec.seq = graph::build_graph_sequence(feats, epochs.epoch_labels, tau, threads);
  rec.epoch_starts = epochs.start_samples;
  rec.epoch_len = epochs.epoch_len;
  for (uint8_t l : rec.seq.labels) rec.has_event = rec.has_event || (l == 1);
  return rec;
}

void save_features_json(const RecordData& rec, const std::string& record_path,
                        const std::string& out_path, double window_seconds, double step_seconds,
                        int fft_size, int hop, double floor_epsilon) {
  check(!rec.seq.graphs.empty(), kModule, "save_features", "empty graph sequence");
  const graph::EpochGraph& g0 = rec.seq.graphs[0];
  bool sparsity_ok = true;
  for (const graph::EpochGraph& g : rec.seq.graphs) {
    std::vector<double> dense = graph::abs_pearson_matrix(g.node_features, g.n, g.d);
    std::vector<double> presym = graph::top_tau_rows(dense, g.n, g.tau);
    for (int i = 0; i < g.n && sparsity_ok; ++i) {
      int nnz = 0;
      for (int j = 0; j < g.n; ++j)
        if (presym[static_cast<size_t>(i) * g.n + j] != 0.0) ++nnz;
      sparsity_ok = nnz <= g.tau;
    }
  }

  nlohmann::json j;
  j["record"] = record_path;
  j["n"] = g0.n;
  j["d"] = g0.d;
  j["tau"] = g0.tau;
  j["window_seconds"] = window_seconds;
  j["step_seconds"] = step_seconds;
  j["fft_size"] = fft_size;
  j["hop"] = hop;
  j["floor_epsilon"] = floor_epsilon;
  j["epoch_len"] = rec.epoch_len;
  j["epoch_starts"] = rec.epoch_starts;
  j["labels"] = rec.seq.labels;
  j["row_sparsity_ok"] = sparsity_ok;
  nlohmann::json epochs = nlohmann::json::array();
  for (const graph::EpochGraph& g : rec.seq.graphs) epochs.push_back(graph::epoch_graph_to_json(g));
  j["epochs"] = std::move(epochs);

  std::ofstream os(out_path, std::ios::trunc);
  check(os.good(), kModule, "save_features", "cannot open " + out_path);
  os << j.dump() << "\n";
}

RecordData load_features_json(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), kModule, "load_features", "cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail(kModule, "load_features", path + ": " + e.what());
  }

  RecordData rec;
  rec.name = std::filesystem::path(path).stem().string();
  std::string record_path = j.at("record").get<std::string>();
  if (!std::filesystem::path(record_path).is_absolute()) {
    record_path = (std::filesystem::path(path).parent_path() / record_path).string();
  }
  rec.raw = signal::load_record(record_path);
  rec.epoch_len = j.at("epoch_len").get<int>();
  rec.epoch_starts = j.at("epoch_starts").get<std::vector<size_t>>();
  rec.seq.labels = j.at("labels").get<std::vector<uint8_t>>();
  for (const auto& e : j.at("epochs")) rec.seq.graphs.push_back(graph::epoch_graph_from_json(e));
  check(rec.seq.graphs.size() == rec.seq.labels.size() &&
            rec.seq.graphs.size() == rec.epoch_starts.size(),
        kModule, "load_features", path + ": inconsistent epoch arrays");
  for (uint8_t l : rec.seq.labels) rec.has_event = rec.has_event || (l == 1);
  return rec;
}

}  // namespace odekit::train

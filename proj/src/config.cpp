#include "odekit/config.hpp"

#include <fstream>
#include <set>

#include "odekit/common.hpp"

namespace odekit::config {

namespace {

constexpr const char* kModule = "cli";

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const std::string& scope) {
  check(j.is_object(), kModule, "config", scope + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    check(allowed.count(it.key()) > 0, kModule, "config",
          "unknown key '" + scope + "." + it.key() + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  require_keys(j, {"seed", "threads", "out_dir", "timing", "synth", "featurize", "model", "train",
                   "field"},
               "config");
  read(j, "seed", cfg.seed);
  read(j, "threads", cfg.threads);
  read(j, "out_dir", cfg.out_dir);
  read(j, "timing", cfg.timing);

  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    require_keys(s,
                 {"records", "channels", "sample_rate", "duration_s", "event_fraction",
                  "event_windows", "record_gain_min", "record_gain_max", "noise_scale_min",
                  "noise_scale_max", "clique_size", "clique_amp_min", "clique_amp_max",
                  "weak_amp_min", "weak_amp_max"},
                 "synth");
    read(s, "records", cfg.synth.records);
    read(s, "channels", cfg.synth.channels);
    read(s, "sample_rate", cfg.synth.sample_rate);
    read(s, "duration_s", cfg.synth.duration_s);
    read(s, "event_fraction", cfg.synth.event_fraction);
    if (s.contains("event_windows")) {
      cfg.synth.event_windows.clear();
      for (const auto& w : s.at("event_windows")) {
        check(w.is_array() && w.size() == 2, kModule, "config",
              "synth.event_windows entries must be [start, end]");
        cfg.synth.event_windows.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());
      }
    }
    read(s, "record_gain_min", cfg.synth.record_gain_min);
    read(s, "record_gain_max", cfg.synth.record_gain_max);
    read(s, "noise_scale_min", cfg.synth.noise_scale_min);
    read(s, "noise_scale_max", cfg.synth.noise_scale_max);
    read(s, "clique_size", cfg.synth.clique_size);
    read(s, "clique_amp_min", cfg.synth.clique_amp_min);
    read(s, "clique_amp_max", cfg.synth.clique_amp_max);
    read(s, "weak_amp_min", cfg.synth.weak_amp_min);
    read(s, "weak_amp_max", cfg.synth.weak_amp_max);
  }

  if (j.contains("featurize")) {
    const auto& f = j.at("featurize");
    require_keys(f, {"window_seconds", "step_seconds", "fft_size", "hop", "floor_epsilon", "tau"},
                 "featurize");
    read(f, "window_seconds", cfg.featurize.window_seconds);
    read(f, "step_seconds", cfg.featurize.step_seconds);
    read(f, "fft_size", cfg.featurize.fft_size);
    read(f, "hop", cfg.featurize.hop);
    read(f, "floor_epsilon", cfg.featurize.floor_epsilon);
    read(f, "tau", cfg.featurize.tau);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_keys(m,
                 {"gru_hidden", "gru_layers", "m", "c", "decay_hidden", "residual_hidden",
                  "decoder_hidden", "conv_channels", "sigma_noise", "psi_decimate"},
                 "model");
    read(m, "gru_hidden", cfg.model.gru_hidden);
    read(m, "gru_layers", cfg.model.gru_layers);
    read(m, "m", cfg.model.m);
    read(m, "c", cfg.model.c);
    read(m, "decay_hidden", cfg.model.decay_hidden);
    read(m, "residual_hidden", cfg.model.residual_hidden);
    read(m, "decoder_hidden", cfg.model.decoder_hidden);
    read(m, "conv_channels", cfg.model.conv_channels);
    read(m, "sigma_noise", cfg.model.sigma_noise);
    read(m, "psi_decimate", cfg.model.psi_decimate);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t,
                 {"learning_rate", "weight_decay", "batch_size", "eval_batch_size", "max_epochs",
                  "grad_clip_norm", "early_stop_patience", "horizon_k", "substeps_per_unit",
                  "freeze_stochastic_block", "gate_enabled", "stochastic_enabled", "random_gate",
                  "pooling", "observed_epochs", "sample_stride", "beta_adjacency", "unfreeze_all"},
                 "train");
    read(t, "learning_rate", cfg.train.learning_rate);
    read(t, "weight_decay", cfg.train.weight_decay);
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "eval_batch_size", cfg.train.eval_batch_size);
    read(t, "max_epochs", cfg.train.max_epochs);
    read(t, "grad_clip_norm", cfg.train.grad_clip_norm);
    read(t, "early_stop_patience", cfg.train.early_stop_patience);
    read(t, "horizon_k", cfg.train.horizon_k);
    read(t, "substeps_per_unit", cfg.train.substeps_per_unit);
    read(t, "freeze_stochastic_block", cfg.train.freeze_stochastic_block);
    read(t, "gate_enabled", cfg.train.gate_enabled);
    read(t, "stochastic_enabled", cfg.train.stochastic_enabled);
    read(t, "random_gate", cfg.train.random_gate);
    read(t, "pooling", cfg.train.pooling);
    read(t, "observed_epochs", cfg.train.observed_epochs);
    read(t, "sample_stride", cfg.train.sample_stride);
    read(t, "beta_adjacency", cfg.train.beta_adjacency);
    read(t, "unfreeze_all", cfg.train.unfreeze_all);
  }

  if (j.contains("field")) {
    const auto& f = j.at("field");
    require_keys(f, {"grid", "span", "max_reference_samples"}, "field");
    read(f, "grid", cfg.field.grid);
    read(f, "span", cfg.field.span);
    read(f, "max_reference_samples", cfg.field.max_reference_samples);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), kModule, "config", "cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail(kModule, "config", path + ": " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& [a, b] : cfg.synth.event_windows) windows.push_back({a, b});
  return {
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"out_dir", cfg.out_dir},
      {"timing", cfg.timing},
      {"synth",
       {{"records", cfg.synth.records},
        {"channels", cfg.synth.channels},
        {"sample_rate", cfg.synth.sample_rate},
        {"duration_s", cfg.synth.duration_s},
        {"event_fraction", cfg.synth.event_fraction},
        {"event_windows", windows},
        {"record_gain_min", cfg.synth.record_gain_min},
        {"record_gain_max", cfg.synth.record_gain_max},
        {"noise_scale_min", cfg.synth.noise_scale_min},
        {"noise_scale_max", cfg.synth.noise_scale_max},
        {"clique_size", cfg.synth.clique_size},
        {"clique_amp_min", cfg.synth.clique_amp_min},
        {"clique_amp_max", cfg.synth.clique_amp_max},
        {"weak_amp_min", cfg.synth.weak_amp_min},
        {"weak_amp_max", cfg.synth.weak_amp_max}}},
      {"featurize",
       {{"window_seconds", cfg.featurize.window_seconds},
        {"step_seconds", cfg.featurize.step_seconds},
        {"fft_size", cfg.featurize.fft_size},
        {"hop", cfg.featurize.hop},
        {"floor_epsilon", cfg.featurize.floor_epsilon},
        {"tau", cfg.featurize.tau}}},
      {"model",
       {{"gru_hidden", cfg.model.gru_hidden},
        {"gru_layers", cfg.model.gru_layers},
        {"m", cfg.model.m},
        {"c", cfg.model.c},
        {"decay_hidden", cfg.model.decay_hidden},
        {"residual_hidden", cfg.model.residual_hidden},
        {"decoder_hidden", cfg.model.decoder_hidden},
        {"conv_channels", cfg.model.conv_channels},
        {"sigma_noise", cfg.model.sigma_noise},
        {"psi_decimate", cfg.model.psi_decimate}}},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"weight_decay", cfg.train.weight_decay},
        {"batch_size", cfg.train.batch_size},
        {"eval_batch_size", cfg.train.eval_batch_size},
        {"max_epochs", cfg.train.max_epochs},
        {"grad_clip_norm", cfg.train.grad_clip_norm},
        {"early_stop_patience", cfg.train.early_stop_patience},
        {"horizon_k", cfg.train.horizon_k},
        {"substeps_per_unit", cfg.train.substeps_per_unit},
        {"freeze_stochastic_block", cfg.train.freeze_stochastic_block},
        {"gate_enabled", cfg.train.gate_enabled},
        {"stochastic_enabled", cfg.train.stochastic_enabled},
        {"random_gate", cfg.train.random_gate},
        {"pooling", cfg.train.pooling},
        {"observed_epochs", cfg.train.observed_epochs},
        {"sample_stride", cfg.train.sample_stride},
        {"beta_adjacency", cfg.train.beta_adjacency},
        {"unfreeze_all", cfg.train.unfreeze_all}}},
      {"field",
       {{"grid", cfg.field.grid},
        {"span", cfg.field.span},
        {"max_reference_samples", cfg.field.max_reference_samples}}}};
}

signal::SyntheticSpec RunConfig::synthetic_spec(uint64_t record_seed, bool with_events) const {
  signal::SyntheticSpec spec;
  spec.channels = synth.channels;
  spec.sample_rate = synth.sample_rate;
  spec.duration_s = synth.duration_s;
  spec.seed = record_seed;
  spec.window_seconds = featurize.window_seconds;
  if (with_events) spec.event_windows = synth.event_windows;
  spec.record_gain_min = synth.record_gain_min;
  spec.record_gain_max = synth.record_gain_max;
  spec.noise_scale_min = synth.noise_scale_min;
  spec.noise_scale_max = synth.noise_scale_max;
  spec.clique_size = synth.clique_size;
  spec.clique_amp_min = synth.clique_amp_min;
  spec.clique_amp_max = synth.clique_amp_max;
  spec.weak_amp_min = synth.weak_amp_min;
  spec.weak_amp_max = synth.weak_amp_max;
  return spec;
}

train::TrainConfig RunConfig::train_config(const std::string& stage) const {
  train::TrainConfig t;
  t.learning_rate = train.learning_rate;
  t.weight_decay = train.weight_decay;
  t.batch_size = train.batch_size;
  t.eval_batch_size = train.eval_batch_size;
  t.max_epochs = train.max_epochs;
  t.grad_clip_norm = train.grad_clip_norm;
  t.early_stop_patience = train.early_stop_patience;
  t.seed = seed;
  t.stage = stage;
  t.horizon_k = train.horizon_k;
  t.substeps_per_unit = train.substeps_per_unit;
  t.freeze_stochastic_block = train.freeze_stochastic_block;
  t.gate_enabled = train.gate_enabled;
  t.stochastic_enabled = train.stochastic_enabled;
  t.random_gate = train.random_gate;
  t.pooling = train.pooling;
  t.tau = featurize.tau;
  t.sigma_noise = model.sigma_noise;
  t.observed_epochs = train.observed_epochs;
  t.sample_stride = train.sample_stride;
  t.beta_adjacency = train.beta_adjacency;
  t.unfreeze_all = train.unfreeze_all;
  t.threads = threads;
  t.timing = timing;
  return t;
}

}  // namespace odekit::config

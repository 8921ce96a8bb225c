#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "odekit/signal.hpp"
#include "odekit/training.hpp"

namespace odekit::config {

// One JSON document governs every stage; every field has a default, CLI
// flags override file values, unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 123;
  int threads = 1;
  std::string out_dir = "run";
  bool timing = false;

  struct Synth {
    int records = 40;
    int channels = 19;
    double sample_rate = 256.0;
    double duration_s = 60.0;
    double event_fraction = 0.5;
    std::vector<std::pair<double, double>> event_windows = {{14.0, 26.0}, {38.0, 50.0}};
    double record_gain_min = 0.75;
    double record_gain_max = 1.45;
    double noise_scale_min = 0.45;
    double noise_scale_max = 0.80;
    int clique_size = 7;
    double clique_amp_min = 1.15;
    double clique_amp_max = 1.85;
    double weak_amp_min = 0.45;
    double weak_amp_max = 0.80;
  } synth;

  struct Featurize {
    double window_seconds = 12.0;
    double step_seconds = 1.0;
    int fft_size = 256;
    int hop = 128;
    double floor_epsilon = 1e-8;
    int tau = 3;
  } featurize;

  train::ModelConfig model;

  struct Train {
    double learning_rate = 3e-4;
    double weight_decay = 5e-4;
    int batch_size = 128;
    int eval_batch_size = 256;
    int max_epochs = 100;
    double grad_clip_norm = 5.0;
    int early_stop_patience = 5;
    int horizon_k = 1;
    int substeps_per_unit = 4;
    bool freeze_stochastic_block = true;
    bool gate_enabled = true;
    bool stochastic_enabled = true;
    bool random_gate = false;
    std::string pooling = "max";
    int observed_epochs = 8;
    int sample_stride = 1;
    double beta_adjacency = 0.0;
    bool unfreeze_all = false;
  } train;

  struct Field {
    int grid = 20;
    double span = 1.2;
    int max_reference_samples = 64;
  } field;

  signal::SyntheticSpec synthetic_spec(uint64_t record_seed, bool with_events) const;
  train::TrainConfig train_config(const std::string& stage) const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace odekit::config

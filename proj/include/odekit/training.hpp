#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "odekit/autodiff.hpp"
#include "odekit/encoders.hpp"
#include "odekit/forecaster.hpp"
#include "odekit/graph.hpp"
#include "odekit/metrics.hpp"
#include "odekit/ode.hpp"
#include "odekit/signal.hpp"

namespace odekit::train {

struct ModelConfig {
  int gru_hidden = 64;
  int gru_layers = 2;
  int m = 84;
  int c = 16;
  int decay_hidden = 32;
  int residual_hidden = 0;  // 0: use m + c
  int decoder_hidden = 128;
  std::vector<int> conv_channels = {16, 32, 64};
  double sigma_noise = 0.1;
  int psi_decimate = 1;
};

struct Model {
  ModelConfig cfg;
  int nodes = 0, bins = 0;
  enc::GraphEncoderParams phi;
  enc::TemporalEncoderParams psi;
  ode::VectorFieldParams field;
  fc::DecoderParams decoder;
  fc::ClassifierParams classifier;

  int latent_dim() const { return cfg.m + cfg.c; }
  void init(const ModelConfig& config, int n_nodes, int n_bins, uint64_t seed);
  std::vector<ad::Tensor*> tensors();
  std::vector<ad::Tensor*> trunk_tensors();
  void set_trainable(bool trunk, bool head);
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);
};

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 5e-4;
  int batch_size = 128;
  int eval_batch_size = 256;
  int max_epochs = 100;
  double grad_clip_norm = 5.0;
  int early_stop_patience = 5;
  uint64_t seed = 123;
  std::string stage = "forecast_pretrain";  // or classify_finetune
  int horizon_k = 1;
  int substeps_per_unit = 4;
  bool freeze_stochastic_block = true;
  bool gate_enabled = true;
  bool stochastic_enabled = true;
  bool random_gate = false;
  std::string pooling = "max";
  int tau = 3;
  double sigma_noise = 0.1;

  int observed_epochs = 8;
  int sample_stride = 1;
  double beta_adjacency = 0.0;
  bool unfreeze_all = false;
  int threads = 1;
  bool timing = false;

  void validate() const;
  ode::FieldConfig field_config() const {
    return {gate_enabled, random_gate, freeze_stochastic_block};
  }
};

// One featurized recording: the raw signal plus its spectral graph sequence
// and windowing bookkeeping.
struct RecordData {
  std::string name;
  signal::SignalRecord raw;
  graph::SpectralGraphSequence seq;
  std::vector<size_t> epoch_starts;
  int epoch_len = 0;
  bool has_event = false;
};

// A training sample: observed epochs [begin, begin+T), future [begin+T, begin+T+K).
struct Sample {
  int record = 0;
  int begin = 0;
};

struct DataSplit {
  std::vector<Sample> train, val, test;
};

std::vector<Sample> enumerate_samples(const std::vector<RecordData>& records,
                                      const std::vector<int>& record_ids, int observed, int horizon,
                                      int stride);

// Record-disjoint 70/15/15, stratified by event presence so every split sees
// both classes whenever the corpus does.
DataSplit split_dataset(const std::vector<RecordData>& records, const TrainConfig& cfg);

// Optimizer ---------------------------------------------------------------

struct AdamState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void reset(const std::vector<ad::Tensor*>& params);
};

// Bias-corrected Adam with decoupled weight decay; consumes param->grad.
// Non-finite gradients abort naming the parameter.
void adam_step(const std::vector<ad::Tensor*>& params, AdamState& state, double learning_rate,
               double weight_decay);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_gradients(const std::vector<ad::Tensor*>& params, double max_norm);

// Forward builders ---------------------------------------------------------

struct ForecastForward {
  ad::Value loss;
  ode::Trajectory traj;
  std::vector<ad::Value> predictions;  // 1 x (N*d) per step
};

// noise: c values added to z_s, or nullptr (eval mode). gate_coeffs: dim
// values when cfg.random_gate, pre-drawn by the caller.
ForecastForward forecast_forward(ad::Tape& tape, Model& model, const RecordData& rec,
                                 const Sample& sample, const TrainConfig& cfg, const double* noise,
                                 const std::vector<double>* gate_coeffs);

// Deterministic encoder outputs for a sample (no tape gradients).
struct EncodedSample {
  std::vector<double> z_s;  // c
  std::vector<double> z_g;  // m
  int label = 0;
};
EncodedSample encode_sample(Model& model, const RecordData& rec, const Sample& sample,
                            const TrainConfig& cfg);

// Trajectory + pooled classification from precomputed encoder outputs.
struct ClassifierForward {
  ad::Value logit;
  ad::Value loss;
  long nfe = 0;
};
ClassifierForward classifier_forward(ad::Tape& tape, Model& model, const EncodedSample& encoded,
                                     const TrainConfig& cfg, const double* noise,
                                     const std::vector<double>* gate_coeffs);

// Training loops -----------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};
using History = std::vector<EpochRecord>;

void write_history_jsonl(const History& history, const std::string& path);

// Stage 1: minimizes the forecast loss, early-stops on validation loss,
// leaves the model at the best-validation checkpoint.
History train_forecaster(const std::vector<RecordData>& records, const DataSplit& split,
                         Model& model, const TrainConfig& cfg);

struct FinetuneResult {
  History history;
  metrics::MetricsReport report;  // test split
};

// Stage 2: trains the classifier head (trunk frozen unless unfreeze_all),
// selects the checkpoint by validation AUROC.
FinetuneResult finetune_classifier(const std::vector<RecordData>& records, const DataSplit& split,
                                   Model& model, const TrainConfig& cfg);

// Evaluation ----------------------------------------------------------------

struct ClassifierEval {
  std::vector<double> scores;
  std::vector<int> labels;
  long nfe = 0;
};
ClassifierEval evaluate_classifier(const std::vector<RecordData>& records,
                                   const std::vector<Sample>& samples, Model& model,
                                   const TrainConfig& cfg);

struct ForecastEval {
  double gji = 0.0;
  double cosine = 0.0;
  long nfe = 0;
};
ForecastEval evaluate_graph_forecast(const std::vector<RecordData>& records,
                                     const std::vector<Sample>& samples, Model& model,
                                     const TrainConfig& cfg);

// Predicting the last observed graph for every future step.
double persistence_gji(const std::vector<RecordData>& records, const std::vector<Sample>& samples,
                       const TrainConfig& cfg);

struct BenchmarkResult {
  double wall_seconds = 0.0;  // median of runs
  long nfe = 0;
};
BenchmarkResult benchmark_inference(const std::vector<RecordData>& records,
                                    const std::vector<Sample>& samples, Model& model,
                                    const TrainConfig& cfg, int runs = 5);

// Dataset I/O ----------------------------------------------------------------

RecordData featurize_record(signal::SignalRecord raw, const std::string& name,
                            double window_seconds, double step_seconds, int fft_size, int hop,
                            double floor_epsilon, int tau, int threads);

void save_features_json(const RecordData& rec, const std::string& record_path,
                        const std::string& out_path, double window_seconds, double step_seconds,
                        int fft_size, int hop, double floor_epsilon);

// Loads a feature file and the raw record it references (relative paths are
// resolved against the feature file's directory).
RecordData load_features_json(const std::string& path);

}  // namespace odekit::train

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "odekit/common.hpp"
#include "odekit/metrics.hpp"
#include "odekit/signal.hpp"
#include "odekit/training.hpp"

using namespace odekit;
using train::Model;
using train::ModelConfig;
using train::RecordData;
using train::TrainConfig;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.gru_hidden = 4;
  mc.gru_layers = 1;
  mc.m = 3;
  mc.c = 1;
  mc.decay_hidden = 4;
  mc.decoder_hidden = 8;
  mc.conv_channels = {3, 3, 3};
  mc.sigma_noise = 0.0;
  return mc;
}

TrainConfig toy_train_config(uint64_t seed) {
  TrainConfig tc;
  tc.stage = "forecast_pretrain";
  tc.batch_size = 1;
  tc.eval_batch_size = 8;
  tc.max_epochs = 100;
  tc.early_stop_patience = 5;
  tc.seed = seed;
  tc.horizon_k = 1;
  tc.substeps_per_unit = 2;
  tc.observed_epochs = 2;
  tc.sample_stride = 1;
  tc.stochastic_enabled = false;
  tc.tau = 1;
  tc.sigma_noise = 0.0;
  return tc;
}

// Records whose every epoch carries the same 2 x 3 feature matrix; the
// future is that constant, so the decoder bias alone can represent it.
std::vector<RecordData> constant_records(int count, int epochs, const std::vector<double>& m) {
  std::vector<RecordData> records;
  for (int r = 0; r < count; ++r) {
    RecordData rec;
    rec.name = "const_" + std::to_string(r);
    rec.epoch_len = 4;
    for (int e = 0; e < epochs; ++e) {
      graph::EpochGraph g;
      g.n = 2;
      g.d = 3;
      g.tau = 1;
      g.node_features = m;
      g.adjacency = {0.0, 0.5, 0.5, 0.0};
      rec.seq.graphs.push_back(g);
      rec.seq.labels.push_back(0);
      rec.epoch_starts.push_back(static_cast<size_t>(e) * 4);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// Records whose epochs are labeled, with features either separated by label
// (separable = true) or pure noise (separable = false).
std::vector<RecordData> labeled_records(int count, int epochs, bool separable, uint64_t seed) {
  std::vector<RecordData> records;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int r = 0; r < count; ++r) {
    RecordData rec;
    rec.name = "lab_" + std::to_string(r);
    rec.epoch_len = 4;
    for (int e = 0; e < epochs; ++e) {
      const int label = static_cast<int>(rng() % 2);
      const double mu = separable ? (label == 1 ? 1.5 : -1.5) : 0.0;
      graph::EpochGraph g;
      g.n = 2;
      g.d = 3;
      g.tau = 1;
      g.node_features.resize(6);
      for (double& v : g.node_features) v = mu + noise(rng);
      g.adjacency = {0.0, 0.5, 0.5, 0.0};
      rec.seq.graphs.push_back(g);
      rec.seq.labels.push_back(static_cast<uint8_t>(label));
      rec.epoch_starts.push_back(static_cast<size_t>(e) * 4);
      rec.has_event = true;  // both classes appear in every record
    }
    records.push_back(std::move(rec));
  }
  return records;
}

double brute_force_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("adam leaves parameters and moments alone under zero gradient") {
  ad::Tensor p(2, 2, 1.25);
  p.requires_grad = true;
  p.name = "p";
  p.ensure_grad();
  train::AdamState state;
  state.reset({&p});
  const auto before = p.data;
  train::adam_step({&p}, state, 1e-3, 0.0);
  CHECK(p.data == before);
  CHECK(state.step == 1);
  for (double v : state.slots[0].m) CHECK(v == 0.0);
  for (double v : state.slots[0].v) CHECK(v == 0.0);
}

TEST_CASE("adam under a constant gradient matches the moment recursion oracle") {
  const double g = 0.75, lr = 1e-2;
  ad::Tensor p(1, 1, 2.0);
  p.requires_grad = true;
  p.name = "p";
  train::AdamState state;
  state.reset({&p});

  double oracle = 2.0, m = 0.0, v = 0.0;
  double prev = p.data[0];
  for (int step = 1; step <= 200; ++step) {
    p.ensure_grad();
    p.grad[0] = g;
    train::adam_step({&p}, state, lr, 0.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, step));
    const double vhat = v / (1.0 - std::pow(0.999, step));
    oracle -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.data[0] == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(p.data[0] < prev);  // moves monotonically against the gradient sign
    if (step > 5) {
      CHECK(prev - p.data[0] == doctest::Approx(lr).epsilon(0.05));  // step size -> lr
    }
    prev = p.data[0];
  }
}

TEST_CASE("decoupled weight decay shrinks parameters by (1 - lr wd) per step") {
  ad::Tensor p(1, 2, 4.0);
  p.requires_grad = true;
  p.name = "p";
  p.ensure_grad();
  train::AdamState state;
  state.reset({&p});
  const double lr = 0.01, wd = 0.5;
  train::adam_step({&p}, state, lr, wd);
  for (double v : p.data) CHECK(v == doctest::Approx(4.0 * (1.0 - lr * wd)).epsilon(1e-15));
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
  ad::Tensor p(1, 1, 0.0);
  p.requires_grad = true;
  p.name = "field.gate.w";
  p.ensure_grad();
  p.grad[0] = std::numeric_limits<double>::quiet_NaN();
  train::AdamState state;
  state.reset({&p});
  try {
    train::adam_step({&p}, state, 1e-3, 0.0);
    FAIL("expected abort");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("field.gate.w") != std::string::npos);
  }
}

TEST_CASE("gradient clipping follows the documented boundary behavior") {
  auto make = [](std::vector<double> g) {
    ad::Tensor t(1, static_cast<int>(g.size()), 0.0);
    t.requires_grad = true;
    t.ensure_grad();
    t.grad = std::move(g);
    return t;
  };
  {
    ad::Tensor t = make({1.5, 2.0});  // norm 2.5
    train::clip_gradients({&t}, 5.0);
    CHECK(t.grad == std::vector<double>{1.5, 2.0});
  }
  {
    ad::Tensor t = make({3.0, 4.0});  // norm exactly 5: inclusive boundary
    train::clip_gradients({&t}, 5.0);
    CHECK(t.grad == std::vector<double>{3.0, 4.0});
  }
  {
    ad::Tensor t = make({6.0, 8.0});
    const double pre = train::clip_gradients({&t}, 5.0);
    CHECK(pre == 10.0);
    CHECK(t.grad[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(t.grad[1] == doctest::Approx(4.0).epsilon(1e-15));
  }
  // Post-clip norm property over random draws.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    ad::Tensor a = make({dist(rng), dist(rng), dist(rng)});
    ad::Tensor b = make({dist(rng), dist(rng)});
    train::clip_gradients({&a, &b}, 1.7);
    double sq = 0.0;
    for (double g : a.grad) sq += g * g;
    for (double g : b.grad) sq += g * g;
    CHECK(std::sqrt(sq) <= 1.7 + 1e-12);
  }
}

TEST_CASE("auroc matches hand values and the pairwise oracle") {
  CHECK(metrics::compute_auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(metrics::compute_auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);

  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  CHECK(metrics::compute_auroc(s, l) == doctest::Approx(brute_force_auroc(s, l)).epsilon(1e-15));

  CHECK_THROWS_AS(metrics::compute_auroc({0.1, 0.2}, {1, 1}), Error);
}

TEST_CASE("auroc equals the O(PN) oracle on random instances up to 200 points") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = 5 + rng() % 196;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (size_t i = 0; i < n; ++i) {
      // Quantized scores so ties actually occur.
      scores[i] = std::floor(dist(rng) * 20.0) / 20.0;
      labels[i] = static_cast<int>(rng() % 2);
      pos = pos || labels[i] == 1;
      neg = neg || labels[i] == 0;
    }
    if (!pos) labels[0] = 1;
    if (!neg) labels[n - 1] = 0;
    CHECK(metrics::compute_auroc(scores, labels) ==
          doctest::Approx(brute_force_auroc(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("optimal-F1 sweep matches hand values and exhaustive enumeration") {
  // Perfect classifier.
  metrics::ThresholdMetrics perfect = metrics::compute_f1_acc_recall(
      {0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}, metrics::ThresholdPolicy::optimal_f1);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.recall == 1.0);

  // All-positive predictor on balanced labels.
  metrics::ThresholdMetrics all_pos = metrics::compute_f1_acc_recall(
      {0.7, 0.7, 0.7, 0.7}, {1, 0, 1, 0}, metrics::ThresholdPolicy::optimal_f1);
  CHECK(all_pos.recall == 1.0);
  CHECK(all_pos.accuracy == 0.5);
  CHECK(all_pos.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // Random 20-point instances versus exhaustive enumeration.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> scores(20);
    std::vector<int> labels(20);
    for (size_t i = 0; i < 20; ++i) {
      scores[i] = std::floor(dist(rng) * 10.0) / 10.0;
      labels[i] = static_cast<int>(rng() % 2);
    }
    labels[0] = 1;
    labels[1] = 0;
    metrics::ThresholdMetrics got =
        metrics::compute_f1_acc_recall(scores, labels, metrics::ThresholdPolicy::optimal_f1);

    double best_f1 = -1.0;
    for (double t : scores) {
      size_t tp = 0, fp = 0, fn = 0;
      for (size_t i = 0; i < 20; ++i) {
        const bool pred = scores[i] >= t;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
      }
      const double denom = 2.0 * tp + fp + fn;
      best_f1 = std::max(best_f1, denom > 0 ? 2.0 * tp / denom : 0.0);
    }
    CHECK(got.f1 == doctest::Approx(best_f1).epsilon(1e-12));
  }

  // Fixed-threshold policy.
  metrics::ThresholdMetrics fixed = metrics::compute_f1_acc_recall(
      {0.4, 0.6, 0.4, 0.6}, {0, 1, 1, 0}, metrics::ThresholdPolicy::fixed_half);
  CHECK(fixed.threshold == 0.5);
}

TEST_CASE("training on a constant future reaches 1e-3 validation loss") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(5, 10, target);
  TrainConfig tc = toy_train_config(11);
  train::DataSplit split = train::split_dataset(records, tc);
  Model model;
  model.init(tiny_model_config(), 2, 3, tc.seed);
  train::History history = train::train_forecaster(records, split, model, tc);

  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : history) best = std::min(best, row.val_metric);
  INFO("best val loss " << best << " over " << history.size() << " epochs");
  CHECK(best < 1e-3);
}

TEST_CASE("two runs with the same seed produce identical loss curves") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(5, 8, target);
  TrainConfig tc = toy_train_config(13);
  tc.max_epochs = 6;
  train::DataSplit split = train::split_dataset(records, tc);

  auto run = [&]() {
    Model model;
    model.init(tiny_model_config(), 2, 3, tc.seed);
    return train::train_forecaster(records, split, model, tc);
  };
  train::History a = run();
  train::History b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(&a[i].train_loss, &b[i].train_loss, sizeof(double)) == 0);
    CHECK(std::memcmp(&a[i].val_metric, &b[i].val_metric, sizeof(double)) == 0);
  }
}

TEST_CASE("thread count does not change training results") {
  const std::vector<double> target = {0.2, -0.1, 0.3, 0.05, -0.25, 0.15};
  std::vector<RecordData> records = constant_records(5, 8, target);
  TrainConfig tc = toy_train_config(17);
  tc.max_epochs = 5;
  tc.batch_size = 4;
  train::DataSplit split = train::split_dataset(records, tc);

  auto run = [&](int threads) {
    TrainConfig cfg = tc;
    cfg.threads = threads;
    Model model;
    model.init(tiny_model_config(), 2, 3, cfg.seed);
    train::History h = train::train_forecaster(records, split, model, cfg);
    auto snap = model.snapshot();
    std::vector<double> flat;
    for (const auto& t : snap) flat.insert(flat.end(), t.begin(), t.end());
    return std::pair{h, flat};
  };
  auto [h1, p1] = run(1);
  auto [h4, p4] = run(4);
  REQUIRE(h1.size() == h4.size());
  for (size_t i = 0; i < h1.size(); ++i) {
    CHECK(std::memcmp(&h1[i].train_loss, &h4[i].train_loss, sizeof(double)) == 0);
    CHECK(std::memcmp(&h1[i].val_metric, &h4[i].val_metric, sizeof(double)) == 0);
  }
  CHECK(std::memcmp(p1.data(), p4.data(), p1.size() * sizeof(double)) == 0);
}

TEST_CASE("disabling the gate changes the training trajectory") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(5, 8, target);
  TrainConfig tc = toy_train_config(19);
  tc.max_epochs = 3;
  train::DataSplit split = train::split_dataset(records, tc);

  auto run = [&](bool gate) {
    TrainConfig cfg = tc;
    cfg.gate_enabled = gate;
    Model model;
    model.init(tiny_model_config(), 2, 3, cfg.seed);
    return train::train_forecaster(records, split, model, cfg);
  };
  train::History with = run(true);
  train::History without = run(false);
  bool any_diff = false;
  for (size_t i = 0; i < std::min(with.size(), without.size()); ++i)
    any_diff = any_diff || (with[i].train_loss != without[i].train_loss);
  CHECK(any_diff);
}

TEST_CASE("early stopping never runs more than patience epochs past the best") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(5, 8, target);
  TrainConfig tc = toy_train_config(23);
  tc.max_epochs = 60;
  tc.early_stop_patience = 3;
  train::DataSplit split = train::split_dataset(records, tc);
  Model model;
  model.init(tiny_model_config(), 2, 3, tc.seed);
  train::History history = train::train_forecaster(records, split, model, tc);

  size_t best = 0;
  for (size_t i = 1; i < history.size(); ++i)
    if (history[i].val_metric < history[best].val_metric) best = i;
  CHECK(history.size() <= best + static_cast<size_t>(tc.early_stop_patience) + 1);
}

TEST_CASE("random labels give chance-level test AUROC") {
  double total = 0.0;
  for (uint64_t seed : {31, 32, 33, 34, 35}) {
    std::vector<RecordData> records = labeled_records(12, 10, false, seed);
    TrainConfig tc = toy_train_config(seed);
    tc.stage = "classify_finetune";
    tc.max_epochs = 8;
    tc.batch_size = 8;
    train::DataSplit split = train::split_dataset(records, tc);
    Model model;
    model.init(tiny_model_config(), 2, 3, seed);
    train::FinetuneResult result = train::finetune_classifier(records, split, model, tc);
    total += result.report.auroc;
  }
  const double mean_auroc = total / 5.0;
  INFO("mean test auroc " << mean_auroc);
  CHECK(mean_auroc >= 0.4);
  CHECK(mean_auroc <= 0.6);
}

TEST_CASE("linearly separable features reach test AUROC 1.0") {
  std::vector<RecordData> records = labeled_records(12, 10, true, 41);
  TrainConfig tc = toy_train_config(41);
  tc.stage = "classify_finetune";
  tc.max_epochs = 30;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  train::DataSplit split = train::split_dataset(records, tc);
  Model model;
  model.init(tiny_model_config(), 2, 3, 41);
  train::FinetuneResult result = train::finetune_classifier(records, split, model, tc);
  CHECK(result.report.auroc == 1.0);
  CHECK(result.report.f1 == 1.0);
}

TEST_CASE("single-class validation split is rejected") {
  std::vector<RecordData> records = labeled_records(12, 10, true, 43);
  for (auto& rec : records) {
    std::fill(rec.seq.labels.begin(), rec.seq.labels.end(), 0);
  }
  TrainConfig tc = toy_train_config(43);
  tc.stage = "classify_finetune";
  train::DataSplit split = train::split_dataset(records, tc);
  Model model;
  model.init(tiny_model_config(), 2, 3, 43);
  CHECK_THROWS_AS(train::finetune_classifier(records, split, model, tc), Error);
}

TEST_CASE("a decoder pinned to the truth scores perfect gji and cosine") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(3, 8, target);
  TrainConfig tc = toy_train_config(47);
  Model model;
  model.init(tiny_model_config(), 2, 3, 47);
  // Zero everything, then set the decoder bias to the constant truth.
  for (auto* t : model.decoder.tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
  for (int j = 0; j < 6; ++j) model.decoder.b2.at(0, j) = target[static_cast<size_t>(j)];

  std::vector<train::Sample> samples = train::enumerate_samples(
      records, {0, 1, 2}, tc.observed_epochs, tc.horizon_k, tc.sample_stride);
  train::ForecastEval eval = train::evaluate_graph_forecast(records, samples, model, tc);
  CHECK(eval.gji == 1.0);
  CHECK(eval.cosine == doctest::Approx(1.0).epsilon(1e-12));

  // A decoder pinned to zero: cosine rows all skipped, gji 0 against
  // non-empty truth edge sets.
  for (int j = 0; j < 6; ++j) model.decoder.b2.at(0, j) = 0.0;
  train::ForecastEval zero_eval = train::evaluate_graph_forecast(records, samples, model, tc);
  CHECK(zero_eval.gji == 0.0);
  CHECK(zero_eval.cosine == 0.0);

  // Persistence on constant graphs is perfect.
  CHECK(train::persistence_gji(records, samples, tc) == 1.0);
}

TEST_CASE("benchmark accounting: nfe is exactly 4 K substeps per trajectory") {
  const std::vector<double> target = {0.3, -0.2, 0.45, 0.1, -0.35, 0.25};
  std::vector<RecordData> records = constant_records(3, 8, target);
  TrainConfig tc = toy_train_config(53);
  tc.horizon_k = 1;
  tc.substeps_per_unit = 4;
  Model model;
  model.init(tiny_model_config(), 2, 3, 53);

  std::vector<train::Sample> one = {{0, 0}};
  train::BenchmarkResult bench = train::benchmark_inference(records, one, model, tc, 5);
  CHECK(bench.nfe == 16);  // 4 stages x 4 substeps x K=1
  CHECK(bench.wall_seconds > 0.0);
  CHECK(std::isfinite(bench.wall_seconds));

  TrainConfig doubled = tc;
  doubled.substeps_per_unit = 8;
  train::BenchmarkResult bench2 = train::benchmark_inference(records, one, model, doubled, 5);
  CHECK(bench2.nfe == 32);
}

TEST_CASE("metrics report serializes with the documented field names") {
  metrics::MetricsReport report;
  report.auroc = 0.9;
  report.f1 = 0.8;
  report.accuracy = 0.7;
  report.recall = 0.6;
  report.gji = 0.5;
  report.cosine_similarity = 0.4;
  report.nfe = 64;
  report.wall_seconds = 0.0;
  nlohmann::json j = report.to_json();
  for (const char* key : {"auroc", "f1", "accuracy", "recall", "gji", "cosine_similarity", "nfe",
                          "wall_seconds"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("feature files round-trip through json") {
  signal::SyntheticSpec spec;
  spec.channels = 4;
  spec.sample_rate = 64.0;
  spec.duration_s = 16.0;
  spec.window_seconds = 4.0;
  spec.seed = 7;
  spec.event_windows = {{8.0, 12.0}};
  spec.clique_size = 2;
  signal::SignalRecord raw = signal::generate_synthetic_record(spec);

  const std::string dir = "features_roundtrip_tmp";
  std::filesystem::create_directories(dir);
  signal::save_record(raw, dir + "/rec.rec");

  train::RecordData rec =
      train::featurize_record(std::move(raw), "rec", 4.0, 2.0, 64, 32, 1e-8, 2, 1);
  train::save_features_json(rec, "rec.rec", dir + "/rec.features.json", 4.0, 2.0, 64, 32, 1e-8);
  train::RecordData loaded = train::load_features_json(dir + "/rec.features.json");

  REQUIRE(loaded.seq.graphs.size() == rec.seq.graphs.size());
  CHECK(loaded.seq.labels == rec.seq.labels);
  CHECK(loaded.epoch_starts == rec.epoch_starts);
  CHECK(loaded.epoch_len == rec.epoch_len);
  CHECK(loaded.has_event == rec.has_event);
  for (size_t e = 0; e < rec.seq.graphs.size(); ++e) {
    CHECK(loaded.seq.graphs[e].node_features == rec.seq.graphs[e].node_features);
    CHECK(loaded.seq.graphs[e].adjacency == rec.seq.graphs[e].adjacency);
  }
  CHECK(loaded.raw.num_samples == rec.raw.num_samples);
  CHECK(std::memcmp(loaded.raw.samples.data(), rec.raw.samples.data(),
                    rec.raw.samples.size() * sizeof(float)) == 0);
  std::filesystem::remove_all(dir);
}

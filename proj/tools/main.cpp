// Command-line front end: data synthesis, featurization, two-stage training,
// evaluation, forecasting, and vector-field export. One JSON config governs
// every stage; flags override file values; the resolved config is echoed to
// the run directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "odekit/checkpoint.hpp"
#include "odekit/common.hpp"
#include "odekit/config.hpp"
#include "odekit/graph.hpp"
#include "odekit/metrics.hpp"
#include "odekit/ode.hpp"
#include "odekit/signal.hpp"
#include "odekit/training.hpp"

namespace fs = std::filesystem;
using namespace odekit;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  int threads = 0;
  bool force = false;
  bool timing = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* timing_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  flags.out_opt = cmd->add_option("--out", flags.out_dir, "run directory");
  flags.seed_opt = cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
  flags.threads_opt = cmd->add_option("--threads", flags.threads, "worker threads");
  cmd->add_flag("--force", flags.force, "overwrite existing outputs");
  flags.timing_opt = cmd->add_flag("--timing", flags.timing, "record wall-clock timings");
}

config::RunConfig resolve_config(const CommonFlags& flags) {
  config::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = config::load_run_config(flags.config_path);
  if (flags.seed_opt->count() > 0) cfg.seed = flags.seed;
  if (flags.threads_opt->count() > 0) cfg.threads = flags.threads;
  if (flags.out_opt->count() > 0) cfg.out_dir = flags.out_dir;
  if (flags.timing_opt->count() > 0) cfg.timing = flags.timing;
  check(cfg.threads >= 1, "cli", "config", "threads must be >= 1");
  return cfg;
}

void echo_config(const config::RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "config.resolved.json", std::ios::trunc);
  check(os.good(), "cli", "config", "cannot write config.resolved.json");
  os << config::run_config_to_json(cfg).dump(2) << "\n";
}

std::string record_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rec_%03d", index);
  return buf;
}

int cmd_synth(const config::RunConfig& cfg) {
  echo_config(cfg);
  const fs::path records_dir = fs::path(cfg.out_dir) / "records";
  fs::create_directories(records_dir);

  nlohmann::json manifest;
  nlohmann::json entries = nlohmann::json::array();
  const int n_event = static_cast<int>(std::llround(cfg.synth.records * cfg.synth.event_fraction));
  for (int i = 0; i < cfg.synth.records; ++i) {
    const bool with_events = i < n_event;
    const uint64_t rec_seed = derive_seed(cfg.seed, 0xEC0, static_cast<uint64_t>(i));
    const fs::path path = records_dir / (record_name(i) + ".rec");
    signal::SignalRecord rec = signal::generate_synthetic_record(cfg.synthetic_spec(rec_seed, with_events));
    signal::save_record(rec, path.string());
    entries.push_back({{"path", "records/" + record_name(i) + ".rec"},
                       {"seed", rec_seed},
                       {"has_event", with_events}});
  }
  manifest["records"] = std::move(entries);
  std::ofstream os(fs::path(cfg.out_dir) / "manifest.json", std::ios::trunc);
  os << manifest.dump(2) << "\n";
  std::cout << "synth: wrote " << cfg.synth.records << " records to " << records_dir.string()
            << "\n";
  return 0;
}

int cmd_featurize(const config::RunConfig& cfg) {
  echo_config(cfg);
  std::ifstream mf(fs::path(cfg.out_dir) / "manifest.json");
  check(mf.good(), "cli", "cmd_featurize", "manifest.json not found in " + cfg.out_dir +
                                               " (run synth first)");
  nlohmann::json manifest;
  mf >> manifest;

  const fs::path features_dir = fs::path(cfg.out_dir) / "features";
  fs::create_directories(features_dir);
  int count = 0;
  for (const auto& entry : manifest.at("records")) {
    const std::string rel = entry.at("path").get<std::string>();
    const fs::path rec_path = fs::path(cfg.out_dir) / rel;
    signal::SignalRecord raw = signal::load_record(rec_path.string());
    const std::string name = fs::path(rel).stem().string();
    train::RecordData rd = train::featurize_record(
        std::move(raw), name, cfg.featurize.window_seconds, cfg.featurize.step_seconds,
        cfg.featurize.fft_size, cfg.featurize.hop, cfg.featurize.floor_epsilon, cfg.featurize.tau,
        cfg.threads);
    const fs::path out_path = features_dir / (name + ".features.json");
    train::save_features_json(rd, "../" + rel, out_path.string(), cfg.featurize.window_seconds,
                              cfg.featurize.step_seconds, cfg.featurize.fft_size,
                              cfg.featurize.hop, cfg.featurize.floor_epsilon);
    ++count;
  }
  std::cout << "featurize: wrote " << count << " graph sequences to " << features_dir.string()
            << "\n";
  return 0;
}

std::vector<train::RecordData> load_dataset(const config::RunConfig& cfg) {
  const fs::path features_dir = fs::path(cfg.out_dir) / "features";
  check(fs::exists(features_dir), "cli", "load_dataset",
        "features directory not found in " + cfg.out_dir + " (run featurize first)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(features_dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  check(!files.empty(), "cli", "load_dataset", "no feature files in " + features_dir.string());
  std::vector<train::RecordData> records;
  records.reserve(files.size());
  for (const fs::path& f : files) records.push_back(train::load_features_json(f.string()));
  return records;
}

void save_model_checkpoint(const config::RunConfig& cfg, train::Model& model) {
  const fs::path dir(cfg.out_dir);
  std::vector<const ad::Tensor*> tensors;
  for (ad::Tensor* t : model.tensors()) tensors.push_back(t);
  nlohmann::json extra = {{"nodes", model.nodes},
                          {"bins", model.bins},
                          {"config", config::run_config_to_json(cfg)}};
  ad::save_checkpoint((dir / "checkpoint.json").string(), (dir / "checkpoint.bin").string(),
                      tensors, extra);
}

train::Model load_model_checkpoint(const std::string& dir, const config::RunConfig& cfg) {
  const fs::path base(dir);
  check(fs::exists(base / "checkpoint.json"), "cli", "load_checkpoint",
        "checkpoint.json not found in " + dir);
  std::ifstream js((base / "checkpoint.json").string());
  nlohmann::json manifest;
  js >> manifest;
  check(manifest.contains("extra"), "cli", "load_checkpoint", "checkpoint has no config snapshot");
  const auto& extra = manifest.at("extra");
  train::Model model;
  model.init(cfg.model, extra.at("nodes").get<int>(), extra.at("bins").get<int>(), cfg.seed);
  std::vector<ad::Tensor*> tensors = model.tensors();
  ad::load_checkpoint((base / "checkpoint.json").string(), (base / "checkpoint.bin").string(),
                      tensors);
  return model;
}

int cmd_train(const config::RunConfig& cfg) {
  echo_config(cfg);
  std::vector<train::RecordData> records = load_dataset(cfg);
  train::TrainConfig tcfg = cfg.train_config("forecast_pretrain");
  train::DataSplit split = train::split_dataset(records, tcfg);
  train::Model model;
  model.init(cfg.model, records[0].seq.graphs[0].n, records[0].seq.graphs[0].d, cfg.seed);
  train::History history = train::train_forecaster(records, split, model, tcfg);
  train::write_history_jsonl(history, (fs::path(cfg.out_dir) / "history.jsonl").string());
  save_model_checkpoint(cfg, model);
  std::cout << "train: " << history.size() << " epochs, best val loss "
            << history[history.size() - 1].val_metric << ", checkpoint in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_finetune(const config::RunConfig& cfg, const std::string& init_dir) {
  echo_config(cfg);
  std::vector<train::RecordData> records = load_dataset(cfg);
  train::TrainConfig tcfg = cfg.train_config("classify_finetune");
  train::DataSplit split = train::split_dataset(records, tcfg);
  train::Model model = load_model_checkpoint(init_dir.empty() ? cfg.out_dir : init_dir, cfg);
  train::FinetuneResult result = train::finetune_classifier(records, split, model, tcfg);
  train::write_history_jsonl(result.history, (fs::path(cfg.out_dir) / "history.jsonl").string());
  save_model_checkpoint(cfg, model);
  std::ofstream os(fs::path(cfg.out_dir) / "metrics.json", std::ios::trunc);
  os << result.report.to_json().dump(2) << "\n";
  std::cout << "finetune: test auroc " << result.report.auroc << ", f1 " << result.report.f1
            << "\n";
  return 0;
}

int cmd_eval(const config::RunConfig& cfg, const std::string& init_dir) {
  echo_config(cfg);
  std::vector<train::RecordData> records = load_dataset(cfg);
  train::TrainConfig tcfg = cfg.train_config("classify_finetune");
  train::DataSplit split = train::split_dataset(records, tcfg);
  train::Model model = load_model_checkpoint(init_dir.empty() ? cfg.out_dir : init_dir, cfg);

  train::ClassifierEval ce = train::evaluate_classifier(records, split.test, model, tcfg);
  metrics::MetricsReport report;
  report.auroc = metrics::compute_auroc(ce.scores, ce.labels);
  metrics::ThresholdMetrics tm =
      metrics::compute_f1_acc_recall(ce.scores, ce.labels, metrics::ThresholdPolicy::optimal_f1);
  report.f1 = tm.f1;
  report.accuracy = tm.accuracy;
  report.recall = tm.recall;
  train::ForecastEval fe = train::evaluate_graph_forecast(records, split.test, model, tcfg);
  report.gji = fe.gji;
  report.cosine_similarity = fe.cosine;
  report.nfe = ce.nfe + fe.nfe;
  if (cfg.timing) {
    train::BenchmarkResult bench = train::benchmark_inference(records, split.test, model, tcfg);
    report.wall_seconds = bench.wall_seconds;
  }
  std::ofstream os(fs::path(cfg.out_dir) / "metrics.json", std::ios::trunc);
  os << report.to_json().dump(2) << "\n";
  std::cout << "eval: auroc " << report.auroc << ", f1 " << report.f1 << ", gji " << report.gji
            << "\n";
  return 0;
}

int cmd_forecast(const config::RunConfig& cfg, const std::string& init_dir, int record_index,
                 int begin) {
  echo_config(cfg);
  std::vector<train::RecordData> records = load_dataset(cfg);
  check(record_index >= 0 && record_index < static_cast<int>(records.size()), "cli",
        "cmd_forecast", "record index out of range");
  train::TrainConfig tcfg = cfg.train_config("classify_finetune");
  train::Model model = load_model_checkpoint(init_dir.empty() ? cfg.out_dir : init_dir, cfg);

  ad::Tape tape;
  tape.set_grad_enabled(false);
  train::Sample sample{record_index, begin};
  train::ForecastForward fwd = train::forecast_forward(
      tape, model, records[static_cast<size_t>(record_index)], sample, tcfg, nullptr, nullptr);

  nlohmann::json steps = nlohmann::json::array();
  for (int k = 0; k < tcfg.horizon_k; ++k) {
    std::vector<double> pred = tape.values(fwd.predictions[static_cast<size_t>(k)]);
    graph::EpochGraph pg = graph::correlation_adjacency(pred, model.nodes, model.bins, tcfg.tau);
    graph::EdgeSet edges = graph::binarize_adjacency(pg.adjacency, model.nodes, tcfg.tau);
    nlohmann::json edge_list = nlohmann::json::array();
    for (const auto& [a, b] : edges) edge_list.push_back({a, b});
    steps.push_back({{"features", pred}, {"edges", edge_list}});
  }
  nlohmann::json out = {{"record", record_index},
                        {"begin", begin},
                        {"horizon", tcfg.horizon_k},
                        {"n", model.nodes},
                        {"d", model.bins},
                        {"steps", steps},
                        {"nfe", fwd.traj.nfe}};
  std::ofstream os(fs::path(cfg.out_dir) / "forecast.json", std::ios::trunc);
  os << out.dump(2) << "\n";
  std::cout << "forecast: " << tcfg.horizon_k << " steps for record " << record_index << "\n";
  return 0;
}

int cmd_field(const config::RunConfig& cfg, const std::string& init_dir) {
  echo_config(cfg);
  std::vector<train::RecordData> records = load_dataset(cfg);
  train::TrainConfig tcfg = cfg.train_config("classify_finetune");
  train::DataSplit split = train::split_dataset(records, tcfg);
  train::Model model = load_model_checkpoint(init_dir.empty() ? cfg.out_dir : init_dir, cfg);

  std::vector<std::vector<double>> states;
  const size_t cap = static_cast<size_t>(cfg.field.max_reference_samples);
  for (size_t i = 0; i < split.test.size() && states.size() < cap; ++i) {
    const train::Sample& s = split.test[i];
    ad::Tape tape;
    tape.set_grad_enabled(false);
    train::ForecastForward fwd = train::forecast_forward(
        tape, model, records[static_cast<size_t>(s.record)], s, tcfg, nullptr, nullptr);
    for (const ad::Value& v : fwd.traj.states) states.push_back(tape.values(v));
  }
  ode::FieldGrid grid = ode::export_field_grid(model.field, tcfg.field_config(), states,
                                               cfg.field.grid, cfg.field.span);
  ode::write_field_csv(grid, (fs::path(cfg.out_dir) / "field.csv").string());
  std::ofstream os(fs::path(cfg.out_dir) / "field.json", std::ios::trunc);
  os << ode::field_grid_json(grid).dump() << "\n";
  std::cout << "field: " << grid.rows.size() << " arrows to " << cfg.out_dir << "/field.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time latent dynamics forecasting toolkit"};
  app.require_subcommand(1);

  CommonFlags synth_f, feat_f, train_f, finetune_f, eval_f, forecast_f, field_f;
  std::string finetune_init, eval_init, forecast_init, field_init;
  int forecast_record = 0, forecast_begin = 0;

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic records");
  add_common(synth, synth_f);
  CLI::App* featurize = app.add_subcommand("featurize", "records -> spectral graph sequences");
  add_common(featurize, feat_f);
  CLI::App* train_cmd = app.add_subcommand("train", "stage-1 forecast pretraining");
  add_common(train_cmd, train_f);
  CLI::App* finetune = app.add_subcommand("finetune", "stage-2 classifier fine-tuning");
  add_common(finetune, finetune_f);
  finetune->add_option("--init", finetune_init, "directory with the pretrained checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "test-split metrics");
  add_common(eval_cmd, eval_f);
  eval_cmd->add_option("--init", eval_init, "directory with the checkpoint");
  CLI::App* forecast = app.add_subcommand("forecast", "predict future graphs for one window");
  add_common(forecast, forecast_f);
  forecast->add_option("--init", forecast_init, "directory with the checkpoint");
  forecast->add_option("--record", forecast_record, "record index");
  forecast->add_option("--begin", forecast_begin, "first observed epoch index");
  CLI::App* field = app.add_subcommand("field", "export the learned vector field grid");
  add_common(field, field_f);
  field->add_option("--init", field_init, "directory with the checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      config::RunConfig cfg = resolve_config(synth_f);
      const fs::path records_dir = fs::path(cfg.out_dir) / "records";
      if (fs::exists(records_dir) && !fs::is_empty(records_dir) && !synth_f.force) {
        fail("cli", "cmd_synth",
             records_dir.string() + " already contains records; pass --force to overwrite");
      }
      return cmd_synth(cfg);
    }
    if (featurize->parsed()) return cmd_featurize(resolve_config(feat_f));
    if (train_cmd->parsed()) return cmd_train(resolve_config(train_f));
    if (finetune->parsed()) return cmd_finetune(resolve_config(finetune_f), finetune_init);
    if (eval_cmd->parsed()) return cmd_eval(resolve_config(eval_f), eval_init);
    if (forecast->parsed())
      return cmd_forecast(resolve_config(forecast_f), forecast_init, forecast_record,
                          forecast_begin);
    if (field->parsed()) return cmd_field(resolve_config(field_f), field_init);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == Error::Kind::validation ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

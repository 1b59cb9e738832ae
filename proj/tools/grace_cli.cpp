// Command-line harness for contrastive node-embedding experiments: training,
// linear-probe evaluation, corruption ablations, objective comparison,
// sensitivity sweeps, feature-contamination robustness and gradient
// self-checks.

#include <omp.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "grace/config.hpp"
#include "grace/encoder.hpp"
#include "grace/evaluation.hpp"
#include "grace/gradcheck_suite.hpp"
#include "grace/graph.hpp"
#include "grace/objective.hpp"
#include "grace/trainer.hpp"
#include "grace/views.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grace;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitGradCheck = 5;

struct GlobalArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<int> runs;
  int threads = 0;
};

void apply_threads(int threads) {
  if (threads > 0) {
    omp_set_num_threads(threads);
    Eigen::setNbThreads(threads);
  }
}

ExperimentConfig load_config(const GlobalArgs& ga) {
  if (ga.config_path.empty()) throw ConfigError("--config is required for this command");
  ExperimentConfig cfg = ExperimentConfig::parse_file(ga.config_path);
  if (!ga.data_dir.empty()) cfg.data_dir = ga.data_dir;
  if (!ga.out_dir.empty()) cfg.out_dir = ga.out_dir;
  if (ga.seed) cfg.seed = *ga.seed;
  if (ga.runs) cfg.n_runs = *ga.runs;
  return cfg;
}

Graph load_graph(const ExperimentConfig& cfg) {
  if (cfg.data_dir.empty()) {
    throw DataError("no dataset directory: set data_dir in the config or pass --data");
  }
  if (!fs::exists(cfg.data_dir)) {
    throw DataError("dataset directory does not exist: " + cfg.data_dir);
  }
  return load_dataset(cfg.data_dir);
}

NormalizedAdjacency eval_adjacency(const Graph& g, const TrainConfig& tc) {
  return tc.arch == EncoderArch::Gcn2 ? sym_normalize(g) : row_normalize(g);
}

// --- embedding dump ----------------------------------------------------------

constexpr char kEmbeddingMagic[4] = {'G', 'R', 'E', 'M'};

void save_embeddings(const fs::path& path, const Matrix& e, uint64_t seed,
                     const std::string& digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embeddings: " + path.string());
  out.write(kEmbeddingMagic, 4);
  uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t n = static_cast<uint64_t>(e.rows), d = static_cast<uint64_t>(e.cols);
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(&seed), sizeof(seed));
  char dig[16] = {0};
  std::memcpy(dig, digest.data(), std::min<size_t>(16, digest.size()));
  out.write(dig, 16);
  std::vector<double> buf(e.v.begin(), e.v.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

Matrix load_embeddings(const fs::path& path, std::string* digest_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embeddings: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw DataError(path.string() + ": bad embeddings magic (expected GREM)");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw DataError(path.string() + ": unsupported embeddings version");
  uint64_t n = 0, d = 0, seed = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&seed), sizeof(seed));
  char dig[17] = {0};
  in.read(dig, 16);
  if (digest_out) *digest_out = dig;
  Matrix e(static_cast<int64_t>(n), static_cast<int64_t>(d));
  std::vector<double> buf(static_cast<size_t>(n * d));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!in) throw DataError(path.string() + ": truncated embeddings");
  for (size_t i = 0; i < buf.size(); ++i) e.v[i] = static_cast<real>(buf[i]);
  return e;
}

void write_train_log(const fs::path& path, const std::vector<EpochRecord>& log,
                     const std::string& digest) {
  std::ofstream out(path);
  for (const EpochRecord& r : log) {
    json j{{"epoch", r.epoch},
           {"loss", r.objective},
           {"grad_norm", r.grad_norm},
           {"seed", r.seed},
           {"view1", {{"pr", r.view1.p_r}, {"pm", r.view1.p_m}}},
           {"view2", {{"pr", r.view2.p_r}, {"pm", r.view2.p_m}}},
           {"wall_ms", r.wall_ms},
           {"config_digest", digest}};
    if (std::isnan(r.bound_gap)) {
      j["bound_gap"] = nullptr;
    } else {
      j["bound_gap"] = r.bound_gap;
    }
    out << j.dump() << "\n";
  }
}

json report_to_json(const EvalReport& r) {
  return json{{"metric", r.metric}, {"runs", r.runs},   {"mean", r.mean},
              {"std", r.std_dev},   {"n_runs", r.n_runs}, {"config_digest", r.config_digest}};
}

// --- subcommands ---------------------------------------------------------------

int cmd_train(const GlobalArgs& ga) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);
  TrainConfig tc = cfg.to_train_config();
  TrainResult tr = train(g, tc);
  Matrix embeddings = encode_plain(eval_adjacency(g, tc), g.features, tr.encoder, tr.projection);

  fs::create_directories(cfg.out_dir);
  save_checkpoint(fs::path(cfg.out_dir) / "checkpoint.grcp", tr.encoder, tr.projection);
  save_embeddings(fs::path(cfg.out_dir) / "embeddings.grem", embeddings, tc.seed, cfg.digest());
  write_train_log(fs::path(cfg.out_dir) / "train_log.ndjson", tr.log, cfg.digest());

  std::cout << "trained " << tc.epochs << " epochs on " << g.n_nodes << " nodes; final objective "
            << tr.log.back().objective << "\n"
            << "checkpoint, embeddings (" << embeddings.rows << "x" << embeddings.cols
            << ") and log written to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const GlobalArgs& ga, const std::string& embeddings_path,
             const std::string& checkpoint_path, bool raw_features) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);
  TrainConfig tc = cfg.to_train_config();

  Matrix embeddings;
  if (raw_features) {
    embeddings = g.features;
  } else if (!embeddings_path.empty()) {
    std::string digest;
    embeddings = load_embeddings(embeddings_path, &digest);
    if (digest != cfg.digest()) {
      throw ConfigError("embeddings were produced under config digest " + digest +
                        " but the current config digest is " + cfg.digest() +
                        "; refusing to aggregate across configurations");
    }
  } else if (!checkpoint_path.empty()) {
    EncoderParams enc;
    ProjectionParams proj;
    load_checkpoint(checkpoint_path, tc.activation, enc, proj);
    embeddings = encode_plain(eval_adjacency(g, tc), g.features, enc, proj);
  } else {
    throw ConfigError("eval needs one of --embeddings, --checkpoint or --raw-features");
  }

  // Probe the fixed embeddings across n_runs splits (no retraining here).
  EvalReport report;
  report.metric = cfg.metric;
  report.n_runs = cfg.n_runs;
  const Metric metric = cfg.metric_kind();
  for (int r = 0; r < cfg.n_runs; ++r) {
    const uint64_t run_seed = cfg.seed + static_cast<uint64_t>(r);
    SplitSpec split = make_splits(g, 0.1, 0.1, run_seed);
    auto stats = compute_standardization(embeddings, split.train);
    Matrix z = apply_standardization(embeddings, stats);
    ProbeModel probe = fit_probe(z, g.labels, split.train, 1.0, run_seed);
    report.runs.push_back(evaluate_probe(probe, z, g.labels, split.test, metric));
  }
  double mean = 0;
  for (double x : report.runs) mean += x;
  mean /= report.runs.size();
  double var = 0;
  for (double x : report.runs) var += (x - mean) * (x - mean);
  report.mean = mean;
  report.std_dev = std::sqrt(var / report.runs.size());
  report.config_digest = cfg.digest();

  fs::create_directories(cfg.out_dir);
  const json j = report_to_json(report);
  std::ofstream(fs::path(cfg.out_dir) / "eval_report.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const GlobalArgs& ga) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);

  ProtocolOptions opts;
  opts.n_runs = cfg.n_runs;
  opts.metric = cfg.metric_kind();

  json rows = json::array();
  struct Variant {
    const char* name;
    bool drop_re, drop_mf;
  };
  for (const Variant& v : {Variant{"GRACE", false, false}, Variant{"GRACE(-RE)", true, false},
                           Variant{"GRACE(-MF)", false, true}}) {
    TrainConfig tc = cfg.to_train_config();  // identical seeds across variants
    if (v.drop_re) tc.p_r_1 = tc.p_r_2 = 0.0;
    if (v.drop_mf) tc.p_m_1 = tc.p_m_2 = 0.0;
    EvalReport r = run_protocol(g, tc, opts);
    rows.push_back(json{{"name", v.name},
                        {"mean", r.mean},
                        {"std", r.std_dev},
                        {"runs", r.runs},
                        {"p_r", {tc.p_r_1, tc.p_r_2}},
                        {"p_m", {tc.p_m_1, tc.p_m_2}}});
    std::printf("%-11s %s = %.4f +/- %.4f\n", v.name, cfg.metric.c_str(), r.mean, r.std_dev);
    std::fflush(stdout);
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream(fs::path(cfg.out_dir) / "ablation.json")
      << json{{"rows", rows}, {"config_digest", cfg.digest()}}.dump(2) << "\n";
  return 0;
}

int cmd_compare_nce(const GlobalArgs& ga) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);

  ProtocolOptions opts;
  opts.n_runs = cfg.n_runs;
  opts.metric = cfg.metric_kind();

  json rows = json::array();
  for (const char* mode : {"grace", "infonce"}) {
    TrainConfig tc = cfg.to_train_config();  // identical corruption seeds in both rows
    tc.mode = loss_mode_from_string(mode);
    EvalReport r = run_protocol(g, tc, opts);
    const char* name = tc.mode == LossConfig::Mode::Grace ? "GRACE" : "GRACE-NCE";
    rows.push_back(json{{"name", name}, {"mean", r.mean}, {"std", r.std_dev}, {"runs", r.runs}});
    std::printf("%-10s %s = %.4f +/- %.4f\n", name, cfg.metric.c_str(), r.mean, r.std_dev);
    std::fflush(stdout);
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream(fs::path(cfg.out_dir) / "nce_comparison.json")
      << json{{"rows", rows}, {"config_digest", cfg.digest()}}.dump(2) << "\n";
  return 0;
}

int cmd_sensitivity(const GlobalArgs& ga, std::vector<double> grid) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);
  if (grid.empty()) {
    for (int i = 1; i <= 9; ++i) grid.push_back(0.1 * i);
  }
  for (double p : grid) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("grid values must lie in [0,1]");
  }

  ProtocolOptions opts;
  opts.n_runs = cfg.n_runs;
  opts.metric = cfg.metric_kind();

  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "sensitivity.csv");
  csv << "p_1,p_2," << cfg.metric << "\n";
  for (double p1 : grid) {
    for (double p2 : grid) {
      TrainConfig tc = cfg.to_train_config();
      tc.p_r_1 = tc.p_m_1 = p1;  // p_1 drives view 1, p_2 drives view 2
      tc.p_r_2 = tc.p_m_2 = p2;
      EvalReport r = run_protocol(g, tc, opts);
      csv << p1 << "," << p2 << "," << r.mean << "\n";
      csv.flush();
      std::printf("p1=%.1f p2=%.1f -> %.4f\n", p1, p2, r.mean);
      std::fflush(stdout);
    }
  }
  std::cout << "grid written to " << (fs::path(cfg.out_dir) / "sensitivity.csv").string() << "\n";
  return 0;
}

int cmd_contaminate(const GlobalArgs& ga, double rate) {
  ExperimentConfig cfg = load_config(ga);
  Graph g = load_graph(cfg);
  g.features = contaminate_features(g.features, rate, cfg.seed);

  ProtocolOptions opts;
  opts.n_runs = cfg.n_runs;
  opts.metric = cfg.metric_kind();
  EvalReport r = run_protocol(g, cfg.to_train_config(), opts);
  r.config_digest = cfg.digest();

  json j{{"rate", rate},
         {"metric", r.metric},
         {"mean", r.mean},
         {"std", r.std_dev},
         {"runs", r.runs},
         {"config_digest", cfg.digest()}};
  fs::create_directories(cfg.out_dir);
  std::ofstream(fs::path(cfg.out_dir) / "contaminate_report.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(bool inject_fault) {
  Tape::fault_injection_enabled = inject_fault;
  const auto entries = run_gradcheck_suite();
  Tape::fault_injection_enabled = false;
  bool all_pass = true;
  const GradCheckEntry* worst = nullptr;
  for (const auto& e : entries) {
    std::printf("%-36s max rel err %.3e (tol %.0e) %s\n", e.component.c_str(), e.max_rel_err,
                e.tolerance, e.pass ? "PASS" : "FAIL");
    all_pass = all_pass && e.pass;
    if (worst == nullptr || e.max_rel_err / e.tolerance > worst->max_rel_err / worst->tolerance) {
      worst = &e;
    }
  }
  if (!all_pass) {
    std::printf("gradient check FAILED; worst offender: %s (%.3e)\n", worst->component.c_str(),
                worst->max_rel_err);
    return kExitGradCheck;
  }
  std::printf("all gradient checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph contrastive representation learning toolkit"};
  app.require_subcommand(1);

  GlobalArgs ga;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", ga.config_path, "experiment config file")->required();
    sub->add_option("--data", ga.data_dir, "dataset directory (overrides config)");
    sub->add_option("--out", ga.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", ga.seed, "seed override");
    sub->add_option("--runs", ga.runs, "protocol run count override");
    sub->add_option("--threads", ga.threads, "thread count (0 = library default)");
  };

  auto* train_cmd = app.add_subcommand("train", "unsupervised training; writes checkpoint, "
                                                "embeddings and an NDJSON log");
  add_common(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "linear probe over frozen embeddings");
  add_common(eval_cmd);
  std::string eval_embeddings, eval_checkpoint;
  bool eval_raw = false;
  eval_cmd->add_option("--embeddings", eval_embeddings, "embeddings file (.grem)");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file (.grcp)");
  eval_cmd->add_flag("--raw-features", eval_raw, "probe the raw feature matrix instead");

  auto* ablate_cmd = app.add_subcommand(
      "ablate", "full model vs no-edge-removal and no-feature-masking variants");
  add_common(ablate_cmd);

  auto* nce_cmd = app.add_subcommand("compare-nce", "objective comparison under identical seeds");
  add_common(nce_cmd);

  auto* sens_cmd = app.add_subcommand("sensitivity", "grid sweep over view corruption strengths");
  add_common(sens_cmd);
  std::vector<double> grid;
  sens_cmd->add_option("--grid", grid, "grid values (default 0.1..0.9 step 0.1)")->delimiter(',');

  auto* cont_cmd = app.add_subcommand("contaminate",
                                      "one-shot feature contamination before training");
  add_common(cont_cmd);
  double rate = 0.5;
  cont_cmd->add_option("--rate", rate, "fraction of feature entries zeroed")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient self-check");
  bool inject_fault = false;
  grad_cmd->add_flag("--inject-fault", inject_fault,
                     "test hook: corrupt gradients to prove the check fails");
  grad_cmd->add_option("--threads", ga.threads, "thread count (0 = library default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  apply_threads(ga.threads);
  try {
    if (*train_cmd) return cmd_train(ga);
    if (*eval_cmd) return cmd_eval(ga, eval_embeddings, eval_checkpoint, eval_raw);
    if (*ablate_cmd) return cmd_ablate(ga);
    if (*nce_cmd) return cmd_compare_nce(ga);
    if (*sens_cmd) return cmd_sensitivity(ga, grid);
    if (*cont_cmd) return cmd_contaminate(ga, rate);
    if (*grad_cmd) return cmd_gradcheck(inject_fault);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

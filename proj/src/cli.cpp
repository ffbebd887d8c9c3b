#include "liedecomp/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "liedecomp/dataset.hpp"
#include "liedecomp/eval.hpp"
#include "liedecomp/render.hpp"
#include "liedecomp/train.hpp"
#include "liedecomp/verify.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace liedecomp {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// Run manifest: written atomically at start, finalized at exit with the
/// artifact list.
class Manifest {
 public:
  Manifest(const fs::path& out_dir, const std::string& command, json config,
           std::optional<std::uint64_t> seed)
      : path_(out_dir / "manifest.json") {
    doc_["command"] = command;
    doc_["config"] = std::move(config);
    if (seed) doc_["seed"] = *seed;
    doc_["tool_version"] = kToolVersion;
    doc_["started_at"] = timestamp_utc();
    doc_["finished_at"] = nullptr;
    doc_["artifacts"] = json::array();
    write();
  }

  void add_artifact(const fs::path& p) { doc_["artifacts"].push_back(p.filename().string()); }

  void finalize() {
    doc_["finished_at"] = timestamp_utc();
    write();
  }

 private:
  void write() const { atomic_write_text(path_, doc_.dump(2) + "\n"); }

  fs::path path_;
  json doc_;
};

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(std::string("no such ") + what + ": " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json loss_report_json(const LossReport& r) {
  return {{"recon_P", r.recon_P},
          {"entropy", r.entropy},
          {"recon_T_masked", r.recon_T_masked},
          {"l1", r.l1},
          {"lambda_scale", r.lambda_scale},
          {"inner_prod", r.inner_prod},
          {"total_P", r.total_P},
          {"total_T", r.total_T}};
}

void write_metrics(const fs::path& path, const TrainHistory& history) {
  json arr = json::array();
  for (std::size_t i = 0; i < history.epochs.size(); ++i) {
    json entry = loss_report_json(history.epochs[i]);
    entry["epoch"] = i + 1;
    arr.push_back(std::move(entry));
  }
  atomic_write_text(path, arr.dump() + "\n");
}

int input_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return kExitInput;
}

}  // namespace

int worker_count() {
  const char* env = std::getenv("TOOL_THREADS");
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (!env) return hw;
  const int requested = std::atoi(env);
  if (requested < 1) return 1;
  return std::min(requested, hw);
}

int cmd_gen(const std::string& spec_file, const std::string& out_dir) {
  try {
    const SceneSpec spec = SceneSpec::from_json_string(read_file(spec_file, "spec"));
    fs::create_directories(out_dir);
    Manifest manifest(out_dir, "gen", json::parse(spec.to_json_string()), std::nullopt);

    GaussianRng rng(0);
    const GeneratedSequence data = generate_sequence(spec, rng);
    const fs::path dataset_path = fs::path(out_dir) / "dataset.json";
    const fs::path preview_path = fs::path(out_dir) / "preview.pgm";
    save_dataset(dataset_path, data);
    write_pgm_strip(preview_path, data.sequence.frames);
    manifest.add_artifact(dataset_path);
    manifest.add_artifact(preview_path);
    manifest.finalize();
    std::cout << "wrote " << dataset_path.string() << " (" << data.sequence.frames.size()
              << " frames)\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return input_error(e);
  }
}

int cmd_train(const std::string& data_file, const std::string& config_file,
              const std::string& out_dir, std::optional<std::uint64_t> seed) {
  LoadedDataset data;
  TrainConfig cfg;
  try {
    data = load_dataset(data_file);
    cfg = TrainConfig::from_json_string(read_file(config_file, "config"));
    if (seed) cfg.seed = *seed;
    cfg.validate();
  } catch (const std::exception& e) {
    return input_error(e);
  }

  try {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    Manifest manifest(out_dir, "train", json::parse(cfg.to_json_string()), cfg.seed);

    const fs::path config_path = fs::path(out_dir) / "config.json";
    atomic_write_text(config_path, cfg.to_json_string());
    manifest.add_artifact(config_path);

    const fs::path metrics_path = fs::path(out_dir) / "metrics.json";
    const std::uint64_t config_hash = cfg.hash();

    TrainSinks sinks;
    sinks.checkpoint = [&](int epoch, const ModelState& state) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%06d.json", epoch);
      save_checkpoint(fs::path(out_dir) / "checkpoints" / name,
                      Checkpoint{state, config_hash, cfg.seed});
    };
    sinks.metrics = [&](const TrainHistory& history) { write_metrics(metrics_path, history); };

    const FitResult result = fit(data.sequence, cfg, &sinks);
    manifest.add_artifact(metrics_path);

    // final.json is a loadable checkpoint with the run summary attached
    const fs::path final_path = fs::path(out_dir) / "final.json";
    {
      const fs::path tmp = fs::path(out_dir) / "final_ckpt.tmp.json";
      save_checkpoint(tmp, Checkpoint{result.state, config_hash, cfg.seed});
      json doc = json::parse(read_file(tmp, "checkpoint"));
      fs::remove(tmp);
      doc["epochs_run"] = result.history.epochs_run;
      doc["converged"] = result.history.converged;
      doc["final_losses"] = result.history.epochs.empty()
                                ? json(nullptr)
                                : loss_report_json(result.history.epochs.back());
      atomic_write_text(final_path, doc.dump(2) + "\n");
    }
    manifest.add_artifact(final_path);
    manifest.finalize();
    std::cout << "trained " << result.history.epochs_run << " epochs"
              << (result.history.converged ? " (converged)" : "") << ", final total_T = "
              << (result.history.epochs.empty() ? 0.0 : result.history.epochs.back().total_T)
              << "\n";
    return kExitOk;
  } catch (const TrainingAbort& e) {
    std::cerr << "numerical abort at epoch " << e.epoch << ": " << e.what()
              << " (last checkpoint preserved)\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    return input_error(e);
  }
}

int cmd_eval(const std::string& ckpt_file, const std::string& data_file, double tau_p,
             double tau_id, const std::string& out_dir) {
  try {
    const Checkpoint ckpt = load_checkpoint(ckpt_file);
    const LoadedDataset data = load_dataset(data_file);
    if (!(ckpt.state.frame == data.sequence.frame) || ckpt.state.N != data.sequence.steps())
      throw ValidationError("checkpoint dimensions do not match dataset");

    fs::create_directories(out_dir);
    Manifest manifest(out_dir, "eval",
                      json{{"tau_p", tau_p}, {"tau_id", tau_id}, {"ckpt", ckpt_file}},
                      ckpt.rng_seed);

    const LossWeights weights;  // reporting defaults
    const EvalReport report =
        evaluate(ckpt.state, data.sequence, data.ground_truth, weights, tau_p, tau_id);

    const fs::path report_path = fs::path(out_dir) / "report.json";
    atomic_write_text(report_path, report.to_json_string());
    manifest.add_artifact(report_path);

    const Tensor w = pattern_weights(ckpt.state.logits);
    const auto P = pattern_primitives(data.sequence.frames[0], w);
    for (int l = 0; l < ckpt.state.L; ++l) {
      char name[32];
      std::snprintf(name, sizeof(name), "pattern_%d.pgm", l);
      const fs::path p = fs::path(out_dir) / name;
      write_pgm_strip(p, {P[static_cast<std::size_t>(l)]});
      manifest.add_artifact(p);
    }

    const auto Y = reconstruct(ckpt.state, data.sequence.frames[0]);
    const fs::path recon_path = fs::path(out_dir) / "reconstruction.pgm";
    write_pgm_strip(recon_path, Y);
    manifest.add_artifact(recon_path);
    const fs::path given_path = fs::path(out_dir) / "given.pgm";
    write_pgm_strip(given_path, data.sequence.frames);
    manifest.add_artifact(given_path);

    for (int k = 0; k < ckpt.state.K; ++k) {
      const auto samples =
          sample_field(ckpt.state.transformers[static_cast<std::size_t>(k)], 9);
      char jn[32], sn[32];
      std::snprintf(jn, sizeof(jn), "field_%d.json", k);
      std::snprintf(sn, sizeof(sn), "field_%d.svg", k);
      write_field_json(fs::path(out_dir) / jn, samples);
      write_field_svg(fs::path(out_dir) / sn, samples);
      manifest.add_artifact(fs::path(out_dir) / jn);
      manifest.add_artifact(fs::path(out_dir) / sn);
    }
    manifest.finalize();
    std::cout << "active patterns: " << report.active_pattern_count << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return input_error(e);
  }
}

int cmd_render(const std::string& data_file, const std::string& out_dir, bool threshold) {
  try {
    const LoadedDataset data = load_dataset(data_file);
    fs::create_directories(out_dir);
    Manifest manifest(out_dir, "render", json{{"threshold", threshold}}, std::nullopt);
    const fs::path strip_path = fs::path(out_dir) / "strip.pgm";
    write_pgm_strip(strip_path, data.sequence.frames, threshold);
    manifest.add_artifact(strip_path);
    manifest.finalize();
    std::cout << "wrote " << strip_path.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return input_error(e);
  }
}

int cmd_verify(const std::string& filter) {
  const auto results = run_verification(filter);
  if (results.empty()) {
    std::cerr << "error: no property matches filter '" << filter << "'\n";
    return kExitInput;
  }
  bool all_pass = true;
  const PropertyResult* first_fail = nullptr;
  for (const PropertyResult& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
    if (!r.pass) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    if (!r.pass && !first_fail) first_fail = &r;
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    std::cerr << "verification failed: " << first_fail->name << "\n";
    return kExitVerifyFail;
  }
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Joint learning of pattern primitives and one-parameter Lie-group "
               "transformations from one image sequence"};
  app.require_subcommand(1);

  std::string spec_file, data_file, config_file, ckpt_file, out_dir, filter;
  double tau_p = 0.05, tau_id = 0.1;
  std::uint64_t seed_value = 0;
  bool threshold = false;

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic sequence from a scene spec");
  gen->add_option("--spec", spec_file, "Scene spec JSON")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Fit patterns and transformers to a dataset");
  train->add_option("--data", data_file, "Dataset JSON")->required();
  train->add_option("--config", config_file, "Train config JSON")->required();
  train->add_option("--out", out_dir, "Run directory")->required();
  CLI::Option* seed_opt = train->add_option("--seed", seed_value, "Override config seed");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Analyze a trained checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_file, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", data_file, "Dataset JSON")->required();
  eval_cmd->add_option("--tau-p", tau_p, "Active-pattern area threshold");
  eval_cmd->add_option("--tau-id", tau_id, "Identity-transformer norm threshold");
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* render = app.add_subcommand("render", "Render a dataset to an image strip");
  render->add_option("--data", data_file, "Dataset JSON")->required();
  render->add_option("--out", out_dir, "Output directory")->required();
  render->add_flag("--threshold", threshold, "Binarize at 0.5");

  CLI::App* verify = app.add_subcommand("verify", "Run the property suite");
  verify->add_option("--filter", filter, "Only properties containing this substring");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (gen->parsed()) return cmd_gen(spec_file, out_dir);
  if (train->parsed())
    return cmd_train(data_file, config_file, out_dir,
                     seed_opt->count() ? std::optional(seed_value) : std::nullopt);
  if (eval_cmd->parsed()) return cmd_eval(ckpt_file, data_file, tau_p, tau_id, out_dir);
  if (render->parsed()) return cmd_render(data_file, out_dir, threshold);
  if (verify->parsed()) return cmd_verify(filter);
  return kExitInput;
}

}  // namespace liedecomp

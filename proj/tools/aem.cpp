// Command-line entry point: generate / train / eval / ablate / gradcheck /
// sample-frames. Every command is a pure function of (inputs, flags, seed)
// up to the timestamps recorded in run manifests. stdout carries data and
// tables; stderr carries diagnostics.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "aem/checkpoint.hpp"
#include "aem/dataset_io.hpp"
#include "aem/detector.hpp"
#include "aem/evalmetrics.hpp"
#include "aem/sampling.hpp"
#include "aem/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aem;

namespace {

constexpr const char* kToolVersion = "aem 0.1.0";

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitOcc = 4;
constexpr int kExitNan = 5;
constexpr int kExitMismatch = 6;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrKind::config: return kExitUsage;
    case ErrKind::io: return kExitIo;
    case ErrKind::validation: return kExitIo;
    case ErrKind::occ: return kExitOcc;
    case ErrKind::nan_abort: return kExitNan;
    case ErrKind::mismatch: return kExitMismatch;
    default: return 1;
  }
}

uint64_t seed_fallback(uint64_t flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("AEM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      fail(ErrKind::config, "AEM_SEED is not a valid integer");
    }
  }
  return 0;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrKind::io, "cannot open: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) fail(ErrKind::io, "cannot open for writing: " + path.string());
  f << text;
  if (!f) fail(ErrKind::io, "write failed: " + path.string());
}

void write_run_manifest(const fs::path& dir, const std::string& command,
                        const std::string& config_path, uint64_t config_hash, uint64_t seed,
                        const std::vector<std::string>& artifacts) {
  json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["artifacts"] = artifacts;
  j["tool_version"] = kToolVersion;
  j["timestamp_utc"] = std::chrono::duration_cast<std::chrono::seconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
  write_text_file(dir / "run_manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int cmd_generate(const std::string& config_path, const std::string& out_dir, uint64_t seed) {
  sim::SimConfig cfg = config_path.empty()
                           ? sim::SimConfig{}
                           : sim::sim_config_from_json_text(read_text_file(config_path));
  sim::Dataset ds = sim::generate_dataset(cfg, seed);
  fs::path dir(out_dir);
  sim::write_dataset(ds, dir);
  write_run_manifest(dir, "generate", config_path, fnv1a(sim::sim_config_to_json_text(cfg)), seed,
                     {"manifest.json", "features.bin", "patches.bin", "graphs.json"});
  std::cerr << "generated " << ds.segments.size() << " segments into " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir) {
  train::TrainConfig cfg = config_path.empty()
                               ? train::TrainConfig{}
                               : train::train_config_from_json_text(read_text_file(config_path));
  sim::Dataset ds = sim::read_dataset(data_dir);
  train::TrainResult result = train::train(ds, cfg);

  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrKind::io, "cannot create directory: " + out_dir);

  std::ostringstream log;
  log.imbue(std::locale::classic());
  log.precision(17);
  for (const auto& rec : result.log) {
    json line;
    line["epoch"] = rec.epoch;
    line["eff_s"] = rec.train_mean.eff_s;
    line["eff_r"] = rec.train_mean.eff_r;
    line["cl_s"] = rec.train_mean.cl_s;
    line["cl_r"] = rec.train_mean.cl_r;
    line["det"] = rec.train_mean.det;
    line["total"] = rec.train_mean.total;
    line["val_total"] = rec.val_total;
    log << line.dump() << "\n";
  }
  write_text_file(dir / "train_log.jsonl", log.str());
  model::save_checkpoint(result.final_model, dir / "final.ckpt");
  model::save_checkpoint(result.best_model, dir / "best.ckpt");
  write_run_manifest(dir, "train", config_path, train::train_config_hash(cfg), cfg.seed,
                     {"final.ckpt", "best.ckpt", "train_log.jsonl"});
  if (result.aborted_nan) {
    std::cerr << "training diverged (non-finite loss); last finite checkpoint retained\n";
    fail(ErrKind::nan_abort, "training aborted on non-finite loss");
  }
  std::cerr << "trained " << result.log.size() << " epochs; best epoch " << result.best_epoch
            << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& report_dir, bool exact_marginal_flag, const std::string& split) {
  model::ModelState m = model::load_checkpoint(model_path);
  sim::Dataset ds = sim::read_dataset(data_dir);
  if (m.dataset_hash != ds.hash())
    fail(ErrKind::mismatch, "eval: checkpoint was trained on a different dataset (hash mismatch)");
  if (m.dims.feature_dim != ds.config.feature_dim ||
      m.dims.num_actions != static_cast<int>(ds.task.actions.size()))
    fail(ErrKind::mismatch, "eval: model/dataset shape mismatch");

  auto scored = eval::score_split(m, ds, split);
  if (scored.empty()) fail(ErrKind::config, "eval: split '" + split + "' is empty");

  std::vector<double> marginals;
  if (exact_marginal_flag) {
    for (const sim::Segment* seg : ds.split(split))
      marginals.push_back(detect::exact_marginal(m, ds, *seg));
  }

  fs::path dir(report_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrKind::io, "cannot create directory: " + report_dir);

  eval::write_scores_csv(dir / "scores.csv", scored,
                         exact_marginal_flag ? &marginals : nullptr);

  auto grid = eval::default_threshold_grid();
  eval::EvalReport rep = eval::evaluate(scored, grid);
  rep.config_hash = m.config_hash;

  json rj;
  rj["auc"] = rep.auc;
  rj["eda"] = rep.eda;
  if (rep.precision) rj["precision"] = *rep.precision;
  else rj["precision"] = nullptr;
  rj["split"] = split;
  rj["segments"] = scored.size();
  rj["config_hash"] = rep.config_hash;
  rj["score_note"] = rep.score_note;
  write_text_file(dir / "report.json", rj.dump(2) + "\n");

  std::ostringstream flat;
  flat.imbue(std::locale::classic());
  flat.precision(17);
  flat << "metric,value\nauc," << rep.auc << "\neda," << rep.eda << "\n";
  if (rep.precision) flat << "precision," << *rep.precision << "\n";
  write_text_file(dir / "report.csv", flat.str());

  std::ostringstream curve;
  curve.imbue(std::locale::classic());
  curve.precision(17);
  curve << "threshold,accuracy\n";
  for (auto [tau, acc] : eval::accuracy_curve(scored, grid)) curve << tau << "," << acc << "\n";
  write_text_file(dir / "threshold_curve.csv", curve.str());

  write_run_manifest(dir, "eval", model_path, m.config_hash, 0,
                     {"scores.csv", "report.json", "report.csv", "threshold_curve.csv"});
  std::cout << "auc=" << rep.auc << " eda=" << rep.eda;
  if (rep.precision) std::cout << " precision=" << *rep.precision;
  std::cout << "\n";
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& variants_csv,
               const std::string& seeds_csv, const std::string& report_dir,
               const std::string& config_path) {
  std::vector<std::string> variants;
  {
    std::stringstream ss(variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      // Validated here so an unknown variant is a usage error before training.
      train::make_variant(train::TrainConfig{}, item);
      variants.push_back(item);
    }
  }
  if (variants.empty()) fail(ErrKind::config, "ablate: no variants given");
  std::vector<uint64_t> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        fail(ErrKind::config, "ablate: bad seed '" + item + "'");
      }
    }
  }
  if (seeds.empty()) fail(ErrKind::config, "ablate: no seeds given");

  train::TrainConfig base = config_path.empty()
                                ? train::TrainConfig{}
                                : train::train_config_from_json_text(read_text_file(config_path));
  sim::Dataset ds = sim::read_dataset(data_dir);
  auto rows = eval::run_ablation(ds, base, variants, seeds);

  // Reference row: uniform random scores over the same test split.
  std::vector<eval::ScoredSegment> test_template;
  for (const sim::Segment* seg : ds.split("test"))
    test_template.push_back({seg->id, seg->action, seg->frame_count(), seg->y, 0.0});
  eval::AblationRow random_row;
  random_row.variant = "random";
  for (uint64_t s : seeds) {
    eval::EvalReport rep = eval::random_baseline(test_template, s);
    random_row.auc_per_seed.push_back(rep.auc);
    random_row.eda_per_seed.push_back(rep.eda);
  }
  {
    auto mean_std = [](const std::vector<double>& v, double* mean, double* sd) {
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double var = 0;
      for (double x : v) var += (x - m) * (x - m);
      *mean = m;
      *sd = std::sqrt(var / static_cast<double>(v.size()));
    };
    mean_std(random_row.auc_per_seed, &random_row.auc_mean, &random_row.auc_std);
    mean_std(random_row.eda_per_seed, &random_row.eda_mean, &random_row.eda_std);
    rows.push_back(std::move(random_row));
  }

  fs::path dir(report_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrKind::io, "cannot create directory: " + report_dir);

  json rj;
  json variants_json = json::array();
  std::ostringstream table;
  table.imbue(std::locale::classic());
  table << "variant,auc_mean,auc_std,eda_mean,eda_std\n";
  for (const auto& row : rows) {
    json v;
    v["variant"] = row.variant;
    v["auc_mean"] = row.auc_mean;
    v["auc_std"] = row.auc_std;
    v["eda_mean"] = row.eda_mean;
    v["eda_std"] = row.eda_std;
    v["auc_per_seed"] = row.auc_per_seed;
    v["eda_per_seed"] = row.eda_per_seed;
    variants_json.push_back(std::move(v));
    table << row.variant << "," << row.auc_mean << "," << row.auc_std << "," << row.eda_mean
          << "," << row.eda_std << "\n";
  }
  rj["variants"] = std::move(variants_json);
  rj["seeds"] = seeds;

  auto find_row = [&rows](const std::string& name) -> const eval::AblationRow* {
    for (const auto& r : rows)
      if (r.variant == name) return &r;
    return nullptr;
  };
  json comparisons = json::array();
  const auto* full = find_row("full");
  if (full) {
    for (const char* other : {"no_effect", "last_frame", "no_align"}) {
      const auto* row = find_row(other);
      if (!row) continue;
      json c;
      c["comparison"] = std::string("full_vs_") + other;
      c["auc_delta"] = full->auc_mean - row->auc_mean;
      c["direction_holds"] = full->auc_mean >= row->auc_mean;
      comparisons.push_back(std::move(c));
    }
  }
  rj["comparisons"] = comparisons;
  write_text_file(dir / "ablation.json", rj.dump(2) + "\n");
  write_text_file(dir / "ablation.csv", table.str());
  write_run_manifest(dir, "ablate", config_path, train::train_config_hash(base),
                     seeds.empty() ? 0 : seeds.front(), {"ablation.json", "ablation.csv"});

  std::cout << table.str();
  for (const auto& c : comparisons)
    std::cout << c["comparison"].get<std::string>() << " auc_delta="
              << c["auc_delta"].get<double>()
              << (c["direction_holds"].get<bool>() ? " (holds)" : " (violated)") << "\n";
  return 0;
}

int cmd_sample_frames(const std::string& data_dir, const std::string& split,
                      const std::string& out_csv) {
  sim::Dataset ds = sim::read_dataset(data_dir);
  auto segs = ds.split(split);
  if (segs.empty()) fail(ErrKind::config, "sample-frames: split '" + split + "' is empty");
  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv << "segment_id,selected,gt_effect_index,match,last_frame,last_frame_match\n";
  size_t hits = 0, last_hits = 0;
  for (const sim::Segment* seg : segs) {
    auto fs_scores = sampling::select_effect_frame(ds, *seg);
    int last = sampling::last_frame_baseline(*seg);
    bool match = fs_scores.selected == seg->gt_effect_index;
    bool last_match = last == seg->gt_effect_index;
    hits += match;
    last_hits += last_match;
    csv << seg->id << "," << fs_scores.selected << "," << seg->gt_effect_index << "," << match
        << "," << last << "," << last_match << "\n";
  }
  if (!out_csv.empty()) {
    fs::path out(out_csv);
    if (out.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(out.parent_path(), ec);
    }
    write_text_file(out, csv.str());
    if (out.has_parent_path())
      write_run_manifest(out.parent_path(), "sample-frames", data_dir, 0, 0,
                         {out.filename().string()});
  }
  std::cout << "segments=" << segs.size()
            << " ranked_accuracy=" << static_cast<double>(hits) / static_cast<double>(segs.size())
            << " last_frame_accuracy="
            << static_cast<double>(last_hits) / static_cast<double>(segs.size()) << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, bool corrupt_gradient) {
  // Small closed pipeline: a tiny synthetic task, one batch of two segments.
  sim::SimConfig cfg;
  cfg.num_actions = 2;
  cfg.feature_dim = 8;
  cfg.frames_min = 3;
  cfg.frames_max = 4;
  cfg.max_objects = 2;
  cfg.train_videos = 1;
  cfg.val_videos = 1;
  cfg.test_videos = 1;
  cfg.segments_per_video_min = 2;
  cfg.segments_per_video_max = 2;
  sim::Dataset ds = sim::generate_dataset(cfg, seed);

  train::TrainConfig tc;
  tc.effect_dim = 8;
  tc.seed = seed;
  model::ModelDims dims;
  dims.feature_dim = cfg.feature_dim;
  dims.effect_dim = tc.effect_dim;
  dims.max_objects = cfg.max_objects;
  dims.num_actions = cfg.num_actions;
  model::ModelState m = model::init_model(dims, ds, seed);
  detect::PromptBank bank = detect::build_prompt_bank(m);

  std::vector<train::TrainSample> samples;
  for (const sim::Segment* seg : ds.split("train"))
    samples.push_back(train::prepare_sample(ds, *seg, tc.sampler));
  std::vector<const train::TrainSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);

  struct LossCase {
    std::string name;
    train::LossSwitches sw;
  };
  std::vector<LossCase> cases;
  {
    train::LossSwitches none;
    none.eff_s_visual = none.eff_s_textual = none.eff_r_visual = none.eff_r_textual = false;
    none.cl_s = none.cl_r = false;
    none.det = false;
    train::LossSwitches eff_s = none;
    eff_s.eff_s_visual = eff_s.eff_s_textual = true;
    train::LossSwitches eff_r = none;
    eff_r.eff_r_visual = eff_r.eff_r_textual = true;
    train::LossSwitches cl_s = none;
    cl_s.cl_s = true;
    train::LossSwitches cl_r = none;
    cl_r.cl_r = true;
    train::LossSwitches det = none;
    det.det = true;
    cases.push_back({"eff_s", eff_s});
    cases.push_back({"eff_r", eff_r});
    cases.push_back({"cl_s", cl_s});
    cases.push_back({"cl_r", cl_r});
    cases.push_back({"det", det});
    cases.push_back({"total", train::LossSwitches{}});
  }

  bool all_ok = true;
  std::cout << "loss,worst_rel_err,worst_param\n";
  for (const auto& c : cases) {
    train::TrainConfig case_cfg = tc;
    case_cfg.losses = c.sw;
    train::BatchTargets targets =
        train::precompute_alignment_targets(m.params, m.dims, batch, case_cfg);
    num::GradCheckOptions opts;
    opts.epsilon = 1e-5;
    opts.subset_seed = seed;
    auto report = num::grad_check(
        m.params,
        [&](num::Tape& t, const ParamMap& p) {
          return train::build_total_loss(t, p, m.dims, batch, case_cfg, bank, targets, nullptr);
        },
        opts);
    double worst = report.worst;
    if (corrupt_gradient) worst += 1.0;  // negative control
    all_ok = all_ok && worst < 1e-4;
    std::cout << c.name << "," << worst << "," << report.worst_param << "\n";
  }
  std::cerr << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"effect-aware procedural mistake detection pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, model_path, report_dir, split = "test";
  std::string variants_csv, seeds_csv, out_csv;
  uint64_t seed = 0;
  bool exact_marginal_flag = false, corrupt_gradient = false;

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "dataset config JSON");
  gen->add_option("--out", out_dir, "output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "generation seed");

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--config", config_path, "training config JSON");
  tr->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "score a split and compute metrics");
  ev->add_option("--model", model_path, "checkpoint path")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--report", report_dir, "report directory")->required();
  ev->add_option("--split", split, "split to score (default test)");
  ev->add_flag("--exact-marginal", exact_marginal_flag, "emit the marginalization diagnostic");

  auto* ab = app.add_subcommand("ablate", "train and compare ablation variants");
  ab->add_option("--data", data_dir, "dataset directory")->required();
  ab->add_option("--variants", variants_csv, "comma-separated variant names")->required();
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds")->required();
  ab->add_option("--report", report_dir, "report directory")->required();
  ab->add_option("--config", config_path, "training config JSON");

  auto* sf = app.add_subcommand("sample-frames", "run the effect-frame sampler over a split");
  sf->add_option("--data", data_dir, "dataset directory")->required();
  sf->add_option("--split", split, "split (default test)");
  sf->add_option("--out", out_csv, "per-segment CSV output path");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  auto* gc_seed = gc->add_option("--seed", seed, "seed");
  gc->add_flag("--corrupt-gradient", corrupt_gradient, "negative control: force a failure");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_dir, seed_fallback(seed, !gen_seed->empty()));
    if (tr->parsed()) return cmd_train(data_dir, config_path, out_dir);
    if (ev->parsed()) return cmd_eval(model_path, data_dir, report_dir, exact_marginal_flag, split);
    if (ab->parsed()) return cmd_ablate(data_dir, variants_csv, seeds_csv, report_dir, config_path);
    if (sf->parsed()) return cmd_sample_frames(data_dir, split, out_csv);
    if (gc->parsed()) return cmd_gradcheck(seed_fallback(seed, !gc_seed->empty()), corrupt_gradient);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

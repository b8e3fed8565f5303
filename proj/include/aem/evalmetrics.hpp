#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aem/sim.hpp"
#include "aem/train.hpp"

namespace aem::eval {

struct ScoredSegment {
  std::string id;
  std::string action;
  int frames = 1;  // T, for frame-level expansion
  int y = 0;
  double score = 0.0;  // in [0,1]
};

// Frame-level ROC AUC in percent: every segment's score and label replicated
// to its T frames, rank statistic U/(P*N) with average ranks for ties.
double frame_auc(const std::vector<ScoredSegment>& segments);

// Default threshold grid 0.02, 0.04, ..., 0.98.
std::vector<double> default_threshold_grid();

// Mean segment-level accuracy over the grid, percent.
double eda(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid);

// Mean precision among predicted positives over the grid; thresholds with no
// predicted positives are skipped; all skipped -> error.
double precision(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid);

// tau -> segment accuracy, for the emitted curve.
std::vector<std::pair<double, double>> accuracy_curve(const std::vector<ScoredSegment>& segments,
                                                      const std::vector<double>& grid);

struct EvalReport {
  double auc = 0.0;
  double eda = 0.0;
  std::optional<double> precision;  // undefined when no threshold predicts positives
  std::string variant = "full";
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  std::string score_note =
      "scores are (1 - cos)/2: bounded monotone remap of the raw 1 - cos/rho";
};

EvalReport evaluate(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid);

// Uniform scores in [0,1); the no-skill reference row.
EvalReport random_baseline(std::vector<ScoredSegment> segments, uint64_t seed);

// Score CSV interface: header segment_id,action,label,score[,exact_marginal].
void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredSegment>& segments,
                      const std::vector<double>* exact_marginal = nullptr);
std::vector<ScoredSegment> read_scores_csv(const std::filesystem::path& path);

struct AblationRow {
  std::string variant;
  double auc_mean = 0, auc_std = 0;
  double eda_mean = 0, eda_std = 0;
  std::vector<double> auc_per_seed;
  std::vector<double> eda_per_seed;
};

// Trains variant x seed on the train split and evaluates on the test split.
std::vector<AblationRow> run_ablation(const sim::Dataset& ds, const train::TrainConfig& base,
                                      const std::vector<std::string>& variants,
                                      const std::vector<uint64_t>& seeds);

// Scores every test segment with the deployed detector.
std::vector<ScoredSegment> score_split(const model::ModelState& m, const sim::Dataset& ds,
                                       const std::string& split);

}  // namespace aem::eval

#include "aem/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aem/detector.hpp"
#include "aem/rng.hpp"

namespace aem::eval {

double frame_auc(const std::vector<ScoredSegment>& segments) {
  std::vector<std::pair<double, int>> frames;  // (score, label)
  for (const auto& s : segments) {
    if (s.score < 0.0 || s.score > 1.0)
      fail(ErrKind::validation, "frame_auc: score outside [0,1] for " + s.id);
    for (int t = 0; t < s.frames; ++t) frames.emplace_back(s.score, s.y);
  }
  size_t pos = 0, neg = 0;
  for (auto& [score, y] : frames) (y == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0)
    fail(ErrKind::validation, "frame_auc: needs both classes after frame expansion");

  std::sort(frames.begin(), frames.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Average ranks over ties, 1-based.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < frames.size()) {
    size_t j = i;
    while (j < frames.size() && frames[j].first == frames[i].first) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k)
      if (frames[k].second == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  double p = static_cast<double>(pos);
  double u = rank_sum_pos - p * (p + 1.0) / 2.0;
  return 100.0 * u / (p * static_cast<double>(neg));
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 49; ++i) grid.push_back(0.02 * i);
  return grid;
}

namespace {
void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail(ErrKind::config, "metric grid must be nonempty");
  for (double tau : grid)
    if (tau <= 0.0 || tau >= 1.0) fail(ErrKind::config, "metric grid values must lie in (0,1)");
}
}  // namespace

double eda(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid) {
  check_grid(grid);
  if (segments.empty()) fail(ErrKind::validation, "eda: no segments");
  double acc_sum = 0.0;
  for (double tau : grid) {
    size_t correct = 0;
    for (const auto& s : segments)
      if (detect::classify(s.score, tau) == s.y) ++correct;
    acc_sum += static_cast<double>(correct) / static_cast<double>(segments.size());
  }
  return 100.0 * acc_sum / static_cast<double>(grid.size());
}

double precision(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid) {
  check_grid(grid);
  if (segments.empty()) fail(ErrKind::validation, "precision: no segments");
  double sum = 0.0;
  size_t used = 0;
  for (double tau : grid) {
    size_t tp = 0, fp = 0;
    for (const auto& s : segments) {
      if (detect::classify(s.score, tau) == 1) (s.y == 1 ? tp : fp)++;
    }
    if (tp + fp == 0) continue;  // no predicted positives at this threshold
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp);
    ++used;
  }
  if (used == 0)
    fail(ErrKind::validation, "precision: undefined (no threshold predicts any positive)");
  return 100.0 * sum / static_cast<double>(used);
}

std::vector<std::pair<double, double>> accuracy_curve(const std::vector<ScoredSegment>& segments,
                                                      const std::vector<double>& grid) {
  check_grid(grid);
  std::vector<std::pair<double, double>> curve;
  for (double tau : grid) {
    size_t correct = 0;
    for (const auto& s : segments)
      if (detect::classify(s.score, tau) == s.y) ++correct;
    curve.emplace_back(tau, static_cast<double>(correct) / static_cast<double>(segments.size()));
  }
  return curve;
}

EvalReport evaluate(const std::vector<ScoredSegment>& segments, const std::vector<double>& grid) {
  EvalReport r;
  r.auc = frame_auc(segments);
  r.eda = eda(segments, grid);
  try {
    r.precision = precision(segments, grid);
  } catch (const Error&) {
    r.precision = std::nullopt;
  }
  return r;
}

EvalReport random_baseline(std::vector<ScoredSegment> segments, uint64_t seed) {
  Rng rng(derive_seed(seed, "random-baseline"));
  for (auto& s : segments) s.score = rng.uniform();
  EvalReport r = evaluate(segments, default_threshold_grid());
  r.variant = "random";
  r.seed = seed;
  return r;
}

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ScoredSegment>& segments,
                      const std::vector<double>* exact_marginal) {
  if (exact_marginal && exact_marginal->size() != segments.size())
    fail(ErrKind::shape, "write_scores_csv: diagnostic column size mismatch");
  std::ofstream f(path);
  if (!f) fail(ErrKind::io, "cannot open for writing: " + path.string());
  f.imbue(std::locale::classic());
  f.precision(17);
  f << "segment_id,action,label,score";
  if (exact_marginal) f << ",exact_marginal";
  f << "\n";
  for (size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    f << s.id << "," << s.action << "," << s.y << "," << s.score;
    if (exact_marginal) f << "," << (*exact_marginal)[i];
    f << "\n";
  }
  if (!f) fail(ErrKind::io, "write failed: " + path.string());
}

std::vector<ScoredSegment> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrKind::io, "cannot open: " + path.string());
  std::string line;
  if (!std::getline(f, line)) fail(ErrKind::io, "scores csv: empty file");
  if (line.rfind("segment_id,action,label,score", 0) != 0)
    fail(ErrKind::io, "scores csv: unexpected header '" + line + "'");
  std::vector<ScoredSegment> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ss.imbue(std::locale::classic());
    ScoredSegment s;
    std::string label, score;
    if (!std::getline(ss, s.id, ',') || !std::getline(ss, s.action, ',') ||
        !std::getline(ss, label, ',') || !std::getline(ss, score, ','))
      fail(ErrKind::io, "scores csv: malformed row '" + line + "'");
    try {
      s.y = std::stoi(label);
      s.score = std::stod(score);
    } catch (const std::exception&) {
      fail(ErrKind::io, "scores csv: malformed row '" + line + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ScoredSegment> score_split(const model::ModelState& m, const sim::Dataset& ds,
                                       const std::string& split) {
  std::vector<ScoredSegment> out;
  for (const sim::Segment* seg : ds.split(split)) {
    ScoredSegment s;
    s.id = seg->id;
    s.action = seg->action;
    s.frames = seg->frame_count();
    s.y = seg->y;
    s.score = detect::score_segment(m, *seg).score;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AblationRow> run_ablation(const sim::Dataset& ds, const train::TrainConfig& base,
                                      const std::vector<std::string>& variants,
                                      const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) fail(ErrKind::config, "run_ablation: need at least one seed");
  std::vector<AblationRow> rows;
  for (const std::string& name : variants) {
    train::TrainConfig cfg = train::make_variant(base, name);
    AblationRow row;
    row.variant = name;
    for (uint64_t seed : seeds) {
      cfg.seed = seed;
      train::TrainResult result = train::train(ds, cfg);
      auto scored = score_split(result.final_model, ds, "test");
      row.auc_per_seed.push_back(frame_auc(scored));
      row.eda_per_seed.push_back(eda(scored, default_threshold_grid()));
    }
    auto mean_std = [](const std::vector<double>& v, double* mean, double* sd) {
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double var = 0;
      for (double x : v) var += (x - m) * (x - m);
      var /= static_cast<double>(v.size());
      *mean = m;
      *sd = std::sqrt(var);
    };
    mean_std(row.auc_per_seed, &row.auc_mean, &row.auc_std);
    mean_std(row.eda_per_seed, &row.eda_mean, &row.eda_std);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace aem::eval

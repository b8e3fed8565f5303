#include "aem/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace aem::sampling {

Eigen::VectorXd semantic_relevance(const Matrix& frames, const Matrix& descriptions) {
  if (descriptions.rows() < 1) fail(ErrKind::shape, "semantic_relevance: need >= 1 description");
  if (descriptions.cols() != frames.cols())
    fail(ErrKind::shape, "semantic_relevance: dimension mismatch " + shape_str(frames) + " vs " +
                             shape_str(descriptions));
  const Eigen::Index T = frames.rows();
  const Eigen::Index K = descriptions.rows();
  Eigen::VectorXd mean_cos(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    double fn = std::max(frames.row(t).norm(), 1e-12);
    double acc = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      double dn = std::max(descriptions.row(k).norm(), 1e-12);
      acc += frames.row(t).dot(descriptions.row(k)) / (fn * dn);
    }
    mean_cos(t) = acc / static_cast<double>(K);
  }
  double m = mean_cos.maxCoeff();
  Eigen::VectorXd e = (mean_cos.array() - m).exp();
  return e / e.sum();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrKind::shape, "percentile: empty input");
  std::sort(values.begin(), values.end());
  double h = q * static_cast<double>(values.size() - 1);
  size_t lo = static_cast<size_t>(std::floor(h));
  size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Eigen::VectorXd normalize_clarity(const Eigen::VectorXd& raw) {
  std::vector<double> vals(raw.data(), raw.data() + raw.size());
  double p5 = percentile(vals, 0.05);
  double p95 = percentile(vals, 0.95);
  Eigen::VectorXd out(raw.size());
  if (p95 - p5 < 1e-12) {
    out.setConstant(0.5);
    return out;
  }
  for (Eigen::Index t = 0; t < raw.size(); ++t)
    out(t) = std::clamp((raw(t) - p5) / (p95 - p5), 0.0, 1.0);
  return out;
}

Eigen::VectorXd visual_clarity(const std::vector<MatrixF>& patches) {
  if (patches.empty()) fail(ErrKind::shape, "visual_clarity: no patches");
  Eigen::VectorXd raw(static_cast<Eigen::Index>(patches.size()));
  for (size_t t = 0; t < patches.size(); ++t)
    raw(static_cast<Eigen::Index>(t)) = sim::laplacian_variance(patches[t]);
  return normalize_clarity(raw);
}

FrameScores select_effect_frame(const Matrix& frames, const std::vector<MatrixF>& patches,
                                const Matrix& descriptions) {
  if (frames.rows() < 1) fail(ErrKind::shape, "select_effect_frame: empty segment");
  if (static_cast<Eigen::Index>(patches.size()) != frames.rows())
    fail(ErrKind::shape, "select_effect_frame: frame/patch count mismatch");
  FrameScores fs;
  fs.relevance = semantic_relevance(frames, descriptions);
  fs.clarity = visual_clarity(patches);
  fs.combined = 0.5 * (fs.relevance + fs.clarity);
  fs.frame_distribution = fs.combined / fs.combined.sum();
  fs.selected = 0;
  for (Eigen::Index t = 1; t < fs.combined.size(); ++t)
    if (fs.combined(t) > fs.combined(fs.selected)) fs.selected = static_cast<int>(t);
  return fs;
}

FrameScores select_effect_frame(const sim::Dataset& ds, const sim::Segment& seg) {
  return select_effect_frame(seg.frames.cast<double>(), seg.patches,
                             ds.description_embeddings(seg.action_index));
}

int last_frame_baseline(const sim::Segment& seg) {
  if (seg.frame_count() < 1) fail(ErrKind::shape, "last_frame_baseline: empty segment");
  return seg.frame_count() - 1;
}

}  // namespace aem::sampling

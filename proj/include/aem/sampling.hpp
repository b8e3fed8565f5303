#pragma once

#include <vector>

#include "aem/sim.hpp"
#include "aem/types.hpp"

namespace aem::sampling {

// Per-frame ranking of an action segment by semantic relevance (cosine to
// anticipated-state descriptions, softmaxed) and visual clarity (percentile-
// normalized Laplacian variance). The two live on different scales and are
// averaged as-is; selection is argmax with lowest-index tie-breaking.
struct FrameScores {
  Eigen::VectorXd relevance;  // sums to 1
  Eigen::VectorXd clarity;    // elementwise in [0,1]
  Eigen::VectorXd combined;   // (relevance + clarity) / 2
  Eigen::VectorXd frame_distribution;  // combined / sum(combined)
  int selected = 0;
};

// r = softmax_t(mean_k cos(X[t], d_k)). Rows of `descriptions` must be unit.
Eigen::VectorXd semantic_relevance(const Matrix& frames, const Matrix& descriptions);

// Percentile normalization of raw Laplacian variances: clamp((raw-p5)/(p95-p5), 0, 1);
// a degenerate range maps every frame to 0.5.
Eigen::VectorXd visual_clarity(const std::vector<MatrixF>& patches);
Eigen::VectorXd normalize_clarity(const Eigen::VectorXd& raw);

FrameScores select_effect_frame(const Matrix& frames, const std::vector<MatrixF>& patches,
                                const Matrix& descriptions);
FrameScores select_effect_frame(const sim::Dataset& ds, const sim::Segment& seg);

int last_frame_baseline(const sim::Segment& seg);

// Percentile by linear interpolation between order statistics, q in [0,1].
double percentile(std::vector<double> values, double q);

}  // namespace aem::sampling

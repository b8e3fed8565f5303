#pragma once

#include <string>
#include <vector>

#include "aem/model.hpp"
#include "aem/params.hpp"
#include "aem/sampling.hpp"
#include "aem/tape.hpp"

namespace aem::detect {

// Template "An image showing [ACTION] for [TASK]".
std::string build_prompt(const std::string& action, const std::string& task);

// One prompt per action. The token sums are frozen (vocab table); only the
// learnable prefix p trains. `cached` holds the unit prompt embeddings for
// the current parameters (inference).
struct PromptBank {
  std::string task_name;
  std::vector<std::string> actions;
  std::vector<std::string> prompts;
  Matrix token_sums;              // C x D: sum of prompt token vectors
  std::vector<int> token_counts;  // tokens per prompt (excluding the prefix)
  Matrix cached;                  // C x D unit rows
};

PromptBank build_prompt_bank(const model::ModelState& m);

// y_a = normalize(M . mean([p; prompt tokens])) for every action -> C x D.
// Gradients reach only p; M and the vocab are frozen.
num::Value prompt_embeddings(num::Tape& t, const ParamMap& p, const PromptBank& bank);

// Temporal mean of the fused rows, unit-normalized. Errors on a zero mean.
num::Value action_embedding(num::Tape& t, num::Value fused);

// L_det = -(1/B) sum_i log( exp(cos(x_i, y_{a_i})/rho) / sum_c exp(cos(x_i, y_c)/rho) ).
num::Value detection_loss(num::Tape& t, num::Value action_rows, num::Value prompt_rows,
                          const std::vector<int>& action_ids, double rho);

// Bounded mistake probability (1 - cos)/2; monotone in the raw 1 - cos/rho.
double mistake_probability(double cosine);
int classify(double score, double tau);

struct SegmentScore {
  double score = 0;          // both effect blocks active
  double state_only = 0;     // relation block zeroed
  double relation_only = 0;  // state block zeroed
};

// Deployed inference: encoder -> token projections -> fusion -> pooled
// embedding vs the action's prompt. Pure in the model state.
SegmentScore score_segment(const model::ModelState& m, const sim::Segment& seg);

// Literal marginalization: sum over frames and descriptors of
// score(descriptor) * (1/K) * P(frame). Frame distribution from the sampler.
double exact_marginal(const model::ModelState& m, const sim::Dataset& ds,
                      const sim::Segment& seg);
double marginal_from_parts(const Eigen::VectorXd& frame_distribution,
                           const std::vector<double>& descriptor_scores);

// The deployed top-1 construction with descriptors treated symmetrically.
double symmetric_top1_score(const SegmentScore& s);

}  // namespace aem::detect

#include "aem/detector.hpp"

#include "aem/effect.hpp"
#include "aem/text.hpp"

namespace aem::detect {

using num::Tape;
using num::Value;

std::string build_prompt(const std::string& action, const std::string& task) {
  if (action.empty() || task.empty()) fail(ErrKind::validation, "build_prompt: empty label");
  return "An image showing " + action + " for " + task;
}

PromptBank build_prompt_bank(const model::ModelState& m) {
  PromptBank bank;
  bank.task_name = m.task_name;
  bank.actions = m.actions;
  text::Vocab vocab = m.vocab();
  const Eigen::Index D = m.dims.feature_dim;
  bank.token_sums.resize(static_cast<Eigen::Index>(m.actions.size()), D);
  for (size_t a = 0; a < m.actions.size(); ++a) {
    bank.prompts.push_back(build_prompt(m.actions[a], m.task_name));
    Matrix toks = text::token_vectors(vocab, bank.prompts.back());
    bank.token_sums.row(static_cast<Eigen::Index>(a)) = toks.colwise().sum();
    bank.token_counts.push_back(static_cast<int>(toks.rows()));
  }
  // Cache for inference with the current prefix.
  const Matrix& mix = m.params.at("text.mix");
  const Matrix& prefix = m.params.at("prompt.p");
  bank.cached.resize(bank.token_sums.rows(), D);
  for (Eigen::Index a = 0; a < bank.token_sums.rows(); ++a) {
    RowVec mean = (prefix.row(0) + bank.token_sums.row(a)) /
                  static_cast<double>(bank.token_counts[static_cast<size_t>(a)] + 1);
    RowVec y = mean * mix.transpose();
    bank.cached.row(a) = y / std::max(y.norm(), 1e-12);
  }
  return bank;
}

Value prompt_embeddings(Tape& t, const ParamMap& p, const PromptBank& bank) {
  Value prefix = p.at("prompt.p");
  Value mix_t = t.constant(Matrix(t.value(p.at("text.mix")).transpose()));
  std::vector<Value> rows;
  for (Eigen::Index a = 0; a < bank.token_sums.rows(); ++a) {
    Value sum = add(t, prefix, t.constant(Matrix(bank.token_sums.row(a))));
    Value mean = scale(t, sum,
                       1.0 / static_cast<double>(bank.token_counts[static_cast<size_t>(a)] + 1));
    rows.push_back(matmul(t, mean, mix_t));
  }
  return l2_normalize_rows(t, concat_rows(t, rows));
}

Value action_embedding(Tape& t, Value fused) {
  Value mean = mean_rows(t, fused);
  if (t.value(mean).norm() < 1e-12)
    fail(ErrKind::numeric, "action_embedding: degenerate segment (zero pooled feature)");
  return l2_normalize_rows(t, mean);
}

Value detection_loss(Tape& t, Value action_rows, Value prompt_rows,
                     const std::vector<int>& action_ids, double rho) {
  if (rho <= 0.0) fail(ErrKind::config, "detection_loss: rho must be positive");
  const Eigen::Index B = t.value(action_rows).rows();
  if (static_cast<Eigen::Index>(action_ids.size()) != B)
    fail(ErrKind::shape, "detection_loss: action ids do not match batch");
  Value logits = scale(t, matmul(t, action_rows, transpose(t, prompt_rows)), 1.0 / rho);
  Value pos = gather_cols(t, logits, action_ids);
  Value per_sample = sub(t, logsumexp_rows(t, logits), pos);
  return scale(t, sum_all(t, per_sample), 1.0 / static_cast<double>(B));
}

double mistake_probability(double cosine) { return (1.0 - cosine) / 2.0; }

int classify(double score, double tau) {
  if (score < 0.0 || score > 1.0 || tau < 0.0 || tau > 1.0)
    fail(ErrKind::validation, "classify: score and threshold must lie in [0,1]");
  return score > tau ? 1 : 0;
}

namespace {

double cosine_to_prompt(Tape& t, const ParamMap& p, const PromptBank& bank, Value fused,
                        int action_index) {
  Value xa = action_embedding(t, fused);
  RowVec ya = bank.cached.row(action_index);
  return (t.value(xa).row(0) * ya.transpose())(0, 0);
}

}  // namespace

SegmentScore score_segment(const model::ModelState& m, const sim::Segment& seg) {
  int a = m.action_index(seg.action);
  if (a < 0) fail(ErrKind::mismatch, "score_segment: unknown action '" + seg.action + "'");
  PromptBank bank = build_prompt_bank(m);

  Tape t;
  ParamMap p = bind_const(t, m.params);
  Matrix frames = seg.frames.cast<double>();
  auto enc = effect::encode_with_token(t, p, m.dims, frames, a);
  Value proj_s = effect::project_state(t, p, enc.token);
  Value proj_r = effect::project_relation(t, p, enc.token);
  Value zero_s = t.constant(Matrix::Zero(1, m.dims.effect_dim));
  Value zero_r = t.constant(Matrix::Zero(1, m.dims.effect_dim));

  SegmentScore out;
  Value full = effect::fuse_with(t, p, t.constant(frames), proj_s, proj_r);
  out.score = mistake_probability(cosine_to_prompt(t, p, bank, full, a));
  Value state_only = effect::fuse_with(t, p, t.constant(frames), proj_s, zero_r);
  out.state_only = mistake_probability(cosine_to_prompt(t, p, bank, state_only, a));
  Value relation_only = effect::fuse_with(t, p, t.constant(frames), zero_s, proj_r);
  out.relation_only = mistake_probability(cosine_to_prompt(t, p, bank, relation_only, a));
  return out;
}

double marginal_from_parts(const Eigen::VectorXd& frame_distribution,
                           const std::vector<double>& descriptor_scores) {
  if (descriptor_scores.empty()) fail(ErrKind::shape, "marginal: no descriptors");
  const double k_weight = 1.0 / static_cast<double>(descriptor_scores.size());
  double total = 0.0;
  for (Eigen::Index f = 0; f < frame_distribution.size(); ++f)
    for (double s : descriptor_scores) total += s * k_weight * frame_distribution(f);
  return total;
}

double exact_marginal(const model::ModelState& m, const sim::Dataset& ds,
                      const sim::Segment& seg) {
  SegmentScore s = score_segment(m, seg);
  sampling::FrameScores fs = sampling::select_effect_frame(ds, seg);
  return marginal_from_parts(fs.frame_distribution, {s.state_only, s.relation_only});
}

double symmetric_top1_score(const SegmentScore& s) {
  return 0.5 * (s.state_only + s.relation_only);
}

}  // namespace aem::detect

#pragma once

#include <string>
#include <vector>

#include "aem/detector.hpp"
#include "aem/grad_check.hpp"
#include "aem/knowledge.hpp"
#include "aem/model.hpp"
#include "aem/sampling.hpp"

namespace aem::train {

enum class SamplerVariant { ranked, last_frame };
std::string to_string(SamplerVariant v);

struct LossSwitches {
  bool eff_s_visual = true;
  bool eff_s_textual = true;
  bool eff_r_visual = true;
  bool eff_r_textual = true;
  bool cl_s = true;
  bool cl_r = true;
  bool det = true;

  bool eff_s() const { return eff_s_visual || eff_s_textual; }
  bool eff_r() const { return eff_r_visual || eff_r_textual; }
};

struct LossWeights {
  double eff_s = 1.0, eff_r = 1.0, cl_s = 1.0, cl_r = 1.0, det = 1.0;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  double rho = 0.07;
  int effect_dim = 64;
  LossSwitches losses;
  LossWeights weights;
  SamplerVariant sampler = SamplerVariant::ranked;
  bool per_action_token = false;
  bool freeze_supervision_in_alignment = false;  // detach t_s/t_r in the effect loss
  bool freeze_fusion_effect_blocks = false;      // zero + freeze fuse.ws / fuse.wr
  int debug_nan_at_step = -1;                    // test hook: inject a NaN loss

  void validate() const;
};

TrainConfig train_config_from_json_text(const std::string& text);  // strict
std::string train_config_to_json_text(const TrainConfig& cfg);
uint64_t train_config_hash(const TrainConfig& cfg);

// Table 3-style ablation rows: full, no_effect, last_frame, no_align,
// state_only, relation_only, visual_only, textual_only.
TrainConfig make_variant(const TrainConfig& base, const std::string& name);
const std::vector<std::string>& variant_names();

struct LossBreakdown {
  double eff_s = 0, eff_r = 0, cl_s = 0, cl_r = 0, det = 0, total = 0;
};

// Per-segment constants for the supervision branches, precomputed once per
// run: selected effect frame, its embedding, object slots and the validated
// scene graph.
struct TrainSample {
  const sim::Segment* seg = nullptr;
  int frame_idx = 0;
  RowVec frame_emb;
  std::vector<RowVec> crops;
  std::vector<Eigen::Vector4d> boxes;
  knowledge::SceneGraph graph;
  knowledge::SubgraphPair subgraphs;
};

TrainSample prepare_sample(const sim::Dataset& ds, const sim::Segment& seg,
                           SamplerVariant sampler);

// Supervision targets of the alignment loss, extracted from the current
// parameters before the differentiated forward pass (the visual targets are
// supervision constants; the textual ones join them only under the freeze
// flag). Recomputed every batch.
struct BatchTargets {
  std::vector<RowVec> v_s, v_r;  // per sample, 1 x D_e
  std::vector<RowVec> t_s, t_r;  // filled only when the textual path is frozen
};

BatchTargets precompute_alignment_targets(const ParamStore& params, const model::ModelDims& dims,
                                          const std::vector<const TrainSample*>& batch,
                                          const TrainConfig& cfg);

// Joint objective (unweighted sum by default) over one batch. Training
// batches must be mistake-free; a y=1 sample is a hard error.
num::Value build_total_loss(num::Tape& t, const ParamMap& p, const model::ModelDims& dims,
                            const std::vector<const TrainSample*>& batch, const TrainConfig& cfg,
                            const detect::PromptBank& bank, const BatchTargets& targets,
                            LossBreakdown* breakdown);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train_mean;
  double val_total = 0;
};

struct TrainResult {
  model::ModelState final_model;
  model::ModelState best_model;
  int best_epoch = -1;
  std::vector<EpochRecord> log;
  bool aborted_nan = false;
};

TrainResult train(const sim::Dataset& ds, const TrainConfig& cfg);

}  // namespace aem::train

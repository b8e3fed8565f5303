#pragma once

#include <map>
#include <string>
#include <vector>

#include "aem/rng.hpp"
#include "aem/scene_graph.hpp"
#include "aem/text.hpp"
#include "aem/types.hpp"

namespace aem::sim {

constexpr int kPatchSize = 16;

enum class MistakeKind { none, execution, state, relation };
std::string to_string(MistakeKind k);
MistakeKind mistake_kind_from_string(const std::string& s);

struct MistakeRates {
  double execution = 0.15;
  double state = 0.15;
  double relation = 0.15;
};

struct SimConfig {
  std::string task_name;  // empty -> derived from the seed
  int num_actions = 6;    // C
  int feature_dim = 64;   // D
  int frames_min = 8;
  int frames_max = 24;
  int max_objects = 4;  // N_max
  int descriptions_per_action = 3;
  int train_videos = 16;
  int val_videos = 3;
  int test_videos = 20;
  int segments_per_video_min = 4;
  int segments_per_video_max = 8;
  MistakeRates mistake_rates;  // applied to test segments only
  double feature_noise = 0.1;
  double prototype_scale = 0.8;
  double effect_signature_norm = 1.5;
  double state_render_strength = 1.5;
  double relation_render_strength = 1.5;
  double attribute_delta_norm = 1.0;
  double box_jitter_sigma = 0.0;     // detector-noise knob: box jitter
  double object_dropout_prob = 0.0;  // detector-noise knob: missed detections
  double nonsharp_blur_max = 0.5;    // sharpness of non-effect patches ~ U[0, this]

  void validate() const;
};

SimConfig sim_config_from_json_text(const std::string& text);  // strict: unknown keys rejected
std::string sim_config_to_json_text(const SimConfig& cfg);

struct ObjectObs {
  std::string label;
  Eigen::Vector4d box;  // cx, cy, w, h in [0,1]
  RowVec crop;          // D, f32-quantized
};

struct Segment {
  std::string id;
  std::string video_id;
  std::string split;  // "train" | "val" | "test"
  int t_start = 0;
  int t_end = 0;  // exclusive
  std::string action;
  int action_index = 0;
  int y = 0;
  MistakeKind kind = MistakeKind::none;
  int gt_effect_index = 0;  // within-segment frame index
  MatrixF frames;           // T x D
  std::vector<MatrixF> patches;
  std::vector<ObjectObs> objects;
  knowledge::SceneGraphRecord graph;

  int frame_count() const { return t_end - t_start; }
};

struct TaskSpec {
  struct SceneObject {
    std::string label;
    std::vector<std::string> attribute_values;  // legal values, >= 2
    std::string canonical_value;                // the post-action value
  };
  struct Action {
    std::string label;
    std::vector<SceneObject> objects;       // 2..N_max, fixed per action
    std::vector<std::string> relations;     // relations[i]: objects[i] REL objects[i+1]
    std::vector<std::string> descriptions;  // K_desc anticipated post-action states
  };

  std::string name;
  std::vector<Action> actions;

  int action_index(const std::string& label) const;
};

struct Dataset {
  SimConfig config;
  uint64_t seed = 0;
  TaskSpec task;
  text::Vocab vocab;
  std::vector<Segment> segments;  // ordered train, val, test

  uint64_t hash() const;  // identity: (canonical config json, seed)
  std::vector<const Segment*> split(const std::string& name) const;
  // K_desc x D unit rows for one action's anticipated-state descriptions.
  Matrix description_embeddings(int action_index) const;
};

// Deterministic generator context; everything below is a pure function of
// (config, seed). Rebuildable from a loaded dataset, which is what lets
// mistakes be injected after a round-trip.
class TaskContext {
 public:
  TaskContext(const SimConfig& config, uint64_t seed, const TaskSpec& task,
              const text::Vocab& vocab);
  explicit TaskContext(const Dataset& ds) : TaskContext(ds.config, ds.seed, ds.task, ds.vocab) {}

  const SimConfig& config() const { return config_; }
  const TaskSpec& task() const { return task_; }
  const text::Vocab& vocab() const { return vocab_; }

  // Smooth per-action curve sampled at u in [0,1].
  RowVec trajectory(int action_index, double u) const;
  // Additive marker blended into the effect frame of every segment of this action.
  RowVec effect_signature(int action_index) const;
  RowVec state_render(const std::vector<std::string>& attribute_values) const;
  RowVec relation_render(const std::vector<std::string>& relation_labels) const;

 private:
  SimConfig config_;
  uint64_t seed_;
  TaskSpec task_;
  text::Vocab vocab_;
  std::vector<Matrix> proto_basis_;  // per action: rows = base, amp1..amp3 directions
  std::vector<Matrix> proto_phase_;  // per action: 1 x 3 phases
  Matrix signatures_;                // C x D
};

// Spatial relation between two boxes; cy grows downward, so smaller cy is
// "above". "inside" requires full containment of a in b.
std::string derive_relation(const Eigen::Vector4d& a, const Eigen::Vector4d& b);
std::string invert_relation(const std::string& label);

// Random binary texture box-blurred floor((1-sharpness)*4) times.
MatrixF render_patch(double sharpness_level, Rng& rng);
// Population variance of the valid 3x3 Laplacian response.
double laplacian_variance(const MatrixF& patch);

TaskSpec build_task(const SimConfig& config, uint64_t seed);
std::vector<std::string> vocab_words(const TaskSpec& task);

// Normal (y=0) segment; exposed for tests that need twins for injection.
Segment generate_normal_segment(const TaskContext& ctx, const std::string& video_id,
                                const std::string& split, int segment_index, int action_index,
                                int t_start, Rng& rng);

// In-place transformation of a normal segment into a mistake of the given
// kind. The difference is confined to the effect frame render, the objects
// and the graph (state/relation) or to the non-effect frames (execution).
void inject_mistake(Segment& segment, MistakeKind kind, Rng& rng, const TaskContext& ctx);

Dataset generate_dataset(const SimConfig& config, uint64_t seed);

// OCC and schema invariants; used by generate and by read.
void validate_dataset(const Dataset& ds);

}  // namespace aem::sim

#include "aem/sim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace aem::sim {

using nlohmann::json;

namespace {

constexpr double kBoxGapMin = 0.16, kBoxGapMax = 0.26;
constexpr double kBoxPerpJitter = 0.05;
constexpr double kBoxSizeMin = 0.08, kBoxSizeMax = 0.16;
constexpr double kCropValueCoef = 0.6;
constexpr double kCropNoise = 0.05;  // per-dimension

const std::vector<std::string> kVerbs = {"pour", "cut",   "stir", "place", "fill",
                                         "wash", "slice", "mix",  "heat",  "open"};
const std::vector<std::string> kNouns = {"cup",  "bowl", "knife", "board", "pan",
                                         "jar",  "lid",  "spoon", "plate", "pot"};
const std::vector<std::pair<std::string, std::string>> kAttributePairs = {
    {"empty", "full"}, {"whole", "sliced"}, {"clean", "dirty"}, {"open", "closed"},
    {"raw", "cooked"}, {"dry", "wet"},      {"cold", "hot"},    {"loose", "tight"}};
const std::vector<std::string> kTaskNames = {"salad",    "omelet", "porridge", "sandwich",
                                             "stew",     "curry",  "smoothie", "pastry"};
const std::vector<std::string> kDirectionalRelations = {"left of", "right of", "above", "below"};

double f32q(double x) { return static_cast<double>(static_cast<float>(x)); }

RowVec f32q_row(const RowVec& v) {
  RowVec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = f32q(v(i));
  return out;
}

}  // namespace

std::string to_string(MistakeKind k) {
  switch (k) {
    case MistakeKind::none: return "none";
    case MistakeKind::execution: return "execution";
    case MistakeKind::state: return "state";
    case MistakeKind::relation: return "relation";
  }
  return "none";
}

MistakeKind mistake_kind_from_string(const std::string& s) {
  if (s == "none") return MistakeKind::none;
  if (s == "execution") return MistakeKind::execution;
  if (s == "state") return MistakeKind::state;
  if (s == "relation") return MistakeKind::relation;
  fail(ErrKind::validation, "unknown mistake kind '" + s + "'");
}

void SimConfig::validate() const {
  if (num_actions < 2) fail(ErrKind::config, "config: num_actions must be >= 2");
  if (feature_dim < 8 || feature_dim % 8 != 0)
    fail(ErrKind::config, "config: feature_dim must be a positive multiple of 8");
  if (frames_min < 1 || frames_max < frames_min)
    fail(ErrKind::config, "config: need 1 <= frames_min <= frames_max");
  if (max_objects < 2 || max_objects > static_cast<int>(kNouns.size()))
    fail(ErrKind::config, "config: max_objects must be in [2, " +
                              std::to_string(kNouns.size()) + "]");
  if (descriptions_per_action < 1)
    fail(ErrKind::config, "config: descriptions_per_action must be >= 1");
  if (train_videos <= 0 || val_videos <= 0 || test_videos <= 0)
    fail(ErrKind::config, "config: split sizes must be positive");
  if (segments_per_video_min < 1 || segments_per_video_max < segments_per_video_min)
    fail(ErrKind::config, "config: bad segments_per_video range");
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate_ok(mistake_rates.execution) || !rate_ok(mistake_rates.state) ||
      !rate_ok(mistake_rates.relation))
    fail(ErrKind::config, "config: mistake rates must lie in [0,1]");
  if (mistake_rates.execution + mistake_rates.state + mistake_rates.relation > 1.0)
    fail(ErrKind::config, "config: mistake rates must sum to <= 1");
  if (feature_noise < 0 || prototype_scale <= 0 || effect_signature_norm < 0 ||
      state_render_strength < 0 || relation_render_strength < 0 || attribute_delta_norm < 0)
    fail(ErrKind::config, "config: strengths must be nonnegative (prototype_scale positive)");
  if (box_jitter_sigma < 0 || object_dropout_prob < 0 || object_dropout_prob >= 1)
    fail(ErrKind::config, "config: bad detector-noise knobs");
  if (nonsharp_blur_max < 0 || nonsharp_blur_max > 1)
    fail(ErrKind::config, "config: nonsharp_blur_max must lie in [0,1]");
}

SimConfig sim_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrKind::config, std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrKind::config, "config: top level must be an object");

  SimConfig c;
  std::set<std::string> known = {
      "task_name",       "num_actions",          "feature_dim",
      "frames_min",      "frames_max",           "max_objects",
      "descriptions_per_action", "train_videos", "val_videos",
      "test_videos",     "segments_per_video_min", "segments_per_video_max",
      "mistake_rates",   "feature_noise",        "prototype_scale",
      "effect_signature_norm", "state_render_strength", "relation_render_strength",
      "attribute_delta_norm",  "box_jitter_sigma", "object_dropout_prob",
      "nonsharp_blur_max"};
  for (auto& [key, _] : j.items())
    if (!known.count(key)) fail(ErrKind::config, "config: unknown key '" + key + "'");

  try {
    c.task_name = j.value("task_name", c.task_name);
    c.num_actions = j.value("num_actions", c.num_actions);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.frames_min = j.value("frames_min", c.frames_min);
    c.frames_max = j.value("frames_max", c.frames_max);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.descriptions_per_action = j.value("descriptions_per_action", c.descriptions_per_action);
    c.train_videos = j.value("train_videos", c.train_videos);
    c.val_videos = j.value("val_videos", c.val_videos);
    c.test_videos = j.value("test_videos", c.test_videos);
    c.segments_per_video_min = j.value("segments_per_video_min", c.segments_per_video_min);
    c.segments_per_video_max = j.value("segments_per_video_max", c.segments_per_video_max);
    if (j.count("mistake_rates")) {
      const json& r = j["mistake_rates"];
      for (auto& [key, _] : r.items())
        if (key != "execution" && key != "state" && key != "relation")
          fail(ErrKind::config, "config: unknown mistake_rates key '" + key + "'");
      c.mistake_rates.execution = r.value("execution", c.mistake_rates.execution);
      c.mistake_rates.state = r.value("state", c.mistake_rates.state);
      c.mistake_rates.relation = r.value("relation", c.mistake_rates.relation);
    }
    c.feature_noise = j.value("feature_noise", c.feature_noise);
    c.prototype_scale = j.value("prototype_scale", c.prototype_scale);
    c.effect_signature_norm = j.value("effect_signature_norm", c.effect_signature_norm);
    c.state_render_strength = j.value("state_render_strength", c.state_render_strength);
    c.relation_render_strength = j.value("relation_render_strength", c.relation_render_strength);
    c.attribute_delta_norm = j.value("attribute_delta_norm", c.attribute_delta_norm);
    c.box_jitter_sigma = j.value("box_jitter_sigma", c.box_jitter_sigma);
    c.object_dropout_prob = j.value("object_dropout_prob", c.object_dropout_prob);
    c.nonsharp_blur_max = j.value("nonsharp_blur_max", c.nonsharp_blur_max);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrKind::config, std::string("config: type error: ") + e.what());
  }
  c.validate();
  return c;
}

std::string sim_config_to_json_text(const SimConfig& c) {
  json j;
  j["task_name"] = c.task_name;
  j["num_actions"] = c.num_actions;
  j["feature_dim"] = c.feature_dim;
  j["frames_min"] = c.frames_min;
  j["frames_max"] = c.frames_max;
  j["max_objects"] = c.max_objects;
  j["descriptions_per_action"] = c.descriptions_per_action;
  j["train_videos"] = c.train_videos;
  j["val_videos"] = c.val_videos;
  j["test_videos"] = c.test_videos;
  j["segments_per_video_min"] = c.segments_per_video_min;
  j["segments_per_video_max"] = c.segments_per_video_max;
  j["mistake_rates"] = {{"execution", c.mistake_rates.execution},
                        {"state", c.mistake_rates.state},
                        {"relation", c.mistake_rates.relation}};
  j["feature_noise"] = c.feature_noise;
  j["prototype_scale"] = c.prototype_scale;
  j["effect_signature_norm"] = c.effect_signature_norm;
  j["state_render_strength"] = c.state_render_strength;
  j["relation_render_strength"] = c.relation_render_strength;
  j["attribute_delta_norm"] = c.attribute_delta_norm;
  j["box_jitter_sigma"] = c.box_jitter_sigma;
  j["object_dropout_prob"] = c.object_dropout_prob;
  j["nonsharp_blur_max"] = c.nonsharp_blur_max;
  return j.dump(2);
}

int TaskSpec::action_index(const std::string& label) const {
  for (size_t i = 0; i < actions.size(); ++i)
    if (actions[i].label == label) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

std::string derive_relation(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  bool inside = a[0] - a[2] / 2 >= b[0] - b[2] / 2 && a[0] + a[2] / 2 <= b[0] + b[2] / 2 &&
                a[1] - a[3] / 2 >= b[1] - b[3] / 2 && a[1] + a[3] / 2 <= b[1] + b[3] / 2;
  if (inside) return "inside";
  double dx = b[0] - a[0];
  double dy = b[1] - a[1];
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "left of" : "right of";
  return dy > 0 ? "above" : "below";
}

std::string invert_relation(const std::string& label) {
  if (label == "left of") return "right of";
  if (label == "right of") return "left of";
  if (label == "above") return "below";
  if (label == "below") return "above";
  fail(ErrKind::validation, "relation '" + label + "' has no spatial inverse");
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

namespace {
MatrixF box_blur(const MatrixF& p) {
  MatrixF out(kPatchSize, kPatchSize);
  for (int i = 0; i < kPatchSize; ++i)
    for (int j = 0; j < kPatchSize; ++j) {
      float sum = 0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          int r = std::clamp(i + di, 0, kPatchSize - 1);
          int c = std::clamp(j + dj, 0, kPatchSize - 1);
          sum += p(r, c);
        }
      out(i, j) = sum / 9.0f;
    }
  return out;
}
}  // namespace

MatrixF render_patch(double sharpness_level, Rng& rng) {
  MatrixF p(kPatchSize, kPatchSize);
  for (int i = 0; i < kPatchSize; ++i)
    for (int j = 0; j < kPatchSize; ++j) p(i, j) = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  int passes = static_cast<int>(std::floor((1.0 - sharpness_level) * 4.0));
  passes = std::clamp(passes, 0, 4);
  for (int k = 0; k < passes; ++k) p = box_blur(p);
  return p;
}

double laplacian_variance(const MatrixF& patch) {
  const int n = kPatchSize - 2;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j) {
      double v = static_cast<double>(patch(i - 1, j)) + patch(i + 1, j) + patch(i, j - 1) +
                 patch(i, j + 1) - 4.0 * patch(i, j);
      sum += v;
      sum_sq += v * v;
    }
  double count = static_cast<double>(n) * n;
  double mean = sum / count;
  return sum_sq / count - mean * mean;
}

// ---------------------------------------------------------------------------
// Task construction
// ---------------------------------------------------------------------------

TaskSpec build_task(const SimConfig& config, uint64_t seed) {
  Rng rng(derive_seed(seed, "task"));
  TaskSpec task;
  task.name = config.task_name.empty()
                  ? kTaskNames[rng.below(kTaskNames.size())]
                  : config.task_name;

  // Distinct verb-noun pairs.
  std::vector<std::pair<int, int>> pairs;
  for (size_t v = 0; v < kVerbs.size(); ++v)
    for (size_t n = 0; n < kNouns.size(); ++n) pairs.emplace_back(static_cast<int>(v),
                                                                  static_cast<int>(n));
  rng.shuffle(pairs);
  if (static_cast<size_t>(config.num_actions) > pairs.size())
    fail(ErrKind::config, "config: num_actions exceeds the label bank");

  for (int a = 0; a < config.num_actions; ++a) {
    TaskSpec::Action act;
    auto [vi, ni] = pairs[static_cast<size_t>(a)];
    act.label = kVerbs[static_cast<size_t>(vi)] + " " + kNouns[static_cast<size_t>(ni)];

    int n_obj = rng.uniform_int(2, config.max_objects);
    std::vector<int> noun_ids = {ni};
    while (static_cast<int>(noun_ids.size()) < n_obj) {
      int cand = static_cast<int>(rng.below(kNouns.size()));
      if (std::find(noun_ids.begin(), noun_ids.end(), cand) == noun_ids.end())
        noun_ids.push_back(cand);
    }
    for (int id : noun_ids) {
      TaskSpec::SceneObject obj;
      obj.label = kNouns[static_cast<size_t>(id)];
      auto& pair = kAttributePairs[rng.below(kAttributePairs.size())];
      obj.attribute_values = {pair.first, pair.second};
      obj.canonical_value = obj.attribute_values[rng.below(2)];
      act.objects.push_back(std::move(obj));
    }
    for (int r = 0; r + 1 < n_obj; ++r)
      act.relations.push_back(kDirectionalRelations[rng.below(kDirectionalRelations.size())]);

    int n = n_obj;
    for (int k = 0; k < config.descriptions_per_action; ++k) {
      int cycle = k / 3;
      std::string d;
      switch (k % 3) {
        case 0: {
          const auto& o = act.objects[static_cast<size_t>(cycle % n)];
          d = "after " + act.label + " the " + o.label + " is " + o.canonical_value;
          break;
        }
        case 1: {
          int j = cycle % (n - 1);
          d = "the " + act.objects[static_cast<size_t>(j)].label + " is " +
              act.relations[static_cast<size_t>(j)] + " the " +
              act.objects[static_cast<size_t>(j + 1)].label;
          break;
        }
        default: {
          const auto& o = act.objects[static_cast<size_t>((cycle + 1) % n)];
          d = "the " + o.label + " is " + o.canonical_value;
          break;
        }
      }
      act.descriptions.push_back(std::move(d));
    }
    task.actions.push_back(std::move(act));
  }
  return task;
}

std::vector<std::string> vocab_words(const TaskSpec& task) {
  std::vector<std::string> words;
  auto add_text = [&words](const std::string& text) {
    for (auto& t : text::tokenize(text)) words.push_back(t);
  };
  add_text(task.name);
  for (const auto& act : task.actions) {
    add_text(act.label);
    for (const auto& obj : act.objects) {
      add_text(obj.label);
      for (const auto& v : obj.attribute_values) add_text(v);
    }
    for (const auto& r : act.relations) add_text(r);
    for (const auto& d : act.descriptions) add_text(d);
  }
  for (const char* w : {"left", "right", "of", "above", "below", "inside", "the", "is", "after",
                        "an", "image", "showing", "for"})
    words.emplace_back(w);
  return words;
}

// ---------------------------------------------------------------------------
// TaskContext
// ---------------------------------------------------------------------------

TaskContext::TaskContext(const SimConfig& config, uint64_t seed, const TaskSpec& task,
                         const text::Vocab& vocab)
    : config_(config), seed_(seed), task_(task), vocab_(vocab) {
  const int C = static_cast<int>(task_.actions.size());
  const Eigen::Index D = config_.feature_dim;
  signatures_.resize(C, D);
  for (int a = 0; a < C; ++a) {
    Rng rng(derive_seed(seed_, "proto", static_cast<uint64_t>(a)));
    Matrix basis(4, D);
    for (int k = 0; k < 4; ++k) {
      RowVec dir = rng.gaussian_matrix(1, D, 1.0);
      basis.row(k) = dir / dir.norm();
    }
    proto_basis_.push_back(std::move(basis));
    Matrix phase(1, 3);
    for (int k = 0; k < 3; ++k) phase(0, k) = rng.uniform(0.0, 2.0 * M_PI);
    proto_phase_.push_back(std::move(phase));
    RowVec sig = rng.gaussian_matrix(1, D, 1.0);
    signatures_.row(a) = config_.effect_signature_norm * sig / sig.norm();
  }
}

RowVec TaskContext::trajectory(int action_index, double u) const {
  const Matrix& b = proto_basis_.at(static_cast<size_t>(action_index));
  const Matrix& ph = proto_phase_.at(static_cast<size_t>(action_index));
  RowVec out = b.row(0);
  for (int k = 0; k < 3; ++k)
    out += 0.5 * std::sin(M_PI * (k + 1) * u + ph(0, k)) * b.row(k + 1);
  return config_.prototype_scale * out;
}

RowVec TaskContext::effect_signature(int action_index) const {
  return signatures_.row(action_index);
}

RowVec TaskContext::state_render(const std::vector<std::string>& attribute_values) const {
  RowVec sum = RowVec::Zero(config_.feature_dim);
  for (const auto& v : attribute_values) sum += text::encode(vocab_, v);
  return config_.state_render_strength * sum / static_cast<double>(attribute_values.size());
}

RowVec TaskContext::relation_render(const std::vector<std::string>& relation_labels) const {
  RowVec sum = RowVec::Zero(config_.feature_dim);
  for (const auto& r : relation_labels) sum += text::encode(vocab_, r);
  return config_.relation_render_strength * sum / static_cast<double>(relation_labels.size());
}

// ---------------------------------------------------------------------------
// Segment generation
// ---------------------------------------------------------------------------

namespace {

// Boxes realizing the action's canonical relation chain; retries until the
// geometric derivation reproduces the canonical labels.
std::vector<Eigen::Vector4d> layout_boxes(const TaskSpec::Action& act, Rng& rng) {
  const int n = static_cast<int>(act.objects.size());
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<Eigen::Vector2d> rel(static_cast<size_t>(n));
    rel[0] = {0.0, 0.0};
    bool ok = true;
    for (int i = 0; i + 1 < n; ++i) {
      double gap = rng.uniform(kBoxGapMin, kBoxGapMax);
      double perp = rng.uniform(-kBoxPerpJitter, kBoxPerpJitter);
      const std::string& r = act.relations[static_cast<size_t>(i)];
      Eigen::Vector2d d;
      if (r == "left of") d = {gap, perp};
      else if (r == "right of") d = {-gap, perp};
      else if (r == "above") d = {perp, gap};
      else if (r == "below") d = {perp, -gap};
      else { ok = false; break; }
      rel[static_cast<size_t>(i + 1)] = rel[static_cast<size_t>(i)] + d;
    }
    if (!ok) fail(ErrKind::config, "layout: non-directional canonical relation");

    double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
    for (const auto& p : rel) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
    const double lo = 0.10, hi = 0.90;
    if (hi - max_x < lo - min_x || hi - max_y < lo - min_y) continue;
    double sx = rng.uniform(lo - min_x, hi - max_x);
    double sy = rng.uniform(lo - min_y, hi - max_y);

    std::vector<Eigen::Vector4d> boxes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      double w = rng.uniform(kBoxSizeMin, kBoxSizeMax);
      double h = rng.uniform(kBoxSizeMin, kBoxSizeMax);
      boxes[static_cast<size_t>(i)] = {sx + rel[static_cast<size_t>(i)].x(),
                                       sy + rel[static_cast<size_t>(i)].y(), w, h};
    }
    bool consistent = true;
    for (int i = 0; i + 1 < n && consistent; ++i)
      consistent = derive_relation(boxes[static_cast<size_t>(i)],
                                   boxes[static_cast<size_t>(i + 1)]) ==
                   act.relations[static_cast<size_t>(i)];
    if (consistent) return boxes;
  }
  fail(ErrKind::config, "layout: could not realize canonical relations");
}

knowledge::SceneGraphRecord make_graph_record(const std::string& segment_id,
                                              const TaskSpec::Action& act,
                                              const std::vector<std::string>& values) {
  knowledge::SceneGraphRecord rec;
  rec.segment_id = segment_id;
  const int n = static_cast<int>(act.objects.size());
  for (int i = 0; i < n; ++i)
    rec.nodes.push_back({i, knowledge::NodeKind::object, act.objects[static_cast<size_t>(i)].label});
  for (int i = 0; i < n; ++i) {
    rec.nodes.push_back({n + i, knowledge::NodeKind::attribute, values[static_cast<size_t>(i)]});
    rec.edges.emplace_back(i, n + i);
  }
  for (int i = 0; i + 1 < n; ++i) {
    int rid = 2 * n + i;
    rec.nodes.push_back({rid, knowledge::NodeKind::relation,
                         act.relations[static_cast<size_t>(i)]});
    rec.edges.emplace_back(i, rid);
    rec.edges.emplace_back(rid, i + 1);
  }
  return rec;
}

}  // namespace

Segment generate_normal_segment(const TaskContext& ctx, const std::string& video_id,
                                const std::string& split, int segment_index, int action_index,
                                int t_start, Rng& rng) {
  const SimConfig& cfg = ctx.config();
  const TaskSpec::Action& act = ctx.task().actions.at(static_cast<size_t>(action_index));
  const Eigen::Index D = cfg.feature_dim;

  Segment seg;
  seg.video_id = video_id;
  seg.split = split;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_s%02d", segment_index);
  seg.id = video_id + buf;
  seg.action = act.label;
  seg.action_index = action_index;
  seg.t_start = t_start;
  int T = rng.uniform_int(cfg.frames_min, cfg.frames_max);
  seg.t_end = t_start + T;
  seg.gt_effect_index = rng.uniform_int(0, T - 1);

  std::vector<Eigen::Vector4d> boxes = layout_boxes(act, rng);
  std::vector<std::string> values;
  for (const auto& o : act.objects) values.push_back(o.canonical_value);

  // Frame features: per-action trajectory + noise, with the scene rendered
  // additively into the effect frame.
  seg.frames.resize(T, D);
  for (int t = 0; t < T; ++t) {
    double u = (t + 0.5) / static_cast<double>(T);
    RowVec row = ctx.trajectory(action_index, u);
    for (Eigen::Index c = 0; c < D; ++c) row(c) += cfg.feature_noise * rng.normal();
    if (t == seg.gt_effect_index) {
      row += ctx.effect_signature(action_index);
      row += ctx.state_render(values);
      if (!act.relations.empty()) row += ctx.relation_render(act.relations);
    }
    for (Eigen::Index c = 0; c < D; ++c) seg.frames(t, c) = static_cast<float>(row(c));
  }

  seg.patches.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    double s = t == seg.gt_effect_index ? 1.0 : rng.uniform(0.0, cfg.nonsharp_blur_max);
    seg.patches.push_back(render_patch(s, rng));
  }

  // Object observations (the detector-stub view of the effect region).
  for (size_t i = 0; i < act.objects.size(); ++i) {
    ObjectObs obs;
    obs.label = act.objects[i].label;
    obs.box = boxes[i];
    if (cfg.box_jitter_sigma > 0)
      for (int c = 0; c < 4; ++c)
        obs.box[c] = std::clamp(obs.box[c] + cfg.box_jitter_sigma * rng.normal(), 0.0, 1.0);
    RowVec crop = text::encode(ctx.vocab(), obs.label) +
                  kCropValueCoef * text::encode(ctx.vocab(), values[i]);
    for (Eigen::Index c = 0; c < D; ++c) crop(c) += kCropNoise * rng.normal();
    obs.crop = f32q_row(crop);
    seg.objects.push_back(std::move(obs));
  }
  if (cfg.object_dropout_prob > 0) {
    std::vector<ObjectObs> kept;
    for (auto& o : seg.objects) {
      if (static_cast<int>(kept.size()) + 1 == static_cast<int>(seg.objects.size()) &&
          kept.empty()) {
        kept.push_back(std::move(o));  // never drop the last one
      } else if (!rng.bernoulli(cfg.object_dropout_prob)) {
        kept.push_back(std::move(o));
      }
    }
    seg.objects = std::move(kept);
  }

  seg.graph = make_graph_record(seg.id, act, values);
  return seg;
}

void inject_mistake(Segment& seg, MistakeKind kind, Rng& rng, const TaskContext& ctx) {
  if (seg.y != 0) fail(ErrKind::validation, "inject_mistake: segment already has a mistake");
  if (kind == MistakeKind::none) fail(ErrKind::validation, "inject_mistake: kind must not be none");
  const SimConfig& cfg = ctx.config();
  const TaskSpec::Action& act = ctx.task().actions.at(static_cast<size_t>(seg.action_index));
  const int n = static_cast<int>(act.objects.size());
  const Eigen::Index D = cfg.feature_dim;
  const int T = seg.frame_count();

  switch (kind) {
    case MistakeKind::execution: {
      // The motion follows a different action; the rendered effect stays.
      int other = static_cast<int>(rng.below(static_cast<uint64_t>(
          static_cast<int>(ctx.task().actions.size()) - 1)));
      if (other >= seg.action_index) ++other;
      for (int t = 0; t < T; ++t) {
        if (t == seg.gt_effect_index) continue;
        double u = (t + 0.5) / static_cast<double>(T);
        RowVec row = ctx.trajectory(other, u);
        for (Eigen::Index c = 0; c < D; ++c) row(c) += cfg.feature_noise * rng.normal();
        for (Eigen::Index c = 0; c < D; ++c) seg.frames(t, c) = static_cast<float>(row(c));
      }
      break;
    }
    case MistakeKind::state: {
      int oi = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
      const auto& obj = act.objects[static_cast<size_t>(oi)];
      if (obj.attribute_values.size() < 2)
        fail(ErrKind::validation,
             "inject_mistake: object '" + obj.label + "' has a single attribute value");
      // Current value sits on the attribute node (ids n..2n-1).
      std::string old_value = seg.graph.nodes.at(static_cast<size_t>(n + oi)).label;
      std::vector<std::string> alternatives;
      for (const auto& v : obj.attribute_values)
        if (v != old_value) alternatives.push_back(v);
      const std::string& new_value = alternatives[rng.below(alternatives.size())];
      seg.graph.nodes.at(static_cast<size_t>(n + oi)).label = new_value;

      RowVec delta = text::encode(ctx.vocab(), new_value) - text::encode(ctx.vocab(), old_value);
      delta = cfg.attribute_delta_norm * delta / delta.norm();
      for (auto& obs : seg.objects)
        if (obs.label == obj.label) {
          obs.crop = f32q_row(RowVec(obs.crop + delta));
          break;
        }
      // Re-render the effect frame's state component (linear in the mean).
      RowVec render_delta = cfg.state_render_strength / static_cast<double>(n) *
                            (text::encode(ctx.vocab(), new_value) -
                             text::encode(ctx.vocab(), old_value));
      for (Eigen::Index c = 0; c < D; ++c)
        seg.frames(seg.gt_effect_index, c) =
            static_cast<float>(f32q(seg.frames(seg.gt_effect_index, c) + render_delta(c)));
      break;
    }
    case MistakeKind::relation: {
      if (act.relations.empty())
        fail(ErrKind::validation, "inject_mistake: action has no relations");
      int ri = static_cast<int>(rng.below(act.relations.size()));
      int rel_node = 2 * n + ri;
      std::string old_label = seg.graph.nodes.at(static_cast<size_t>(rel_node)).label;
      std::string new_label = invert_relation(old_label);
      seg.graph.nodes.at(static_cast<size_t>(rel_node)).label = new_label;

      const std::string& la = act.objects[static_cast<size_t>(ri)].label;
      const std::string& lb = act.objects[static_cast<size_t>(ri + 1)].label;
      ObjectObs* oa = nullptr;
      ObjectObs* ob = nullptr;
      for (auto& obs : seg.objects) {
        if (!oa && obs.label == la) oa = &obs;
        else if (!ob && obs.label == lb) ob = &obs;
      }
      if (oa && ob) std::swap(oa->box, ob->box);

      int n_rel = static_cast<int>(act.relations.size());
      RowVec render_delta = cfg.relation_render_strength / static_cast<double>(n_rel) *
                            (text::encode(ctx.vocab(), new_label) -
                             text::encode(ctx.vocab(), old_label));
      for (Eigen::Index c = 0; c < D; ++c)
        seg.frames(seg.gt_effect_index, c) =
            static_cast<float>(f32q(seg.frames(seg.gt_effect_index, c) + render_delta(c)));
      break;
    }
    case MistakeKind::none: break;
  }
  seg.y = 1;
  seg.kind = kind;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

uint64_t Dataset::hash() const {
  return splitmix64(fnv1a(sim_config_to_json_text(config)) ^ splitmix64(seed));
}

std::vector<const Segment*> Dataset::split(const std::string& name) const {
  std::vector<const Segment*> out;
  for (const auto& s : segments)
    if (s.split == name) out.push_back(&s);
  return out;
}

Matrix Dataset::description_embeddings(int action_index) const {
  const auto& descs = task.actions.at(static_cast<size_t>(action_index)).descriptions;
  Matrix m(static_cast<Eigen::Index>(descs.size()), config.feature_dim);
  for (size_t k = 0; k < descs.size(); ++k)
    m.row(static_cast<Eigen::Index>(k)) = text::encode(vocab, descs[k]);
  return m;
}

Dataset generate_dataset(const SimConfig& config, uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  ds.task = build_task(config, seed);
  ds.vocab = text::build_vocab(vocab_words(ds.task), config.feature_dim,
                               derive_seed(seed, "vocab"));
  TaskContext ctx(ds.config, ds.seed, ds.task, ds.vocab);

  const int C = config.num_actions;
  const double p_exec = config.mistake_rates.execution;
  const double p_state = p_exec + config.mistake_rates.state;
  const double p_rel = p_state + config.mistake_rates.relation;

  auto make_videos = [&](const std::string& split, int count) {
    for (int v = 0; v < count; ++v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%03d", split.c_str(), v);
      std::string video_id = buf;
      Rng rng(derive_seed(seed, "video:" + video_id));
      int n_seg = rng.uniform_int(config.segments_per_video_min, config.segments_per_video_max);
      int offset = static_cast<int>(rng.below(static_cast<uint64_t>(C)));
      int cursor = 0;
      for (int s = 0; s < n_seg; ++s) {
        int action = (offset + s) % C;
        Segment seg = generate_normal_segment(ctx, video_id, split, s, action, cursor, rng);
        cursor = seg.t_end;
        if (split == "test") {
          double u = rng.uniform();
          if (u < p_exec) inject_mistake(seg, MistakeKind::execution, rng, ctx);
          else if (u < p_state) inject_mistake(seg, MistakeKind::state, rng, ctx);
          else if (u < p_rel) inject_mistake(seg, MistakeKind::relation, rng, ctx);
        }
        ds.segments.push_back(std::move(seg));
      }
    }
  };
  make_videos("train", config.train_videos);
  make_videos("val", config.val_videos);
  make_videos("test", config.test_videos);

  validate_dataset(ds);
  return ds;
}

void validate_dataset(const Dataset& ds) {
  ds.config.validate();
  for (Eigen::Index r = 0; r < ds.vocab.table.rows(); ++r)
    if (std::abs(ds.vocab.table.row(r).norm() - 1.0) > 1e-9)
      fail(ErrKind::validation, "dataset: vocab row " + std::to_string(r) + " is not unit");

  for (const auto& seg : ds.segments) {
    if (seg.split != "train" && seg.split != "val" && seg.split != "test")
      fail(ErrKind::validation, "dataset: segment " + seg.id + " has unknown split");
    if ((seg.split == "train" || seg.split == "val") && seg.y != 0)
      fail(ErrKind::occ, "dataset: segment " + seg.id + " violates OCC (y=1 in " + seg.split + ")");
    int T = seg.frame_count();
    if (T < 1) fail(ErrKind::validation, "dataset: segment " + seg.id + " has no frames");
    if (seg.gt_effect_index < 0 || seg.gt_effect_index >= T)
      fail(ErrKind::validation, "dataset: segment " + seg.id + " effect index out of range");
    if (seg.frames.rows() != T || seg.frames.cols() != ds.config.feature_dim)
      fail(ErrKind::validation, "dataset: segment " + seg.id + " frame matrix shape mismatch");
    if (static_cast<int>(seg.patches.size()) != T)
      fail(ErrKind::validation, "dataset: segment " + seg.id + " patch count mismatch");
    if (!seg.frames.allFinite())
      fail(ErrKind::validation, "dataset: segment " + seg.id + " has non-finite features");
    if ((seg.y == 0) != (seg.kind == MistakeKind::none))
      fail(ErrKind::validation, "dataset: segment " + seg.id + " label/kind inconsistent");
    int a = ds.task.action_index(seg.action);
    if (a < 0 || a != seg.action_index)
      fail(ErrKind::validation, "dataset: segment " + seg.id + " has unknown action");
    const auto& act = ds.task.actions[static_cast<size_t>(a)];
    for (const auto& obs : seg.objects) {
      bool known = false;
      for (const auto& o : act.objects) known = known || o.label == obs.label;
      if (!known)
        fail(ErrKind::validation,
             "dataset: segment " + seg.id + " observes unknown object '" + obs.label + "'");
      for (int c = 0; c < 4; ++c)
        if (obs.box[c] < 0.0 || obs.box[c] > 1.0)
          fail(ErrKind::validation, "dataset: segment " + seg.id + " box outside unit square");
      if (obs.crop.size() != ds.config.feature_dim)
        fail(ErrKind::validation, "dataset: segment " + seg.id + " crop dimension mismatch");
    }
    knowledge::build_scene_graph(seg.graph, ds.vocab);  // taxonomy + connectivity
  }
}

}  // namespace aem::sim

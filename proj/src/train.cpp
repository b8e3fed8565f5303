#include "aem/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "aem/effect.hpp"
#include "aem/rng.hpp"

namespace aem::train {

using nlohmann::json;
using num::Tape;
using num::Value;

std::string to_string(SamplerVariant v) {
  return v == SamplerVariant::ranked ? "ranked" : "last_frame";
}

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrKind::config, "train config: epochs must be >= 1");
  if (batch_size < 1) fail(ErrKind::config, "train config: batch_size must be >= 1");
  if (learning_rate <= 0) fail(ErrKind::config, "train config: learning_rate must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0)
    fail(ErrKind::config, "train config: bad optimizer moments");
  if (rho <= 0) fail(ErrKind::config, "train config: rho must be positive");
  if (effect_dim < 1) fail(ErrKind::config, "train config: effect_dim must be positive");
  if (!losses.det) fail(ErrKind::config, "train config: the detection loss must stay enabled");
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrKind::config, std::string("train config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrKind::config, "train config: top level must be an object");

  static const std::set<std::string> known = {
      "epochs",     "batch_size", "learning_rate", "beta1",
      "beta2",      "adam_eps",   "seed",          "rho",
      "effect_dim", "losses",     "weights",       "sampler",
      "token",      "freeze",     "debug_nan_at_step"};
  for (auto& [key, _] : j.items())
    if (!known.count(key)) fail(ErrKind::config, "train config: unknown key '" + key + "'");

  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.rho = j.value("rho", c.rho);
    c.effect_dim = j.value("effect_dim", c.effect_dim);
    if (j.count("losses")) {
      const json& l = j["losses"];
      static const std::set<std::string> lkeys = {"eff_s_visual", "eff_s_textual",
                                                  "eff_r_visual", "eff_r_textual",
                                                  "cl_s",         "cl_r",
                                                  "det"};
      for (auto& [key, _] : l.items())
        if (!lkeys.count(key)) fail(ErrKind::config, "train config: unknown loss switch '" + key + "'");
      c.losses.eff_s_visual = l.value("eff_s_visual", c.losses.eff_s_visual);
      c.losses.eff_s_textual = l.value("eff_s_textual", c.losses.eff_s_textual);
      c.losses.eff_r_visual = l.value("eff_r_visual", c.losses.eff_r_visual);
      c.losses.eff_r_textual = l.value("eff_r_textual", c.losses.eff_r_textual);
      c.losses.cl_s = l.value("cl_s", c.losses.cl_s);
      c.losses.cl_r = l.value("cl_r", c.losses.cl_r);
      c.losses.det = l.value("det", c.losses.det);
    }
    if (j.count("weights")) {
      const json& w = j["weights"];
      static const std::set<std::string> wkeys = {"eff_s", "eff_r", "cl_s", "cl_r", "det"};
      for (auto& [key, _] : w.items())
        if (!wkeys.count(key)) fail(ErrKind::config, "train config: unknown weight '" + key + "'");
      c.weights.eff_s = w.value("eff_s", c.weights.eff_s);
      c.weights.eff_r = w.value("eff_r", c.weights.eff_r);
      c.weights.cl_s = w.value("cl_s", c.weights.cl_s);
      c.weights.cl_r = w.value("cl_r", c.weights.cl_r);
      c.weights.det = w.value("det", c.weights.det);
    }
    if (j.count("sampler")) {
      std::string s = j["sampler"].get<std::string>();
      if (s == "ranked") c.sampler = SamplerVariant::ranked;
      else if (s == "last_frame") c.sampler = SamplerVariant::last_frame;
      else fail(ErrKind::config, "train config: unknown sampler '" + s + "'");
    }
    if (j.count("token")) {
      std::string s = j["token"].get<std::string>();
      if (s == "shared") c.per_action_token = false;
      else if (s == "per_action") c.per_action_token = true;
      else fail(ErrKind::config, "train config: unknown token variant '" + s + "'");
    }
    if (j.count("freeze")) {
      const json& f = j["freeze"];
      static const std::set<std::string> fkeys = {"supervision_in_alignment",
                                                  "fusion_effect_blocks"};
      for (auto& [key, _] : f.items())
        if (!fkeys.count(key)) fail(ErrKind::config, "train config: unknown freeze flag '" + key + "'");
      c.freeze_supervision_in_alignment =
          f.value("supervision_in_alignment", c.freeze_supervision_in_alignment);
      c.freeze_fusion_effect_blocks =
          f.value("fusion_effect_blocks", c.freeze_fusion_effect_blocks);
    }
    c.debug_nan_at_step = j.value("debug_nan_at_step", c.debug_nan_at_step);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrKind::config, std::string("train config: type error: ") + e.what());
  }
  c.validate();
  return c;
}

std::string train_config_to_json_text(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["seed"] = c.seed;
  j["rho"] = c.rho;
  j["effect_dim"] = c.effect_dim;
  j["losses"] = {{"eff_s_visual", c.losses.eff_s_visual},
                 {"eff_s_textual", c.losses.eff_s_textual},
                 {"eff_r_visual", c.losses.eff_r_visual},
                 {"eff_r_textual", c.losses.eff_r_textual},
                 {"cl_s", c.losses.cl_s},
                 {"cl_r", c.losses.cl_r},
                 {"det", c.losses.det}};
  j["weights"] = {{"eff_s", c.weights.eff_s},
                  {"eff_r", c.weights.eff_r},
                  {"cl_s", c.weights.cl_s},
                  {"cl_r", c.weights.cl_r},
                  {"det", c.weights.det}};
  j["sampler"] = to_string(c.sampler);
  j["token"] = c.per_action_token ? "per_action" : "shared";
  j["freeze"] = {{"supervision_in_alignment", c.freeze_supervision_in_alignment},
                 {"fusion_effect_blocks", c.freeze_fusion_effect_blocks}};
  j["debug_nan_at_step"] = c.debug_nan_at_step;
  return j.dump(2);
}

uint64_t train_config_hash(const TrainConfig& cfg) {
  return fnv1a(train_config_to_json_text(cfg));
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"full",       "no_effect",    "last_frame",
                                                 "no_align",   "state_only",   "relation_only",
                                                 "visual_only", "textual_only"};
  return names;
}

TrainConfig make_variant(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  c.losses = LossSwitches{};  // everything on
  c.sampler = SamplerVariant::ranked;
  c.freeze_fusion_effect_blocks = false;
  if (name == "full") {
  } else if (name == "no_effect") {
    c.losses.eff_s_visual = c.losses.eff_s_textual = false;
    c.losses.eff_r_visual = c.losses.eff_r_textual = false;
    c.losses.cl_s = c.losses.cl_r = false;
    c.freeze_fusion_effect_blocks = true;
  } else if (name == "last_frame") {
    c.sampler = SamplerVariant::last_frame;
  } else if (name == "no_align") {
    c.losses.cl_s = c.losses.cl_r = false;
  } else if (name == "state_only") {
    c.losses.eff_r_visual = c.losses.eff_r_textual = false;
    c.losses.cl_r = false;
  } else if (name == "relation_only") {
    c.losses.eff_s_visual = c.losses.eff_s_textual = false;
    c.losses.cl_s = false;
  } else if (name == "visual_only") {
    c.losses.eff_s_textual = c.losses.eff_r_textual = false;
    c.losses.cl_s = c.losses.cl_r = false;
  } else if (name == "textual_only") {
    c.losses.eff_s_visual = c.losses.eff_r_visual = false;
    c.losses.cl_s = c.losses.cl_r = false;
  } else {
    fail(ErrKind::config, "unknown ablation variant '" + name + "'");
  }
  return c;
}

TrainSample prepare_sample(const sim::Dataset& ds, const sim::Segment& seg,
                           SamplerVariant sampler) {
  TrainSample s;
  s.seg = &seg;
  s.frame_idx = sampler == SamplerVariant::last_frame
                    ? sampling::last_frame_baseline(seg)
                    : sampling::select_effect_frame(ds, seg).selected;
  s.frame_emb = seg.frames.row(s.frame_idx).cast<double>();
  for (const auto& obs : seg.objects) {
    s.crops.push_back(obs.crop);
    s.boxes.push_back(obs.box);
  }
  s.graph = knowledge::build_scene_graph(seg.graph, ds.vocab);
  s.subgraphs = knowledge::decompose(s.graph);
  return s;
}

BatchTargets precompute_alignment_targets(const ParamStore& params, const model::ModelDims& dims,
                                          const std::vector<const TrainSample*>& batch,
                                          const TrainConfig& cfg) {
  BatchTargets out;
  const LossSwitches& sw = cfg.losses;
  const bool frozen_textual = cfg.freeze_supervision_in_alignment;
  if (!(sw.eff_s() || sw.eff_r())) return out;

  Tape t;  // value-only scratch tape
  ParamMap p = bind_const(t, params);
  for (const TrainSample* s : batch) {
    if (sw.eff_s_visual)
      out.v_s.push_back(t.value(
          knowledge::visual_state_feature(t, p, s->frame_emb, s->crops, dims.max_objects)));
    if (sw.eff_r_visual)
      out.v_r.push_back(t.value(
          knowledge::visual_relation_feature(t, p, s->frame_emb, s->boxes, dims.max_objects)));
    if (frozen_textual && (sw.eff_s_textual || sw.eff_r_textual)) {
      Value node_feats = knowledge::gat_encode(t, p, s->graph, dims.gat_layers);
      if (sw.eff_s_textual)
        out.t_s.push_back(t.value(
            knowledge::pool_subgraph(t, p, "pool_s", node_feats, s->subgraphs.state_nodes)));
      if (sw.eff_r_textual)
        out.t_r.push_back(t.value(
            knowledge::pool_subgraph(t, p, "pool_r", node_feats, s->subgraphs.relation_nodes)));
    }
  }
  return out;
}

Value build_total_loss(Tape& t, const ParamMap& p, const model::ModelDims& dims,
                       const std::vector<const TrainSample*>& batch, const TrainConfig& cfg,
                       const detect::PromptBank& bank, const BatchTargets& targets,
                       LossBreakdown* breakdown) {
  if (batch.empty()) fail(ErrKind::config, "total_loss: empty batch");
  for (const TrainSample* s : batch)
    if (s->seg->y != 0)
      fail(ErrKind::occ, "total_loss: training batch contains a mistake segment (" +
                             s->seg->id + ")");

  const LossSwitches& sw = cfg.losses;
  const double B = static_cast<double>(batch.size());
  const bool frozen_textual = cfg.freeze_supervision_in_alignment;
  const bool need_vs = sw.cl_s;
  const bool need_vr = sw.cl_r;
  const bool need_ts = (sw.eff_s_textual && !frozen_textual) || sw.cl_s;
  const bool need_tr = (sw.eff_r_textual && !frozen_textual) || sw.cl_r;
  if (sw.eff_s_visual && targets.v_s.size() != batch.size())
    fail(ErrKind::shape, "total_loss: missing precomputed v_s targets");
  if (sw.eff_r_visual && targets.v_r.size() != batch.size())
    fail(ErrKind::shape, "total_loss: missing precomputed v_r targets");

  std::vector<Value> vs_rows, vr_rows, ts_rows, tr_rows, xa_rows;
  std::vector<int> action_ids;
  Value eff_s_sum, eff_r_sum;

  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const TrainSample* s = batch[bi];
    const sim::Segment& seg = *s->seg;
    Matrix frames = seg.frames.cast<double>();
    auto enc = effect::encode_with_token(t, p, dims, frames, seg.action_index);
    Value proj_s = effect::project_state(t, p, enc.token);
    Value proj_r = effect::project_relation(t, p, enc.token);

    Value v_s, v_r, t_s, t_r;
    if (need_vs)
      v_s = knowledge::visual_state_feature(t, p, s->frame_emb, s->crops, dims.max_objects);
    if (need_vr)
      v_r = knowledge::visual_relation_feature(t, p, s->frame_emb, s->boxes, dims.max_objects);
    if (need_ts || need_tr) {
      Value node_feats = knowledge::gat_encode(t, p, s->graph, dims.gat_layers);
      if (need_ts)
        t_s = knowledge::pool_subgraph(t, p, "pool_s", node_feats, s->subgraphs.state_nodes);
      if (need_tr)
        t_r = knowledge::pool_subgraph(t, p, "pool_r", node_feats, s->subgraphs.relation_nodes);
    }

    auto textual_target_s = [&]() {
      return frozen_textual ? t.constant(targets.t_s.at(bi)) : t_s;
    };
    auto textual_target_r = [&]() {
      return frozen_textual ? t.constant(targets.t_r.at(bi)) : t_r;
    };
    if (sw.eff_s()) {
      Value term;
      if (sw.eff_s_visual)
        term = effect::alignment_term(t, proj_s, t.constant(targets.v_s[bi]));
      if (sw.eff_s_textual) {
        Value tt = effect::alignment_term(t, proj_s, textual_target_s());
        term = term.valid() ? add(t, term, tt) : tt;
      }
      eff_s_sum = eff_s_sum.valid() ? add(t, eff_s_sum, term) : term;
    }
    if (sw.eff_r()) {
      Value term;
      if (sw.eff_r_visual)
        term = effect::alignment_term(t, proj_r, t.constant(targets.v_r[bi]));
      if (sw.eff_r_textual) {
        Value tt = effect::alignment_term(t, proj_r, textual_target_r());
        term = term.valid() ? add(t, term, tt) : tt;
      }
      eff_r_sum = eff_r_sum.valid() ? add(t, eff_r_sum, term) : term;
    }

    if (sw.cl_s) {
      vs_rows.push_back(v_s);
      ts_rows.push_back(t_s);
    }
    if (sw.cl_r) {
      vr_rows.push_back(v_r);
      tr_rows.push_back(t_r);
    }
    if (sw.det) {
      Value fused = effect::fuse_with(t, p, t.constant(frames), proj_s, proj_r);
      xa_rows.push_back(detect::action_embedding(t, fused));
      action_ids.push_back(seg.action_index);
    }
  }

  std::vector<Value> weighted;
  LossBreakdown bd;
  auto contribute = [&](Value v, double weight, double* slot) {
    Value w = scale(t, v, weight);
    *slot = t.value(w)(0, 0);
    weighted.push_back(w);
  };
  if (eff_s_sum.valid()) contribute(scale(t, eff_s_sum, 1.0 / B), cfg.weights.eff_s, &bd.eff_s);
  if (eff_r_sum.valid()) contribute(scale(t, eff_r_sum, 1.0 / B), cfg.weights.eff_r, &bd.eff_r);
  if (sw.cl_s)
    contribute(effect::info_nce(t, concat_rows(t, vs_rows), concat_rows(t, ts_rows), cfg.rho),
               cfg.weights.cl_s, &bd.cl_s);
  if (sw.cl_r)
    contribute(effect::info_nce(t, concat_rows(t, vr_rows), concat_rows(t, tr_rows), cfg.rho),
               cfg.weights.cl_r, &bd.cl_r);
  if (sw.det) {
    Value prompts = detect::prompt_embeddings(t, p, bank);
    contribute(detect::detection_loss(t, concat_rows(t, xa_rows), prompts, action_ids, cfg.rho),
               cfg.weights.det, &bd.det);
  }

  Value total = weighted.front();
  for (size_t i = 1; i < weighted.size(); ++i) total = add(t, total, weighted[i]);
  bd.total = t.value(total)(0, 0);
  if (breakdown) *breakdown = bd;
  return total;
}

namespace {

struct Adam {
  double lr, beta1, beta2, eps;

  void step(model::ModelState& m, Tape& tape, const ParamMap& bound) {
    m.step += 1;
    double t = static_cast<double>(m.step);
    double bias1 = 1.0 - std::pow(beta1, t);
    double bias2 = 1.0 - std::pow(beta2, t);
    for (auto& e : m.params.entries()) {
      if (e.frozen) continue;
      Matrix g = tape.grad(bound.at(e.name));
      Matrix& mm = m.adam_m[e.name];
      Matrix& vv = m.adam_v[e.name];
      if (mm.size() == 0) mm = Matrix::Zero(g.rows(), g.cols());
      if (vv.size() == 0) vv = Matrix::Zero(g.rows(), g.cols());
      mm = beta1 * mm + (1.0 - beta1) * g;
      vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
      Matrix mhat = mm / bias1;
      Matrix vhat = vv / bias2;
      e.value -= lr * mhat.cwiseQuotient((vhat.array().sqrt() + eps).matrix());
    }
  }
};

double evaluate_mean_total(const model::ModelState& m, const std::vector<TrainSample>& samples,
                           const TrainConfig& cfg, const detect::PromptBank& bank) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  size_t count = 0;
  for (size_t start = 0; start < samples.size(); start += cfg.batch_size) {
    std::vector<const TrainSample*> batch;
    for (size_t i = start; i < std::min(samples.size(), start + cfg.batch_size); ++i)
      batch.push_back(&samples[i]);
    BatchTargets targets = precompute_alignment_targets(m.params, m.dims, batch, cfg);
    Tape t;
    ParamMap p = bind_const(t, m.params);
    LossBreakdown bd;
    build_total_loss(t, p, m.dims, batch, cfg, bank, targets, &bd);
    sum += bd.total * static_cast<double>(batch.size());
    count += batch.size();
  }
  return sum / static_cast<double>(count);
}

}  // namespace

TrainResult train(const sim::Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  sim::validate_dataset(ds);

  model::ModelDims dims;
  dims.feature_dim = ds.config.feature_dim;
  dims.effect_dim = cfg.effect_dim;
  dims.max_objects = ds.config.max_objects;
  dims.num_actions = static_cast<int>(ds.task.actions.size());
  dims.per_action_token = cfg.per_action_token;

  TrainResult result;
  result.final_model = model::init_model(dims, ds, cfg.seed, cfg.freeze_fusion_effect_blocks);
  model::ModelState& m = result.final_model;
  m.train_config_json = train_config_to_json_text(cfg);
  m.config_hash = train_config_hash(cfg);

  std::vector<TrainSample> train_samples, val_samples;
  for (const sim::Segment* seg : ds.split("train"))
    train_samples.push_back(prepare_sample(ds, *seg, cfg.sampler));
  for (const sim::Segment* seg : ds.split("val"))
    val_samples.push_back(prepare_sample(ds, *seg, cfg.sampler));
  if (train_samples.empty()) fail(ErrKind::config, "train: empty training split");

  detect::PromptBank bank = detect::build_prompt_bank(m);
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<size_t> order(train_samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  model::ModelState snapshot = m;  // last finite state
  int64_t global_step = 0;
  Adam adam{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    LossBreakdown epoch_sum;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const TrainSample*> batch;
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&train_samples[order[i]]);

      BatchTargets targets = precompute_alignment_targets(m.params, m.dims, batch, cfg);
      Tape t;
      ParamMap p = bind(t, m.params);
      LossBreakdown bd;
      Value loss = build_total_loss(t, p, m.dims, batch, cfg, bank, targets, &bd);
      double loss_value = t.value(loss)(0, 0);
      if (global_step == cfg.debug_nan_at_step)
        loss_value = std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(loss_value)) {
        result.final_model = snapshot;
        result.aborted_nan = true;
        if (result.best_epoch < 0) result.best_model = snapshot;
        return result;
      }
      snapshot = m;
      t.backward(loss);
      adam.step(m, t, p);
      // The prompt cache follows the prefix.
      bank = detect::build_prompt_bank(m);
      ++global_step;

      epoch_sum.eff_s += bd.eff_s;
      epoch_sum.eff_r += bd.eff_r;
      epoch_sum.cl_s += bd.cl_s;
      epoch_sum.cl_r += bd.cl_r;
      epoch_sum.det += bd.det;
      epoch_sum.total += bd.total;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double nb = static_cast<double>(batches);
    rec.train_mean = {epoch_sum.eff_s / nb, epoch_sum.eff_r / nb, epoch_sum.cl_s / nb,
                      epoch_sum.cl_r / nb,  epoch_sum.det / nb,  epoch_sum.total / nb};
    rec.val_total = evaluate_mean_total(m, val_samples, cfg, bank);
    result.log.push_back(rec);

    double val_criterion = val_samples.empty() ? rec.train_mean.total : rec.val_total;
    if (val_criterion < best_val) {
      best_val = val_criterion;
      result.best_model = m;
      result.best_epoch = epoch;
    }
  }
  if (result.best_epoch < 0) {
    result.best_model = m;
    result.best_epoch = cfg.epochs - 1;
  }
  return result;
}

}  // namespace aem::train

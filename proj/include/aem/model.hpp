#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aem/params.hpp"
#include "aem/sim.hpp"
#include "aem/text.hpp"

namespace aem::model {

struct ModelDims {
  int feature_dim = 64;  // D
  int effect_dim = 64;   // D_e
  int max_objects = 4;   // padded object slots
  int num_actions = 0;   // C
  int encoder_layers = 2;
  int encoder_heads = 2;
  int gat_layers = 2;
  bool per_action_token = false;

  void validate() const;
};

// Every learnable tensor by name, the frozen text interface (vocab table and
// mixing map), Adam state, and the dataset/config identity the model is bound
// to. Frozen tensors are never touched by the optimizer.
struct ModelState {
  ModelDims dims;
  ParamStore params;

  std::vector<std::string> vocab_words;  // row order of text.vocab
  uint64_t vocab_hash_seed = 0;
  std::string task_name;
  std::vector<std::string> actions;
  uint64_t dataset_hash = 0;

  std::map<std::string, Matrix> adam_m;
  std::map<std::string, Matrix> adam_v;
  int64_t step = 0;

  std::string train_config_json;  // canonical dump of the training config
  uint64_t config_hash = 0;

  text::Vocab vocab() const;
  int action_index(const std::string& label) const;
};

// Seeded initialization bound to a dataset's task and vocab.
ModelState init_model(const ModelDims& dims, const sim::Dataset& ds, uint64_t seed,
                      bool freeze_fusion_effect_blocks = false);

}  // namespace aem::model

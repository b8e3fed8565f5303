#include "aem/model.hpp"

#include <Eigen/QR>

#include "aem/rng.hpp"

namespace aem::model {

void ModelDims::validate() const {
  if (feature_dim < 8 || feature_dim % 8 != 0)
    fail(ErrKind::config, "model: feature_dim must be a positive multiple of 8");
  if (feature_dim % encoder_heads != 0)
    fail(ErrKind::config, "model: feature_dim must divide evenly into heads");
  if (effect_dim < 1) fail(ErrKind::config, "model: effect_dim must be positive");
  if (num_actions < 1) fail(ErrKind::config, "model: num_actions must be positive");
  if (max_objects < 1) fail(ErrKind::config, "model: max_objects must be positive");
  if (encoder_layers < 1 || gat_layers < 1) fail(ErrKind::config, "model: need >= 1 layer");
}

text::Vocab ModelState::vocab() const {
  text::Vocab v;
  v.words = vocab_words;
  v.table = params.at("text.vocab");
  v.dim = dims.feature_dim;
  v.hash_seed = vocab_hash_seed;
  return v;
}

int ModelState::action_index(const std::string& label) const {
  for (size_t i = 0; i < actions.size(); ++i)
    if (actions[i] == label) return static_cast<int>(i);
  return -1;
}

namespace {

// Deterministic random orthonormal map: QR of a seeded Gaussian with the
// usual sign fix (diagonal of R positive).
Matrix orthonormal(Eigen::Index n, Rng& rng) {
  Matrix a = rng.gaussian_matrix(n, n, 1.0);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

}  // namespace

ModelState init_model(const ModelDims& dims, const sim::Dataset& ds, uint64_t seed,
                      bool freeze_fusion_effect_blocks) {
  dims.validate();
  if (dims.num_actions != static_cast<int>(ds.task.actions.size()))
    fail(ErrKind::config, "model: num_actions does not match the dataset task");

  ModelState m;
  m.dims = dims;
  m.vocab_words = ds.vocab.words;
  m.vocab_hash_seed = ds.vocab.hash_seed;
  m.task_name = ds.task.name;
  for (const auto& a : ds.task.actions) m.actions.push_back(a.label);
  m.dataset_hash = ds.hash();

  Rng rng(derive_seed(seed, "model-init"));
  const Eigen::Index D = dims.feature_dim;
  const Eigen::Index De = dims.effect_dim;
  const Eigen::Index Din = D * (dims.max_objects + 1);

  auto gauss = [&rng](Eigen::Index r, Eigen::Index c, double stddev) {
    return Matrix(rng.gaussian_matrix(r, c, stddev));
  };
  auto& P = m.params;

  P.add("token.e", gauss(dims.per_action_token ? dims.num_actions : 1, D, 0.1));

  for (int l = 0; l < dims.encoder_layers; ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    P.add(pre + "ln1.g", Matrix::Ones(1, D));
    P.add(pre + "ln1.b", Matrix::Zero(1, D));
    P.add(pre + "wq", gauss(D, D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "wk", gauss(D, D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "wv", gauss(D, D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "wo", gauss(D, D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "ln2.g", Matrix::Ones(1, D));
    P.add(pre + "ln2.b", Matrix::Zero(1, D));
    P.add(pre + "ff.w1", gauss(D, 4 * D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "ff.b1", Matrix::Zero(1, 4 * D));
    P.add(pre + "ff.w2", gauss(4 * D, D, 1.0 / std::sqrt(static_cast<double>(4 * D))));
    P.add(pre + "ff.b2", Matrix::Zero(1, D));
  }
  P.add("enc.final.g", Matrix::Ones(1, D));
  P.add("enc.final.b", Matrix::Zero(1, D));

  for (const char* branch : {"theta_s", "theta_r"}) {
    std::string pre = std::string(branch) + ".";
    P.add(pre + "w1", gauss(Din, De, 1.0 / std::sqrt(static_cast<double>(Din))));
    P.add(pre + "b1", Matrix::Zero(1, De));
    P.add(pre + "w2", gauss(De, De, 1.0 / std::sqrt(static_cast<double>(De))));
    P.add(pre + "b2", Matrix::Zero(1, De));
  }

  for (int l = 0; l < dims.gat_layers; ++l) {
    std::string pre = "gat." + std::to_string(l) + ".";
    P.add(pre + "w", gauss(D, D, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "a_src", gauss(D, 1, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "a_dst", gauss(D, 1, 1.0 / std::sqrt(static_cast<double>(D))));
  }

  for (const char* pool : {"pool_s", "pool_r"}) {
    std::string pre = std::string(pool) + ".";
    P.add(pre + "w", gauss(D, De, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "b", Matrix::Zero(1, De));
  }
  for (const char* proj : {"proj_s", "proj_r"}) {
    std::string pre = std::string(proj) + ".";
    P.add(pre + "w", gauss(D, De, 1.0 / std::sqrt(static_cast<double>(D))));
    P.add(pre + "b", Matrix::Zero(1, De));
  }

  P.add("fuse.wx", Matrix::Identity(D, D));
  if (freeze_fusion_effect_blocks) {
    P.add("fuse.ws", Matrix::Zero(De, D), true);
    P.add("fuse.wr", Matrix::Zero(De, D), true);
  } else {
    P.add("fuse.ws", gauss(De, D, 0.2 / std::sqrt(static_cast<double>(De))));
    P.add("fuse.wr", gauss(De, D, 0.2 / std::sqrt(static_cast<double>(De))));
  }
  P.add("fuse.b", Matrix::Zero(1, D));

  P.add("prompt.p", Matrix::Zero(1, D));
  P.add("text.mix", orthonormal(D, rng), true);
  P.add("text.vocab", ds.vocab.table, true);
  return m;
}

}  // namespace aem::model

#include "aem/knowledge.hpp"

#include <cmath>

namespace aem::knowledge {

using num::Tape;
using num::Value;

RowVec positional_encode(const Eigen::Vector4d& box, Eigen::Index dim) {
  if (dim % 8 != 0) fail(ErrKind::config, "positional_encode: dim must be divisible by 8");
  for (int c = 0; c < 4; ++c)
    if (box[c] < 0.0 || box[c] > 1.0)
      fail(ErrKind::validation, "positional_encode: box coordinate outside [0,1]");
  const Eigen::Index pairs = dim / 8;
  RowVec out(dim);
  Eigen::Index k = 0;
  for (int c = 0; c < 4; ++c) {
    double freq = M_PI;
    for (Eigen::Index j = 0; j < pairs; ++j) {
      out(k++) = std::sin(freq * box[c]);
      out(k++) = std::cos(freq * box[c]);
      freq *= 2.0;
    }
  }
  return out;
}

Value mlp2(Tape& t, const ParamMap& p, const std::string& prefix, Value x) {
  Value h = tanh_ew(t, add_rowvec(t, matmul(t, x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return add_rowvec(t, matmul(t, h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

namespace {
Value padded_concat(Tape& t, const RowVec& frame_emb, const std::vector<RowVec>& slots,
                    int n_max, const char* what) {
  if (slots.empty()) fail(ErrKind::validation, std::string(what) + ": all object slots masked");
  if (static_cast<int>(slots.size()) > n_max)
    fail(ErrKind::shape, std::string(what) + ": more objects than slots");
  const Eigen::Index D = frame_emb.size();
  Matrix in(1, D * (n_max + 1));
  in.setZero();
  in.block(0, 0, 1, D) = frame_emb;
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].size() != D) fail(ErrKind::shape, std::string(what) + ": slot dim mismatch");
    in.block(0, D * static_cast<Eigen::Index>(i + 1), 1, D) = slots[i];
  }
  return t.constant(in);
}
}  // namespace

Value visual_state_feature(Tape& t, const ParamMap& p, const RowVec& frame_emb,
                           const std::vector<RowVec>& crops, int n_max) {
  return mlp2(t, p, "theta_s", padded_concat(t, frame_emb, crops, n_max, "visual_state_feature"));
}

Value visual_relation_feature(Tape& t, const ParamMap& p, const RowVec& frame_emb,
                              const std::vector<Eigen::Vector4d>& boxes, int n_max) {
  std::vector<RowVec> enc;
  enc.reserve(boxes.size());
  for (const auto& b : boxes) enc.push_back(positional_encode(b, frame_emb.size()));
  return mlp2(t, p, "theta_r", padded_concat(t, frame_emb, enc, n_max, "visual_relation_feature"));
}

Value gat_encode(Tape& t, const ParamMap& p, const SceneGraph& graph, int layers,
                 GatTrace* trace) {
  const Eigen::Index n = static_cast<Eigen::Index>(graph.nodes.size());
  Matrix mask = Matrix::Identity(n, n);  // self-loops
  for (auto [src, dst] : graph.edges) {
    mask(src, dst) = 1.0;
    mask(dst, src) = 1.0;
  }

  Value h = t.constant(graph.embeddings);
  Value ones_row = t.constant(Matrix::Ones(1, n));
  Value ones_col = t.constant(Matrix::Ones(n, 1));
  for (int l = 0; l < layers; ++l) {
    const std::string prefix = "gat." + std::to_string(l);
    Value hw = matmul(t, h, p.at(prefix + ".w"));
    Value src_score = matmul(t, hw, p.at(prefix + ".a_src"));  // n x 1
    Value dst_score = matmul(t, hw, p.at(prefix + ".a_dst"));  // n x 1
    Value logits = add(t, matmul(t, src_score, ones_row),
                       matmul(t, ones_col, transpose(t, dst_score)));
    Value attn = masked_softmax_rows(t, leaky_relu(t, logits, 0.2), mask);
    if (trace) trace->attention.push_back(t.value(attn));
    h = tanh_ew(t, matmul(t, attn, hw));
  }
  return h;
}

Value pool_nodes(Tape& t, Value node_feats, const std::vector<int>& members) {
  if (members.empty()) fail(ErrKind::validation, "pool_nodes: empty subgraph");
  const Eigen::Index n = t.value(node_feats).rows();
  Matrix sel = Matrix::Zero(1, n);
  for (int m : members) {
    if (m < 0 || m >= n) fail(ErrKind::shape, "pool_nodes: member index out of range");
    sel(0, m) = 1.0 / static_cast<double>(members.size());
  }
  return matmul(t, t.constant(sel), node_feats);
}

Value pool_subgraph(Tape& t, const ParamMap& p, const std::string& prefix, Value node_feats,
                    const std::vector<int>& members) {
  Value pooled = pool_nodes(t, node_feats, members);
  return add_rowvec(t, matmul(t, pooled, p.at(prefix + ".w")), p.at(prefix + ".b"));
}

}  // namespace aem::knowledge

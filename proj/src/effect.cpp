#include "aem/effect.hpp"

#include <cmath>

namespace aem::effect {

using num::Tape;
using num::Value;

Matrix temporal_positions(Eigen::Index rows, Eigen::Index dim) {
  Matrix pe(rows, dim);
  for (Eigen::Index pos = 0; pos < rows; ++pos)
    for (Eigen::Index i = 0; i < dim; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  return pe;
}

namespace {

Value self_attention(Tape& t, const ParamMap& p, const std::string& pre, Value x, int heads) {
  const Eigen::Index D = t.value(x).cols();
  const Eigen::Index dh = D / heads;
  Value q = matmul(t, x, p.at(pre + "wq"));
  Value k = matmul(t, x, p.at(pre + "wk"));
  Value v = matmul(t, x, p.at(pre + "wv"));
  std::vector<Value> outs;
  for (int h = 0; h < heads; ++h) {
    Value qh = slice_cols(t, q, h * dh, (h + 1) * dh);
    Value kh = slice_cols(t, k, h * dh, (h + 1) * dh);
    Value vh = slice_cols(t, v, h * dh, (h + 1) * dh);
    Value scores = scale(t, matmul(t, qh, transpose(t, kh)),
                         1.0 / std::sqrt(static_cast<double>(dh)));
    outs.push_back(matmul(t, softmax_rows(t, scores), vh));
  }
  return matmul(t, concat_cols(t, outs), p.at(pre + "wo"));
}

}  // namespace

EncodeOut encode_with_token(Tape& t, const ParamMap& p, const model::ModelDims& dims,
                            const Matrix& frames, int action_index) {
  if (frames.rows() < 1) fail(ErrKind::shape, "encode_with_token: empty segment");
  if (frames.cols() != dims.feature_dim)
    fail(ErrKind::shape, "encode_with_token: feature dim mismatch");
  const Eigen::Index T = frames.rows();

  Value token_table = p.at("token.e");
  Value token_row = dims.per_action_token
                        ? slice_rows(t, token_table, action_index, action_index + 1)
                        : token_table;
  Value seq = concat_rows(t, {t.constant(frames), token_row});
  Value h = add(t, seq, t.constant(temporal_positions(T + 1, dims.feature_dim)));

  for (int l = 0; l < dims.encoder_layers; ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    Value a = layer_norm_rows(t, h, p.at(pre + "ln1.g"), p.at(pre + "ln1.b"));
    h = add(t, h, self_attention(t, p, pre, a, dims.encoder_heads));
    Value b = layer_norm_rows(t, h, p.at(pre + "ln2.g"), p.at(pre + "ln2.b"));
    Value ff = add_rowvec(
        t,
        matmul(t, gelu(t, add_rowvec(t, matmul(t, b, p.at(pre + "ff.w1")), p.at(pre + "ff.b1"))),
               p.at(pre + "ff.w2")),
        p.at(pre + "ff.b2"));
    h = add(t, h, ff);
  }
  h = layer_norm_rows(t, h, p.at("enc.final.g"), p.at("enc.final.b"));
  return {slice_rows(t, h, 0, T), slice_rows(t, h, T, T + 1)};
}

Value project_state(Tape& t, const ParamMap& p, Value token) {
  return add_rowvec(t, matmul(t, token, p.at("proj_s.w")), p.at("proj_s.b"));
}

Value project_relation(Tape& t, const ParamMap& p, Value token) {
  return add_rowvec(t, matmul(t, token, p.at("proj_r.w")), p.at("proj_r.b"));
}

Value alignment_term(Tape& t, Value projected, Value target) {
  return sum_squares(t, sub(t, projected, target));
}

Value info_nce(Tape& t, Value anchors, Value targets, double rho) {
  if (rho <= 0.0) fail(ErrKind::config, "info_nce: rho must be positive");
  const Eigen::Index B = t.value(anchors).rows();
  if (t.value(targets).rows() != B) fail(ErrKind::shape, "info_nce: batch size mismatch");
  Value an = l2_normalize_rows(t, anchors);
  Value tn = l2_normalize_rows(t, targets);
  Value logits = scale(t, matmul(t, an, transpose(t, tn)), 1.0 / rho);
  std::vector<int> diag(static_cast<size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) diag[static_cast<size_t>(i)] = static_cast<int>(i);
  Value pos = gather_cols(t, logits, diag);
  return sum_all(t, sub(t, logsumexp_rows(t, logits), pos));
}

Value fuse_with(Tape& t, const ParamMap& p, Value frames, Value proj_s, Value proj_r) {
  const Eigen::Index T = t.value(frames).rows();
  Value effect_row = add_rowvec(t,
                                add(t, matmul(t, proj_s, p.at("fuse.ws")),
                                    matmul(t, proj_r, p.at("fuse.wr"))),
                                p.at("fuse.b"));
  Value broadcast = matmul(t, t.constant(Matrix::Ones(T, 1)), effect_row);
  return add(t, matmul(t, frames, p.at("fuse.wx")), broadcast);
}

Value fuse(Tape& t, const ParamMap& p, Value frames, Value token) {
  return fuse_with(t, p, frames, project_state(t, p, token), project_relation(t, p, token));
}

}  // namespace aem::effect

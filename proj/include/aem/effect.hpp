#pragma once

#include "aem/model.hpp"
#include "aem/params.hpp"
#include "aem/tape.hpp"

namespace aem::effect {

struct EncodeOut {
  num::Value frames;  // T x D
  num::Value token;   // 1 x D, the encoded effect token
};

// Standard sinusoidal position table, rows x dim.
Matrix temporal_positions(Eigen::Index rows, Eigen::Index dim);

// [X_1..X_T, e] + positions through pre-norm self-attention encoder layers
// (heads/widths from dims) with a final layer norm.
EncodeOut encode_with_token(num::Tape& t, const ParamMap& p, const model::ModelDims& dims,
                            const Matrix& frames, int action_index = 0);

// proj_s.* / proj_r.* linear maps of the encoded token into the effect spaces.
num::Value project_state(num::Tape& t, const ParamMap& p, num::Value token);
num::Value project_relation(num::Tape& t, const ParamMap& p, num::Value token);

// ||projected - target||^2 for one alignment term of the effect loss.
num::Value alignment_term(num::Tape& t, num::Value projected, num::Value target);

// InfoNCE over cosine similarity with temperature rho: rows of `anchors` are
// matched to same-index rows of `targets`, all other rows are negatives.
// Summed over the batch.
num::Value info_nce(num::Tape& t, num::Value anchors, num::Value targets, double rho);

// X_tilde = X * Wx + 1 * (proj_s * Ws + proj_r * Wr + b): the token
// projections broadcast along time and mixed back into feature space.
num::Value fuse_with(num::Tape& t, const ParamMap& p, num::Value frames, num::Value proj_s,
                     num::Value proj_r);
num::Value fuse(num::Tape& t, const ParamMap& p, num::Value frames, num::Value token);

}  // namespace aem::effect

#pragma once

#include <string>
#include <vector>

#include "aem/params.hpp"
#include "aem/scene_graph.hpp"
#include "aem/tape.hpp"

namespace aem::knowledge {

// Sinusoidal box encoding: each of (cx, cy, w, h) expands to dim/8 (sin, cos)
// pairs at frequencies 2^j * pi, concatenated in coordinate order.
RowVec positional_encode(const Eigen::Vector4d& box, Eigen::Index dim);

// y = tanh(x W1 + b1) W2 + b2 with parameters <prefix>.w1/b1/w2/b2.
num::Value mlp2(num::Tape& t, const ParamMap& p, const std::string& prefix, num::Value x);

// Eq.-style visual branches: frame embedding concatenated with n_max
// zero-padded object slots, projected by a learnable 2-layer perceptron.
// Crops feed the state branch, box positional encodings the relation branch.
num::Value visual_state_feature(num::Tape& t, const ParamMap& p, const RowVec& frame_emb,
                                const std::vector<RowVec>& crops, int n_max);
num::Value visual_relation_feature(num::Tape& t, const ParamMap& p, const RowVec& frame_emb,
                                   const std::vector<Eigen::Vector4d>& boxes, int n_max);

struct GatTrace {
  std::vector<Matrix> attention;  // one n x n row-stochastic matrix per layer
};

// Attention message passing over the undirected adjacency with self-loops.
// Logits a_src.Wh_i + a_dst.Wh_j through LeakyReLU(0.2), neighborhood
// softmax, tanh output. Parameters gat.<layer>.{w,a_src,a_dst}.
num::Value gat_encode(num::Tape& t, const ParamMap& p, const SceneGraph& graph, int layers,
                      GatTrace* trace = nullptr);

// Arithmetic mean of member rows -> 1 x D.
num::Value pool_nodes(num::Tape& t, num::Value node_feats, const std::vector<int>& members);

// Mean over the subgraph followed by the learnable map <prefix>.{w,b} to D_e.
num::Value pool_subgraph(num::Tape& t, const ParamMap& p, const std::string& prefix,
                         num::Value node_feats, const std::vector<int>& members);

}  // namespace aem::knowledge

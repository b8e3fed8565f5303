#include "aem/scene_graph.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace aem::knowledge {

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::object: return "object";
    case NodeKind::relation: return "relation";
    case NodeKind::attribute: return "attribute";
  }
  return "object";
}

NodeKind node_kind_from_string(const std::string& s) {
  if (s == "object") return NodeKind::object;
  if (s == "relation") return NodeKind::relation;
  if (s == "attribute") return NodeKind::attribute;
  fail(ErrKind::validation, "scene graph: unknown node kind '" + s + "'");
}

std::vector<int> SceneGraph::object_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind == NodeKind::object) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> SceneGraph::relation_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind == NodeKind::relation) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> SceneGraph::attribute_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind == NodeKind::attribute) out.push_back(static_cast<int>(i));
  return out;
}

SceneGraph build_scene_graph(const SceneGraphRecord& record, const text::Vocab& vocab) {
  if (record.nodes.empty())
    fail(ErrKind::validation, "scene graph '" + record.segment_id + "': no nodes");

  std::map<int, int> id_to_index;
  for (size_t i = 0; i < record.nodes.size(); ++i) {
    if (!id_to_index.emplace(record.nodes[i].id, static_cast<int>(i)).second)
      fail(ErrKind::validation, "scene graph '" + record.segment_id + "': duplicate node id " +
                                    std::to_string(record.nodes[i].id));
  }

  SceneGraph g;
  g.nodes = record.nodes;
  const int n = static_cast<int>(g.nodes.size());

  std::vector<std::vector<int>> in(n), out(n), incident(n);
  for (auto [src, dst] : record.edges) {
    auto si = id_to_index.find(src), di = id_to_index.find(dst);
    if (si == id_to_index.end() || di == id_to_index.end())
      fail(ErrKind::validation, "scene graph '" + record.segment_id + "': dangling edge " +
                                    std::to_string(src) + "->" + std::to_string(dst));
    g.edges.emplace_back(si->second, di->second);
    out[si->second].push_back(di->second);
    in[di->second].push_back(si->second);
    incident[si->second].push_back(di->second);
    incident[di->second].push_back(si->second);
  }

  // Taxonomy checks.
  for (int i = 0; i < n; ++i) {
    const SceneNode& node = g.nodes[i];
    if (node.kind == NodeKind::attribute) {
      if (incident[i].size() != 1)
        fail(ErrKind::validation,
             "scene graph '" + record.segment_id + "': attribute node " +
                 std::to_string(node.id) + " must have exactly one incident edge, has " +
                 std::to_string(incident[i].size()));
      if (g.nodes[incident[i][0]].kind != NodeKind::object)
        fail(ErrKind::validation, "scene graph '" + record.segment_id + "': attribute node " +
                                      std::to_string(node.id) + " is not attached to an object");
    } else if (node.kind == NodeKind::relation) {
      bool ok = in[i].size() == 1 && out[i].size() == 1 &&
                g.nodes[in[i][0]].kind == NodeKind::object &&
                g.nodes[out[i][0]].kind == NodeKind::object;
      if (!ok)
        fail(ErrKind::validation,
             "scene graph '" + record.segment_id + "': relation node " + std::to_string(node.id) +
                 " must lie on an object->relation->object chain");
    }
  }

  // Connectivity over the undirected view.
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    int cur = stack.back();
    stack.pop_back();
    for (int nb : incident[cur])
      if (!seen[nb]) {
        seen[nb] = 1;
        stack.push_back(nb);
      }
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i])
      fail(ErrKind::validation, "scene graph '" + record.segment_id + "': node " +
                                    std::to_string(g.nodes[i].id) + " is disconnected");

  g.embeddings.resize(n, vocab.dim);
  for (int i = 0; i < n; ++i) g.embeddings.row(i) = text::encode(vocab, g.nodes[i].label);
  return g;
}

SubgraphPair decompose(const SceneGraph& graph) {
  SubgraphPair pair;
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    switch (graph.nodes[i].kind) {
      case NodeKind::object:
        pair.state_nodes.push_back(static_cast<int>(i));
        pair.relation_nodes.push_back(static_cast<int>(i));
        break;
      case NodeKind::attribute: pair.state_nodes.push_back(static_cast<int>(i)); break;
      case NodeKind::relation: pair.relation_nodes.push_back(static_cast<int>(i)); break;
    }
  }
  return pair;
}

}  // namespace aem::knowledge

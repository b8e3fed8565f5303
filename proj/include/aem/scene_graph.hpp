#pragma once

#include <string>
#include <vector>

#include "aem/text.hpp"
#include "aem/types.hpp"

namespace aem::knowledge {

enum class NodeKind { object, relation, attribute };

std::string to_string(NodeKind k);
NodeKind node_kind_from_string(const std::string& s);

struct SceneNode {
  int id = 0;
  NodeKind kind = NodeKind::object;
  std::string label;
};

// Raw record as exchanged through graphs.json; not yet validated.
struct SceneGraphRecord {
  std::string segment_id;
  std::vector<SceneNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (src id, dst id)
};

// Validated typed graph with node embeddings.
//
// Taxonomy: attribute nodes have exactly one incident edge, to an object;
// relation nodes sit on an object -> relation -> object chain; the graph is
// connected when edges are treated as undirected.
struct SceneGraph {
  std::vector<SceneNode> nodes;
  std::vector<std::pair<int, int>> edges;  // indices into `nodes`
  Matrix embeddings;                       // |nodes| x D, from the text encoder

  std::vector<int> object_indices() const;
  std::vector<int> relation_indices() const;
  std::vector<int> attribute_indices() const;
};

struct SubgraphPair {
  std::vector<int> state_nodes;     // objects + attributes
  std::vector<int> relation_nodes;  // objects + relations
};

// Validates the record against the taxonomy and embeds node labels.
// Violations raise validation errors listing the offending node ids.
SceneGraph build_scene_graph(const SceneGraphRecord& record, const text::Vocab& vocab);

SubgraphPair decompose(const SceneGraph& graph);

}  // namespace aem::knowledge

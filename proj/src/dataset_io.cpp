#include "aem/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>
#include <zlib.h>

namespace aem::sim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; big-endian hosts are unsupported");

void append_floats(std::vector<char>& out, const MatrixF& m) {
  // Row-major on disk.
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float v = m(r, c);
      const char* p = reinterpret_cast<const char*>(&v);
      out.insert(out.end(), p, p + sizeof(float));
    }
}

MatrixF read_floats(const std::vector<char>& blob, size_t offset, Eigen::Index rows,
                    Eigen::Index cols, const std::string& what) {
  size_t need = static_cast<size_t>(rows) * static_cast<size_t>(cols) * sizeof(float);
  if (offset + need > blob.size())
    fail(ErrKind::io, "dataset: blob length mismatch reading " + what);
  MatrixF m(rows, cols);
  const char* p = blob.data() + offset;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      float v;
      std::memcpy(&v, p, sizeof(float));
      p += sizeof(float);
      m(r, c) = v;
    }
  return m;
}

uint32_t crc32_of(const std::vector<char>& data) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrKind::io, "cannot open for writing: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail(ErrKind::io, "write failed: " + path.string());
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrKind::io, "cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrKind::io, "write failed: " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) fail(ErrKind::io, "cannot open: " + path.string());
  auto size = f.tellg();
  f.seekg(0);
  std::vector<char> out(static_cast<size_t>(size));
  f.read(out.data(), size);
  if (!f) fail(ErrKind::io, "read failed: " + path.string());
  return out;
}

json graphs_to_json(const Dataset& ds) {
  json arr = json::array();
  for (const auto& seg : ds.segments) {
    json rec;
    rec["segment_id"] = seg.graph.segment_id;
    json nodes = json::array();
    for (const auto& n : seg.graph.nodes)
      nodes.push_back({{"id", n.id}, {"kind", knowledge::to_string(n.kind)}, {"label", n.label}});
    rec["nodes"] = std::move(nodes);
    json edges = json::array();
    for (auto [s, d] : seg.graph.edges) edges.push_back({s, d});
    rec["edges"] = std::move(edges);
    arr.push_back(std::move(rec));
  }
  return arr;
}

}  // namespace

uint32_t crc32_of_file(const fs::path& path) { return crc32_of(read_file(path)); }

void write_dataset(const Dataset& ds, const fs::path& dir) {
  validate_dataset(ds);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrKind::io, "cannot create directory: " + dir.string());

  std::vector<char> features, patches;
  json segments = json::array();
  for (const auto& seg : ds.segments) {
    json s;
    s["id"] = seg.id;
    s["video"] = seg.video_id;
    s["split"] = seg.split;
    s["t_start"] = seg.t_start;
    s["t_end"] = seg.t_end;
    s["action"] = seg.action;
    s["action_index"] = seg.action_index;
    s["y"] = seg.y;
    s["kind"] = to_string(seg.kind);
    s["gt_effect_index"] = seg.gt_effect_index;
    s["features_offset"] = features.size();
    append_floats(features, seg.frames);
    s["crops_offset"] = features.size();
    for (const auto& obs : seg.objects) {
      MatrixF crop(1, obs.crop.size());
      for (Eigen::Index c = 0; c < obs.crop.size(); ++c)
        crop(0, c) = static_cast<float>(obs.crop(c));
      append_floats(features, crop);
    }
    s["patches_offset"] = patches.size();
    for (const auto& p : seg.patches) append_floats(patches, p);
    json objs = json::array();
    for (const auto& obs : seg.objects)
      objs.push_back({{"label", obs.label},
                      {"box", {obs.box[0], obs.box[1], obs.box[2], obs.box[3]}}});
    s["objects"] = std::move(objs);
    segments.push_back(std::move(s));
  }

  std::string graphs_text = graphs_to_json(ds).dump(2);
  std::vector<char> graphs_bytes(graphs_text.begin(), graphs_text.end());

  json manifest;
  manifest["format_version"] = 1;
  manifest["tool"] = "aem";
  manifest["seed"] = ds.seed;
  manifest["dataset_hash"] = ds.hash();
  manifest["config"] = json::parse(sim_config_to_json_text(ds.config));
  json task;
  task["name"] = ds.task.name;
  json actions = json::array();
  for (const auto& act : ds.task.actions) {
    json a;
    a["label"] = act.label;
    json objs = json::array();
    for (const auto& o : act.objects)
      objs.push_back({{"label", o.label},
                      {"attribute_values", o.attribute_values},
                      {"canonical_value", o.canonical_value}});
    a["objects"] = std::move(objs);
    a["relations"] = act.relations;
    a["descriptions"] = act.descriptions;
    actions.push_back(std::move(a));
  }
  task["actions"] = std::move(actions);
  manifest["task"] = std::move(task);

  json vocab;
  vocab["hash_seed"] = ds.vocab.hash_seed;
  vocab["dim"] = ds.vocab.dim;
  json words = json::object();
  for (size_t i = 0; i < ds.vocab.words.size(); ++i) {
    json arr = json::array();
    for (Eigen::Index c = 0; c < ds.vocab.dim; ++c)
      arr.push_back(ds.vocab.table(static_cast<Eigen::Index>(i), c));
    words[ds.vocab.words[i]] = std::move(arr);
  }
  vocab["words"] = std::move(words);
  manifest["vocab"] = std::move(vocab);

  manifest["dims"] = {{"feature_dim", ds.config.feature_dim}, {"patch_size", kPatchSize}};
  manifest["blobs"] = {
      {"features.bin", {{"bytes", features.size()}, {"crc32", crc32_of(features)}}},
      {"patches.bin", {{"bytes", patches.size()}, {"crc32", crc32_of(patches)}}},
      {"graphs.json", {{"bytes", graphs_bytes.size()}, {"crc32", crc32_of(graphs_bytes)}}}};

  json splits;
  for (const char* name : {"train", "val", "test"}) {
    json vids = json::array();
    std::string last;
    for (const auto& seg : ds.segments)
      if (seg.split == name && seg.video_id != last) {
        vids.push_back(seg.video_id);
        last = seg.video_id;
      }
    splits[name] = std::move(vids);
  }
  manifest["splits"] = std::move(splits);
  manifest["segments"] = std::move(segments);

  write_file(dir / "features.bin", features);
  write_file(dir / "patches.bin", patches);
  write_file(dir / "graphs.json", graphs_text);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrKind::io, std::string("dataset: malformed manifest: ") + e.what());
  }

  Dataset ds;
  try {
    if (manifest.at("format_version").get<int>() != 1)
      fail(ErrKind::io, "dataset: unsupported format version");
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.config = sim_config_from_json_text(manifest.at("config").dump());

    const json& task = manifest.at("task");
    ds.task.name = task.at("name").get<std::string>();
    for (const json& a : task.at("actions")) {
      TaskSpec::Action act;
      act.label = a.at("label").get<std::string>();
      for (const json& o : a.at("objects")) {
        TaskSpec::SceneObject obj;
        obj.label = o.at("label").get<std::string>();
        obj.attribute_values = o.at("attribute_values").get<std::vector<std::string>>();
        obj.canonical_value = o.at("canonical_value").get<std::string>();
        act.objects.push_back(std::move(obj));
      }
      act.relations = a.at("relations").get<std::vector<std::string>>();
      act.descriptions = a.at("descriptions").get<std::vector<std::string>>();
      ds.task.actions.push_back(std::move(act));
    }

    const json& vocab = manifest.at("vocab");
    ds.vocab.hash_seed = vocab.at("hash_seed").get<uint64_t>();
    ds.vocab.dim = vocab.at("dim").get<int>();
    const json& words = vocab.at("words");
    ds.vocab.table.resize(static_cast<Eigen::Index>(words.size()), ds.vocab.dim);
    Eigen::Index row = 0;
    for (auto it = words.begin(); it != words.end(); ++it, ++row) {
      ds.vocab.words.push_back(it.key());
      const json& arr = it.value();
      if (static_cast<Eigen::Index>(arr.size()) != ds.vocab.dim)
        fail(ErrKind::io, "dataset: vocab vector size mismatch for '" + it.key() + "'");
      for (Eigen::Index c = 0; c < ds.vocab.dim; ++c)
        ds.vocab.table(row, c) = arr[static_cast<size_t>(c)].get<double>();
    }

    // Blob integrity before any slicing.
    auto check_blob = [&](const char* name, const std::vector<char>& data) {
      const json& meta = manifest.at("blobs").at(name);
      if (meta.at("bytes").get<size_t>() != data.size())
        fail(ErrKind::io, std::string("dataset: blob length mismatch for ") + name);
      if (meta.at("crc32").get<uint32_t>() != crc32_of(data))
        fail(ErrKind::io, std::string("dataset: checksum failure for ") + name);
    };
    std::vector<char> features = read_file(dir / "features.bin");
    std::vector<char> patches = read_file(dir / "patches.bin");
    std::vector<char> graphs_bytes = read_file(dir / "graphs.json");
    check_blob("features.bin", features);
    check_blob("patches.bin", patches);
    check_blob("graphs.json", graphs_bytes);

    json graphs = json::parse(graphs_bytes.begin(), graphs_bytes.end());
    std::map<std::string, const json*> graph_by_id;
    for (const json& g : graphs) graph_by_id[g.at("segment_id").get<std::string>()] = &g;

    const Eigen::Index D = ds.config.feature_dim;
    for (const json& s : manifest.at("segments")) {
      Segment seg;
      seg.id = s.at("id").get<std::string>();
      seg.video_id = s.at("video").get<std::string>();
      seg.split = s.at("split").get<std::string>();
      seg.t_start = s.at("t_start").get<int>();
      seg.t_end = s.at("t_end").get<int>();
      seg.action = s.at("action").get<std::string>();
      seg.action_index = s.at("action_index").get<int>();
      seg.y = s.at("y").get<int>();
      seg.kind = mistake_kind_from_string(s.at("kind").get<std::string>());
      seg.gt_effect_index = s.at("gt_effect_index").get<int>();
      int T = seg.frame_count();
      if (T < 1) fail(ErrKind::io, "dataset: segment " + seg.id + " has nonpositive length");
      seg.frames = read_floats(features, s.at("features_offset").get<size_t>(), T, D,
                               seg.id + " frames");
      size_t crops_offset = s.at("crops_offset").get<size_t>();
      size_t patches_offset = s.at("patches_offset").get<size_t>();
      const json& objs = s.at("objects");
      MatrixF crops = read_floats(features, crops_offset,
                                  static_cast<Eigen::Index>(objs.size()), D, seg.id + " crops");
      Eigen::Index oi = 0;
      for (const json& o : objs) {
        ObjectObs obs;
        obs.label = o.at("label").get<std::string>();
        const json& box = o.at("box");
        for (int c = 0; c < 4; ++c) obs.box[c] = box[static_cast<size_t>(c)].get<double>();
        obs.crop = crops.row(oi++).cast<double>();
        seg.objects.push_back(std::move(obs));
      }
      for (int t = 0; t < T; ++t)
        seg.patches.push_back(read_floats(patches,
                                          patches_offset + static_cast<size_t>(t) * kPatchSize *
                                                               kPatchSize * sizeof(float),
                                          kPatchSize, kPatchSize, seg.id + " patches"));
      auto git = graph_by_id.find(seg.id);
      if (git == graph_by_id.end())
        fail(ErrKind::io, "dataset: missing scene graph for segment " + seg.id);
      const json& g = *git->second;
      seg.graph.segment_id = seg.id;
      for (const json& n : g.at("nodes"))
        seg.graph.nodes.push_back({n.at("id").get<int>(),
                                   knowledge::node_kind_from_string(n.at("kind").get<std::string>()),
                                   n.at("label").get<std::string>()});
      for (const json& e : g.at("edges"))
        seg.graph.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
      ds.segments.push_back(std::move(seg));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrKind::io, std::string("dataset: malformed manifest: ") + e.what());
  }

  validate_dataset(ds);
  return ds;
}

namespace {
template <class M>
bool mats_equal(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}
}  // namespace

bool datasets_equal(const Dataset& a, const Dataset& b, std::string* why) {
  auto differ = [why](const std::string& what) {
    if (why) *why = what;
    return false;
  };
  if (sim_config_to_json_text(a.config) != sim_config_to_json_text(b.config))
    return differ("config");
  if (a.seed != b.seed) return differ("seed");
  if (a.task.name != b.task.name) return differ("task name");
  if (a.task.actions.size() != b.task.actions.size()) return differ("action count");
  for (size_t i = 0; i < a.task.actions.size(); ++i) {
    const auto& x = a.task.actions[i];
    const auto& y = b.task.actions[i];
    if (x.label != y.label || x.relations != y.relations || x.descriptions != y.descriptions)
      return differ("action " + x.label);
    if (x.objects.size() != y.objects.size()) return differ("object count");
    for (size_t j = 0; j < x.objects.size(); ++j)
      if (x.objects[j].label != y.objects[j].label ||
          x.objects[j].attribute_values != y.objects[j].attribute_values ||
          x.objects[j].canonical_value != y.objects[j].canonical_value)
        return differ("object spec");
  }
  if (a.vocab.words != b.vocab.words || a.vocab.hash_seed != b.vocab.hash_seed ||
      !mats_equal(a.vocab.table, b.vocab.table))
    return differ("vocab");
  if (a.segments.size() != b.segments.size()) return differ("segment count");
  for (size_t i = 0; i < a.segments.size(); ++i) {
    const auto& x = a.segments[i];
    const auto& y = b.segments[i];
    if (x.id != y.id || x.video_id != y.video_id || x.split != y.split ||
        x.t_start != y.t_start || x.t_end != y.t_end || x.action != y.action ||
        x.action_index != y.action_index || x.y != y.y || x.kind != y.kind ||
        x.gt_effect_index != y.gt_effect_index)
      return differ("segment header " + x.id);
    if (!mats_equal(x.frames, y.frames)) return differ("frames " + x.id);
    if (x.patches.size() != y.patches.size()) return differ("patch count " + x.id);
    for (size_t t = 0; t < x.patches.size(); ++t)
      if (!mats_equal(x.patches[t], y.patches[t])) return differ("patch " + x.id);
    if (x.objects.size() != y.objects.size()) return differ("objects " + x.id);
    for (size_t j = 0; j < x.objects.size(); ++j)
      if (x.objects[j].label != y.objects[j].label ||
          !mats_equal(x.objects[j].box, y.objects[j].box) ||
          !mats_equal(x.objects[j].crop, y.objects[j].crop))
        return differ("object obs " + x.id);
    if (x.graph.segment_id != y.graph.segment_id || x.graph.edges != y.graph.edges)
      return differ("graph " + x.id);
    if (x.graph.nodes.size() != y.graph.nodes.size()) return differ("graph nodes " + x.id);
    for (size_t j = 0; j < x.graph.nodes.size(); ++j)
      if (x.graph.nodes[j].id != y.graph.nodes[j].id ||
          x.graph.nodes[j].kind != y.graph.nodes[j].kind ||
          x.graph.nodes[j].label != y.graph.nodes[j].label)
        return differ("graph node " + x.id);
  }
  return true;
}

}  // namespace aem::sim

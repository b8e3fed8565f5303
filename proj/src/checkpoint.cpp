#include "aem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>
#include <zlib.h>

namespace aem::model {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

void append_matrix(std::vector<char>& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      const char* p = reinterpret_cast<const char*>(&v);
      out.insert(out.end(), p, p + sizeof(double));
    }
}

Matrix take_matrix(const std::vector<char>& payload, size_t& cursor, Eigen::Index rows,
                   Eigen::Index cols, const std::string& name) {
  size_t need = static_cast<size_t>(rows) * static_cast<size_t>(cols) * sizeof(double);
  if (cursor + need > payload.size())
    fail(ErrKind::io, "checkpoint: payload truncated at tensor " + name);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v;
      std::memcpy(&v, payload.data() + cursor, sizeof(double));
      cursor += sizeof(double);
      m(r, c) = v;
    }
  return m;
}

json dims_to_json(const ModelDims& d) {
  return {{"feature_dim", d.feature_dim},   {"effect_dim", d.effect_dim},
          {"max_objects", d.max_objects},   {"num_actions", d.num_actions},
          {"encoder_layers", d.encoder_layers}, {"encoder_heads", d.encoder_heads},
          {"gat_layers", d.gat_layers},     {"per_action_token", d.per_action_token}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.feature_dim = j.at("feature_dim").get<int>();
  d.effect_dim = j.at("effect_dim").get<int>();
  d.max_objects = j.at("max_objects").get<int>();
  d.num_actions = j.at("num_actions").get<int>();
  d.encoder_layers = j.at("encoder_layers").get<int>();
  d.encoder_heads = j.at("encoder_heads").get<int>();
  d.gat_layers = j.at("gat_layers").get<int>();
  d.per_action_token = j.at("per_action_token").get<bool>();
  return d;
}

}  // namespace

void save_checkpoint(const ModelState& m, const fs::path& path) {
  std::vector<char> payload;
  json tensors = json::array();
  for (const auto& e : m.params.entries()) {
    tensors.push_back({{"name", e.name},
                       {"rows", e.value.rows()},
                       {"cols", e.value.cols()},
                       {"frozen", e.frozen},
                       {"role", "param"}});
    append_matrix(payload, e.value);
  }
  auto dump_opt = [&](const std::map<std::string, Matrix>& slots, const char* role) {
    for (const auto& [name, value] : slots) {
      tensors.push_back({{"name", name},
                         {"rows", value.rows()},
                         {"cols", value.cols()},
                         {"frozen", false},
                         {"role", role}});
      append_matrix(payload, value);
    }
  };
  dump_opt(m.adam_m, "adam_m");
  dump_opt(m.adam_v, "adam_v");

  json header;
  header["format_version"] = 1;
  header["tool"] = "aem";
  header["dims"] = dims_to_json(m.dims);
  header["tensors"] = std::move(tensors);
  header["step"] = m.step;
  header["payload_crc32"] = static_cast<uint32_t>(::crc32(
      0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  header["vocab_words"] = m.vocab_words;
  header["vocab_hash_seed"] = m.vocab_hash_seed;
  header["task_name"] = m.task_name;
  header["actions"] = m.actions;
  header["dataset_hash"] = m.dataset_hash;
  header["config_hash"] = m.config_hash;
  header["train_config"] = m.train_config_json.empty()
                               ? json(nullptr)
                               : json::parse(m.train_config_json);

  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrKind::io, "checkpoint: cannot open for writing: " + path.string());
  std::string head = header.dump();
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  f.put('\n');
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) fail(ErrKind::io, "checkpoint: write failed: " + path.string());
}

ModelState load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrKind::io, "checkpoint: cannot open: " + path.string());
  std::string head_line;
  if (!std::getline(f, head_line)) fail(ErrKind::io, "checkpoint: missing header");
  std::vector<char> payload((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());

  json header;
  try {
    header = json::parse(head_line);
  } catch (const std::exception& e) {
    fail(ErrKind::io, std::string("checkpoint: malformed header: ") + e.what());
  }

  ModelState m;
  try {
    if (header.at("format_version").get<int>() != 1)
      fail(ErrKind::io, "checkpoint: unsupported format version");
    m.dims = dims_from_json(header.at("dims"));
    m.step = header.at("step").get<int64_t>();
    m.vocab_words = header.at("vocab_words").get<std::vector<std::string>>();
    m.vocab_hash_seed = header.at("vocab_hash_seed").get<uint64_t>();
    m.task_name = header.at("task_name").get<std::string>();
    m.actions = header.at("actions").get<std::vector<std::string>>();
    m.dataset_hash = header.at("dataset_hash").get<uint64_t>();
    m.config_hash = header.at("config_hash").get<uint64_t>();
    if (!header.at("train_config").is_null())
      m.train_config_json = header.at("train_config").dump();

    uint32_t want_crc = header.at("payload_crc32").get<uint32_t>();
    uint32_t got_crc = static_cast<uint32_t>(::crc32(
        0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    if (want_crc != got_crc) fail(ErrKind::io, "checkpoint: payload checksum failure");

    size_t cursor = 0;
    for (const json& tj : header.at("tensors")) {
      std::string name = tj.at("name").get<std::string>();
      Matrix value = take_matrix(payload, cursor, tj.at("rows").get<Eigen::Index>(),
                                 tj.at("cols").get<Eigen::Index>(), name);
      std::string role = tj.at("role").get<std::string>();
      if (role == "param")
        m.params.add(name, std::move(value), tj.at("frozen").get<bool>());
      else if (role == "adam_m")
        m.adam_m[name] = std::move(value);
      else if (role == "adam_v")
        m.adam_v[name] = std::move(value);
      else
        fail(ErrKind::io, "checkpoint: unknown tensor role '" + role + "'");
    }
    if (cursor != payload.size()) fail(ErrKind::io, "checkpoint: trailing payload bytes");
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrKind::io, std::string("checkpoint: malformed header: ") + e.what());
  }
  return m;
}

}  // namespace aem::model

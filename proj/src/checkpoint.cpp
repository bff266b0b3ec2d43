#include <cstdio>
#include <set>

#include "afford3d/rng.hpp"
#include "afford3d/trainer.hpp"
#include "json.hpp"

namespace afford3d::train {

using nlohmann::json;

namespace {

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

json write_entry(const fs::path& dir, const std::string& name, const std::string& kind, const Mat& value) {
  const std::string file = kind + "/" + name + ".bin";
  const std::vector<unsigned char> bytes = io::encode_array(io::to_array(value, io::DType::kF64));
  io::write_bytes(dir / file, bytes);
  return {{"name", name}, {"kind", kind}, {"file", file}, {"checksum", hex(fnv1a64(bytes))}};
}

Mat read_entry(const fs::path& dir, const json& entry) {
  const std::string file = entry.at("file").get<std::string>();
  const std::vector<unsigned char> bytes = io::read_bytes(dir / file);
  if (fnv1a64(bytes) != from_hex(entry.at("checksum").get<std::string>()))
    throw io::FormatError(io::FormatErrc::kChecksum, (dir / file).string() + ": checksum mismatch");
  const io::Array a = io::decode_array(bytes, ~0ull);
  if (a.dtype != io::DType::kF64) throw io::FormatError(io::FormatErrc::kBadDType, file + ": expected float64");
  return io::to_mat(a);
}

}  // namespace

void save_checkpoint(const fs::path& dir, net::Model& model, const TrainState& state, const net::Tokenizer& tok,
                     const std::string& config_snapshot) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  json arrays = json::array();
  for (const ad::Parameter* p : model.parameters()) {
    arrays.push_back(write_entry(tmp, p->name, "params", p->value));
    const auto m = state.adam.m.find(p->name);
    if (m != state.adam.m.end()) {
      arrays.push_back(write_entry(tmp, p->name, "adam_m", m->second));
      arrays.push_back(write_entry(tmp, p->name, "adam_v", state.adam.v.at(p->name)));
    }
  }
  json j;
  j["format_version"] = 1;
  j["step"] = state.step;
  j["adam_t"] = state.adam.t;
  j["best_val_aiou"] = state.best_val_aiou;
  j["best_step"] = state.best_step;
  j["frozen_hash"] = hex(model.frozen_hash());
  j["vocabulary"] = tok.words();
  j["config"] = config_snapshot;
  j["arrays"] = arrays;
  io::write_text(tmp / "manifest.json", j.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  CheckpointInfo info;
  try {
    const json j = json::parse(io::read_text(dir / "manifest.json"));
    if (j.at("format_version").get<int>() != 1)
      throw io::FormatError(io::FormatErrc::kBadHeader, "unsupported checkpoint version");
    info.state.step = j.at("step").get<int>();
    info.state.adam.t = j.at("adam_t").get<long long>();
    info.state.best_val_aiou = j.at("best_val_aiou").get<double>();
    info.state.best_step = j.at("best_step").get<int>();
    info.frozen_hash = from_hex(j.at("frozen_hash").get<std::string>());
    info.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    info.config_snapshot = j.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw io::FormatError(io::FormatErrc::kBadJson, (dir / "manifest.json").string() + ": " + e.what());
  }
  return info;
}

CheckpointInfo load_checkpoint(const fs::path& dir, net::Model& model) {
  CheckpointInfo info = read_checkpoint_info(dir);
  json j;
  try {
    j = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw io::FormatError(io::FormatErrc::kBadJson, e.what());
  }
  std::map<std::string, Mat> params;
  try {
    for (const json& e : j.at("arrays")) {
      const std::string name = e.at("name").get<std::string>();
      const std::string kind = e.at("kind").get<std::string>();
      Mat value = read_entry(dir, e);
      if (kind == "params")
        params[name] = std::move(value);
      else if (kind == "adam_m")
        info.state.adam.m[name] = std::move(value);
      else if (kind == "adam_v")
        info.state.adam.v[name] = std::move(value);
      else
        throw io::FormatError(io::FormatErrc::kBadJson, "unknown array kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw io::FormatError(io::FormatErrc::kBadJson, (dir / "manifest.json").string() + ": " + e.what());
  }
  for (const ad::Parameter* p : model.parameters()) {
    const auto it = params.find(p->name);
    if (it == params.end()) throw io::FormatError(io::FormatErrc::kShapeMismatch, "checkpoint lacks " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw io::FormatError(io::FormatErrc::kShapeMismatch, "checkpoint shape mismatch for " + p->name);
  }
  if (params.size() != model.parameters().size())
    throw io::FormatError(io::FormatErrc::kShapeMismatch, "checkpoint has parameters the model lacks");
  for (ad::Parameter* p : model.parameters()) p->value = params.at(p->name);
  if (model.frozen_hash() != info.frozen_hash)
    throw io::FormatError(io::FormatErrc::kChecksum, "frozen parameter hash mismatch in " + dir.string());
  return info;
}

}  // namespace afford3d::train

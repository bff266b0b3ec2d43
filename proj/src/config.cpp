#include "afford3d/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "afford3d/dataio.hpp"

namespace afford3d {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& s : split_list(v)) out.push_back(parse_number<int>(key, s));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define A3D_FIELD(member, parse, show)                                                         \
  Field {                                                                                      \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse; },        \
        [](const RunConfig& c) { return show; }                                                \
  }

#define A3D_INT(member) A3D_FIELD(member, parse_number<int>(k, v), std::to_string(c.member))
#define A3D_DBL(member) A3D_FIELD(member, parse_number<double>(k, v), fmt(c.member))
#define A3D_BOOL(member) A3D_FIELD(member, parse_bool(k, v), std::string(c.member ? "true" : "false"))

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f{
      {"seed", A3D_FIELD(seed, parse_number<uint64_t>(k, v), std::to_string(c.seed))},
      {"model.preset", A3D_FIELD(preset, v, c.preset)},
      {"data.root", A3D_FIELD(data_root, v, c.data_root)},
      {"data.train_count", A3D_INT(data.train_count)},
      {"data.test_count", A3D_INT(data.test_count)},
      {"data.view", A3D_FIELD(data.view, io::view_from_string(v), io::to_string(c.data.view))},
      {"data.split", A3D_FIELD(data.split, io::split_from_string(v), io::to_string(c.data.split))},
      {"data.n_points", A3D_INT(data.n_points)},
      {"data.image_size", A3D_INT(data.image_size)},
      {"data.affordances", A3D_FIELD(data.affordances, split_list(v), join(c.data.affordances))},
      {"data.objects", A3D_FIELD(data.objects, split_list(v), join(c.data.objects))},
      {"data.shuffle_pairing", A3D_BOOL(data.shuffle_pairing)},
      {"data.partial_resolution", A3D_INT(data.partial_resolution)},
      {"data.partial_tolerance", A3D_DBL(data.partial_tolerance)},
      {"model.image_channels", A3D_FIELD(model.image_channels, parse_int_list(k, v), join(c.model.image_channels))},
      {"model.sa1_centers", A3D_INT(model.sa1_centers)},
      {"model.sa1_radius", A3D_DBL(model.sa1_radius)},
      {"model.sa1_k", A3D_INT(model.sa1_k)},
      {"model.sa1_mlp", A3D_FIELD(model.sa1_mlp, parse_int_list(k, v), join(c.model.sa1_mlp))},
      {"model.sa2_centers", A3D_INT(model.sa2_centers)},
      {"model.sa2_radius", A3D_DBL(model.sa2_radius)},
      {"model.sa2_k", A3D_INT(model.sa2_k)},
      {"model.sa2_mlp", A3D_FIELD(model.sa2_mlp, parse_int_list(k, v), join(c.model.sa2_mlp))},
      {"model.c_s", A3D_INT(model.c_s)},
      {"model.fuse_heads", A3D_INT(model.fuse_heads)},
      {"model.mlp_ratio", A3D_INT(model.mlp_ratio)},
      {"model.c_l", A3D_INT(model.c_l)},
      {"model.n_l", A3D_INT(model.n_l)},
      {"model.backbone_layers", A3D_INT(model.backbone_layers)},
      {"model.backbone_heads", A3D_INT(model.backbone_heads)},
      {"model.decoder_heads", A3D_INT(model.decoder_heads)},
      {"model.head_hidden", A3D_INT(model.head_hidden)},
      {"model.interp_k", A3D_INT(model.interp_k)},
      {"model.backbone_seed", A3D_FIELD(model.backbone_seed, parse_number<uint64_t>(k, v),
                                        std::to_string(c.model.backbone_seed))},
      {"train.learning_rate", A3D_DBL(train.learning_rate)},
      {"train.weight_decay", A3D_DBL(train.weight_decay)},
      {"train.warmup_steps", A3D_INT(train.warmup_steps)},
      {"train.epochs", A3D_INT(train.epochs)},
      {"train.batch_size", A3D_INT(train.batch_size)},
      {"train.pair_count", A3D_INT(train.pair_count)},
      {"train.max_steps", A3D_INT(train.max_steps)},
      {"train.val_fraction", A3D_DBL(train.val_fraction)},
      {"train.image_on", A3D_BOOL(train.image_on)},
      {"train.granularity", A3D_FIELD(train.granularity, synth::granularity_from_string(v),
                                      synth::to_string(c.train.granularity))},
      {"train.resume", A3D_BOOL(train.resume)},
      {"train.beta1", A3D_DBL(train.beta1)},
      {"train.beta2", A3D_DBL(train.beta2)},
      {"train.adam_eps", A3D_DBL(train.adam_eps)},
      {"loss.omega_f", A3D_DBL(loss.omega_f)},
      {"loss.omega_d", A3D_DBL(loss.omega_d)},
      {"loss.gamma", A3D_DBL(loss.gamma)},
      {"loss.alpha", A3D_DBL(loss.alpha)},
      {"loss.epsilon", A3D_DBL(loss.epsilon)},
      {"eval.predictor", A3D_FIELD(eval.predictor,
                                   v == "model"    ? Predictor::kModel
                                   : v == "oracle" ? Predictor::kOracle
                                   : v == "constant"
                                       ? Predictor::kConstant
                                       : throw ConfigError(k + ": expected model, oracle or constant"),
                                   to_string(c.eval.predictor))},
      {"eval.constant", A3D_DBL(eval.constant)},
      {"eval.subset", A3D_FIELD(eval.subset, v, c.eval.subset)},
      {"eval.checkpoint", A3D_FIELD(eval.checkpoint, v, c.eval.checkpoint)},
      {"eval.batch_size", A3D_INT(eval.batch_size)},
  };
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : fields())
    if (name == key) return &field;
  return nullptr;
}

}  // namespace

std::string to_string(Predictor p) {
  switch (p) {
    case Predictor::kModel:
      return "model";
    case Predictor::kOracle:
      return "oracle";
    case Predictor::kConstant:
      return "constant";
  }
  return "model";
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
  try {
    f->set(*this, key, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields()) out.push_back(name);
  return out;
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(*this) + "\n";
  return out;
}

void RunConfig::validate() {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  try {
    data.validate();
    loss.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  model.n_points = data.n_points;
  model.image_size = data.image_size;
  try {
    model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  need(train.learning_rate > 0.0, "train.learning_rate must be > 0");
  need(train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
  need(train.warmup_steps >= 0, "train.warmup_steps must be >= 0");
  need(train.epochs >= 1, "train.epochs must be >= 1");
  need(train.batch_size >= 1, "train.batch_size must be >= 1");
  need(train.pair_count >= 1, "train.pair_count must be >= 1");
  need(train.max_steps >= 0, "train.max_steps must be >= 0");
  need(train.val_fraction >= 0.0 && train.val_fraction < 1.0, "train.val_fraction must be in [0, 1)");
  need(train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 && train.beta2 < 1.0,
       "adam betas must be in [0, 1)");
  need(train.adam_eps > 0.0, "train.adam_eps must be > 0");
  need(eval.subset == "train" || eval.subset == "test", "eval.subset must be train or test");
  need(eval.batch_size >= 1, "eval.batch_size must be >= 1");
  need(eval.constant >= 0.0 && eval.constant <= 1.0, "eval.constant must be in [0, 1]");
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "default") {
    cfg.model = net::ModelConfig{};
    cfg.data.n_points = 2048;
    cfg.data.image_size = 64;
  } else if (name == "compact") {
    cfg.model = net::ModelConfig::compact();
  } else if (name == "tiny") {
    cfg.model = net::ModelConfig::tiny();
  } else {
    throw ConfigError("model.preset: expected default, compact or tiny, got '" + name + "'");
  }
  cfg.data.n_points = cfg.model.n_points;
  cfg.data.image_size = cfg.model.image_size;
  cfg.preset = name;
}

std::vector<std::pair<std::string, std::string>> parse_assignments(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, trim(t.substr(eq + 1)));
  }
  return out;
}

std::pair<std::string, std::string> parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
    throw ConfigError("override '" + assignment + "': expected key=value");
  return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
}

RunConfig config_from_assignments(std::vector<std::pair<std::string, std::string>> assignments) {
  RunConfig cfg;
  std::string preset;
  for (const auto& [k, v] : assignments) {
    if (find_field(k) == nullptr) throw ConfigError("unknown config key '" + k + "'");
    if (k == "model.preset") preset = v;
  }
  if (!preset.empty()) apply_preset(cfg, preset);
  for (const auto& [k, v] : assignments)
    if (k != "model.preset") cfg.set(k, v);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> all;
  if (!file.empty()) {
    std::string text;
    try {
      text = io::read_text(file);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config " + file.string());
    }
    all = parse_assignments(text);
  }
  for (const std::string& o : overrides) all.push_back(parse_override(o));
  return config_from_assignments(std::move(all));
}

}  // namespace afford3d

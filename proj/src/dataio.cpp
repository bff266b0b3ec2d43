#include "afford3d/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "afford3d/rng.hpp"
#include "json.hpp"

namespace afford3d::io {

using nlohmann::json;

namespace {

constexpr unsigned char kMagic[8] = {'A', 'G', 'P', 'L', 0x00, 0x01, 0x00, 0x00};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(p[i]) << (8 * i);
  return u;
}

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

}  // namespace

const char* errc_name(FormatErrc c) {
  switch (c) {
    case FormatErrc::kIo:
      return "io";
    case FormatErrc::kBadMagic:
      return "bad_magic";
    case FormatErrc::kBadHeader:
      return "bad_header";
    case FormatErrc::kBadDType:
      return "bad_dtype";
    case FormatErrc::kTooLarge:
      return "too_large";
    case FormatErrc::kTruncated:
      return "truncated";
    case FormatErrc::kTrailingBytes:
      return "trailing_bytes";
    case FormatErrc::kShapeMismatch:
      return "shape_mismatch";
    case FormatErrc::kBadJson:
      return "bad_json";
    case FormatErrc::kChecksum:
      return "checksum";
  }
  return "unknown";
}

FormatError::FormatError(FormatErrc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

uint64_t Array::element_count() const {
  uint64_t n = 1;
  for (uint64_t d : shape) n *= d;
  return n;
}

std::vector<unsigned char> encode_array(const Array& a) {
  if (a.element_count() != a.data.size()) throw FormatError(FormatErrc::kShapeMismatch, "shape/data size mismatch");
  std::vector<unsigned char> out(kMagic, kMagic + 8);
  out.reserve(kHeaderBytes + 8 * a.shape.size() + a.data.size() * dtype_size(a.dtype));
  put_le(out, static_cast<uint32_t>(a.shape.size()));
  put_le(out, static_cast<uint32_t>(a.dtype));
  for (uint64_t d : a.shape) put_le(out, d);
  if (a.dtype == DType::kF32) {
    for (double v : a.data) put_le(out, static_cast<float>(v));
  } else {
    for (double v : a.data) put_le(out, v);
  }
  return out;
}

Array decode_array(const std::vector<unsigned char>& bytes, uint64_t max_bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError(FormatErrc::kTruncated, "file shorter than header");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError(FormatErrc::kBadMagic, "magic mismatch");
  const auto ndim = get_le<uint32_t>(bytes.data() + 8);
  const auto dtype = get_le<uint32_t>(bytes.data() + 12);
  if (dtype != 1 && dtype != 2) throw FormatError(FormatErrc::kBadDType, "unknown dtype " + std::to_string(dtype));
  if (ndim == 0 || ndim > 8) throw FormatError(FormatErrc::kBadHeader, "bad ndim " + std::to_string(ndim));
  if (bytes.size() < kHeaderBytes + 8ull * ndim) throw FormatError(FormatErrc::kTruncated, "truncated shape");
  Array a;
  a.dtype = static_cast<DType>(dtype);
  uint64_t count = 1;
  const uint64_t elem = dtype_size(a.dtype);
  for (uint32_t i = 0; i < ndim; ++i) {
    const auto d = get_le<uint64_t>(bytes.data() + kHeaderBytes + 8 * i);
    a.shape.push_back(d);
    if (d != 0 && count > max_bytes / elem / d) throw FormatError(FormatErrc::kTooLarge, "array exceeds size cap");
    count *= d;
  }
  if (count * elem > max_bytes) throw FormatError(FormatErrc::kTooLarge, "array exceeds size cap");
  const std::size_t offset = kHeaderBytes + 8ull * ndim;
  const std::size_t need = offset + count * elem;
  if (bytes.size() < need) throw FormatError(FormatErrc::kTruncated, "payload truncated");
  if (bytes.size() > need) throw FormatError(FormatErrc::kTrailingBytes, "unexpected trailing bytes");
  a.data.resize(count);
  const unsigned char* p = bytes.data() + offset;
  for (uint64_t i = 0; i < count; ++i) {
    if (a.dtype == DType::kF32)
      a.data[i] = std::bit_cast<float>(get_le<uint32_t>(p + 4 * i));
    else
      a.data[i] = std::bit_cast<double>(get_le<uint64_t>(p + 8 * i));
  }
  return a;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::kIo, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrc::kIo, "short write to " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_array(const fs::path& path, const Array& a) { write_bytes(path, encode_array(a)); }

Array read_array(const fs::path& path, uint64_t max_bytes) {
  try {
    return decode_array(read_bytes(path), max_bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.code(), path.string() + ": " + e.what());
  }
}

Array to_array(const Mat& m, DType dtype) {
  Array a;
  a.shape = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
  a.dtype = dtype;
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

Mat to_mat(const Array& a) {
  if (a.shape.size() != 2) throw FormatError(FormatErrc::kShapeMismatch, "expected a 2-D array");
  Mat m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

std::string to_string(View v) {
  switch (v) {
    case View::kFull:
      return "full";
    case View::kPartial:
      return "partial";
    case View::kRotation:
      return "rotation";
  }
  return "full";
}

View view_from_string(const std::string& s) {
  if (s == "full") return View::kFull;
  if (s == "partial") return View::kPartial;
  if (s == "rotation") return View::kRotation;
  throw ValidationError("unknown view: " + s);
}

std::string to_string(SplitMode s) { return s == SplitMode::kSeen ? "seen" : "unseen"; }

SplitMode split_from_string(const std::string& s) {
  if (s == "seen") return SplitMode::kSeen;
  if (s == "unseen") return SplitMode::kUnseen;
  throw ValidationError("unknown split: " + s);
}

std::vector<const SampleRecord*> Manifest::subset(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : samples)
    if (r.subset == name) out.push_back(&r);
  return out;
}

int Manifest::count(const std::string& name) const { return static_cast<int>(subset(name).size()); }

SampleRecord write_sample(const fs::path& root, const Sample& s) {
  SampleRecord rec{s.sample_id,
                   s.subset,
                   s.object_class,
                   s.affordance_index,
                   s.seed,
                   s.subset + "/pc/" + s.sample_id + ".bin",
                   s.subset + "/img/" + s.sample_id + ".bin",
                   s.subset + "/label/" + s.sample_id + ".bin",
                   s.subset + "/meta/" + s.sample_id + ".json"};
  write_array(root / rec.pc_file, to_array(Mat(s.cloud.xyz), DType::kF32));
  Array img = to_array(s.image.pixels, DType::kF32);
  img.shape = {3, static_cast<uint64_t>(s.image.size), static_cast<uint64_t>(s.image.size)};
  write_array(root / rec.img_file, img);
  write_array(root / rec.label_file, to_array(s.annotation, DType::kF32));

  json meta;
  meta["sample_id"] = s.sample_id;
  meta["subset"] = s.subset;
  meta["object_class"] = s.object_class;
  meta["affordance_index"] = s.affordance_index;
  meta["view"] = to_string(s.view);
  meta["seed"] = s.seed;
  meta["instruction"] = {{"text", s.instruction.text},
                         {"granularity", synth::to_string(s.instruction.granularity)},
                         {"verb", s.instruction.verb},
                         {"object_noun", s.instruction.object_noun}};
  if (s.rotation) {
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(i * 3 + j)] = (*s.rotation)(i, j);
    meta["rotation"] = r;
  } else {
    meta["rotation"] = nullptr;
  }
  write_text(root / rec.meta_file, meta.dump(2) + "\n");
  return rec;
}

Sample read_sample(const fs::path& root, const SampleRecord& rec, const Manifest& m) {
  Sample s;
  s.sample_id = rec.sample_id;
  s.subset = rec.subset;
  s.object_class = rec.object_class;
  s.affordance_index = rec.affordance_index;
  s.seed = rec.seed;

  const Array pc = read_array(root / rec.pc_file);
  if (pc.shape.size() != 2 || pc.shape[1] != 3 || pc.shape[0] != static_cast<uint64_t>(m.n_points))
    throw FormatError(FormatErrc::kShapeMismatch, rec.pc_file + ": expected (N, 3)");
  s.cloud.xyz = to_mat(pc);

  const Array img = read_array(root / rec.img_file);
  const auto sz = static_cast<uint64_t>(m.image_size);
  if (img.shape != std::vector<uint64_t>{3, sz, sz})
    throw FormatError(FormatErrc::kShapeMismatch, rec.img_file + ": expected (3, H, W)");
  s.image.size = m.image_size;
  s.image.pixels = Mat(3, static_cast<Eigen::Index>(sz * sz));
  std::copy(img.data.begin(), img.data.end(), s.image.pixels.data());

  const Array label = read_array(root / rec.label_file);
  if (label.shape.size() != 2 || label.shape[0] != static_cast<uint64_t>(m.n_points) ||
      label.shape[1] != m.affordances.size())
    throw FormatError(FormatErrc::kShapeMismatch, rec.label_file + ": expected (N, K)");
  s.annotation = to_mat(label);
  if (rec.affordance_index < 0 || rec.affordance_index >= s.annotation.cols())
    throw FormatError(FormatErrc::kShapeMismatch, rec.sample_id + ": affordance index out of range");

  json meta;
  try {
    meta = json::parse(read_text(root / rec.meta_file));
    s.view = view_from_string(meta.at("view").get<std::string>());
    const json& ins = meta.at("instruction");
    s.instruction.text = ins.at("text").get<std::string>();
    s.instruction.granularity = synth::granularity_from_string(ins.at("granularity").get<std::string>());
    s.instruction.verb = ins.at("verb").get<std::string>();
    s.instruction.object_noun = ins.at("object_noun").get<std::string>();
    if (!meta.at("rotation").is_null()) {
      const auto r = meta.at("rotation").get<std::vector<double>>();
      if (r.size() != 9) throw FormatError(FormatErrc::kBadJson, "rotation must have 9 entries");
      Eigen::Matrix3d rot;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rot(i, j) = r[static_cast<std::size_t>(i * 3 + j)];
      s.rotation = rot;
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadJson, rec.meta_file + ": " + e.what());
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const FormatError*>(&e)) throw;
    throw FormatError(FormatErrc::kBadJson, rec.meta_file + ": " + e.what());
  }
  return s;
}

void write_manifest(const fs::path& root, const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["split"] = to_string(m.split);
  j["view"] = to_string(m.view);
  j["n_points"] = m.n_points;
  j["image_size"] = m.image_size;
  j["affordances"] = m.affordances;
  j["objects"] = m.objects;
  j["counts"] = {{"train", m.count("train")}, {"test", m.count("test")}};
  json samples = json::array();
  for (const SampleRecord& r : m.samples) {
    samples.push_back({{"sample_id", r.sample_id},
                       {"subset", r.subset},
                       {"object_class", r.object_class},
                       {"affordance_index", r.affordance_index},
                       {"seed", r.seed},
                       {"files", {{"pc", r.pc_file}, {"img", r.img_file}, {"label", r.label_file}, {"meta", r.meta_file}}}});
  }
  j["samples"] = samples;
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& root) {
  Manifest m;
  try {
    const json j = json::parse(read_text(root / "manifest.json"));
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw FormatError(FormatErrc::kBadHeader, "unsupported manifest version");
    m.split = split_from_string(j.at("split").get<std::string>());
    m.view = view_from_string(j.at("view").get<std::string>());
    m.n_points = j.at("n_points").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.affordances = j.at("affordances").get<std::vector<std::string>>();
    m.objects = j.at("objects").get<std::vector<std::string>>();
    for (const json& s : j.at("samples")) {
      SampleRecord r;
      r.sample_id = s.at("sample_id").get<std::string>();
      r.subset = s.at("subset").get<std::string>();
      r.object_class = s.at("object_class").get<std::string>();
      r.affordance_index = s.at("affordance_index").get<int>();
      r.seed = s.at("seed").get<uint64_t>();
      const json& f = s.at("files");
      r.pc_file = f.at("pc").get<std::string>();
      r.img_file = f.at("img").get<std::string>();
      r.label_file = f.at("label").get<std::string>();
      r.meta_file = f.at("meta").get<std::string>();
      m.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadJson, "manifest.json: " + std::string(e.what()));
  } catch (const ValidationError& e) {
    throw FormatError(FormatErrc::kBadJson, "manifest.json: " + std::string(e.what()));
  }
  return m;
}

void validate_manifest(const fs::path& root, const Manifest& m, int pair_count) {
  if (m.samples.empty()) throw ValidationError("manifest has no samples");
  const int k = static_cast<int>(m.affordances.size());
  std::set<int> train_aff, test_aff;
  std::set<std::string> train_obj, test_obj;
  std::set<std::string> ids;
  std::map<std::pair<std::string, int>, int> train_groups;
  for (const SampleRecord& r : m.samples) {
    if (!ids.insert(r.subset + "/" + r.sample_id).second) throw ValidationError("duplicate sample id " + r.sample_id);
    if (r.subset != "train" && r.subset != "test") throw ValidationError("unknown subset " + r.subset);
    if (r.affordance_index < 0 || r.affordance_index >= k)
      throw ValidationError(r.sample_id + ": affordance index out of range");
    if (std::find(m.objects.begin(), m.objects.end(), r.object_class) == m.objects.end())
      throw ValidationError(r.sample_id + ": object class not in vocabulary");
    for (const std::string& f : {r.pc_file, r.img_file, r.label_file, r.meta_file})
      if (!fs::exists(root / f)) throw ValidationError("missing file " + f);
    if (r.subset == "train") {
      train_aff.insert(r.affordance_index);
      train_obj.insert(r.object_class);
      ++train_groups[{r.object_class, r.affordance_index}];
    } else {
      test_aff.insert(r.affordance_index);
      test_obj.insert(r.object_class);
    }
  }
  if (m.split == SplitMode::kUnseen) {
    for (int a : test_aff)
      if (train_aff.count(a)) throw ValidationError("unseen split: affordance '" + m.affordances[static_cast<std::size_t>(a)] +
                                                    "' appears in both train and test");
  } else {
    for (int a : test_aff)
      if (!train_aff.count(a)) throw ValidationError("seen split: test affordance missing from train");
    for (const std::string& o : test_obj)
      if (!train_obj.count(o)) throw ValidationError("seen split: test object missing from train");
  }
  if (pair_count > 0) {
    for (const auto& [key, n] : train_groups)
      if (n < pair_count)
        throw ValidationError("pairing: group (" + key.first + ", " + m.affordances[static_cast<std::size_t>(key.second)] +
                              ") has " + std::to_string(n) + " clouds, need " + std::to_string(pair_count));
  }
}

PairingSampler::PairingSampler(std::vector<Key> keys, PairingMode mode, int pair_count, uint64_t seed)
    : keys_(std::move(keys)), mode_(mode), pair_count_(pair_count), seed_(seed) {
  if (keys_.empty()) throw ValidationError("pairing: empty pool");
  if (pair_count_ < 1) throw ValidationError("pairing: pair count must be >= 1");
  if (mode_ == PairingMode::kEval && pair_count_ != 1) throw ValidationError("pairing: eval mode pairs exactly one cloud");
  std::map<std::pair<std::string, int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < keys_.size(); ++i)
    groups[{keys_[i].object_class, keys_[i].affordance_index}].push_back(static_cast<int>(i));
  group_of_.resize(keys_.size());
  for (const auto& [key, members] : groups) {
    if (mode_ == PairingMode::kTrain && static_cast<int>(members.size()) < pair_count_)
      throw ValidationError("pairing: group (" + key.first + ", " + std::to_string(key.second) + ") has " +
                            std::to_string(members.size()) + " clouds, need " + std::to_string(pair_count_));
    for (int i : members) group_of_[static_cast<std::size_t>(i)] = members;
  }
}

std::vector<PairingItem> PairingSampler::epoch(int epoch_index) const {
  std::vector<int> order(keys_.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PairingItem> items;
  items.reserve(order.size());
  if (mode_ == PairingMode::kEval) {
    for (int i : order) items.push_back({i, {i}});
    return items;
  }
  Rng perm(derive_seed(seed_, 0x5045524dull, static_cast<uint64_t>(epoch_index)));
  perm.shuffle(order.begin(), order.end());
  for (int i : order) {
    std::vector<int> pool = group_of_[static_cast<std::size_t>(i)];
    Rng draw(derive_seed(seed_, 0x44524157ull + static_cast<uint64_t>(epoch_index), static_cast<uint64_t>(i)));
    for (int j = 0; j < pair_count_; ++j) {
      const auto pick = j + static_cast<int>(draw.below(pool.size() - static_cast<std::size_t>(j)));
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick)]);
    }
    pool.resize(static_cast<std::size_t>(pair_count_));
    items.push_back({i, std::move(pool)});
  }
  return items;
}

}  // namespace afford3d::io

#pragma once

// Binary array container, per-sample files, dataset manifests and the online
// image/point-cloud pairing sampler.
//
// Array file layout (all integers little-endian):
//   bytes 0..7    magic "AGPL\0\x01\0\0"
//   bytes 8..11   uint32 ndim
//   bytes 12..15  uint32 dtype (1 = float32, 2 = float64)
//   next 8*ndim   uint64 dims
//   payload       row-major elements
//
// Dataset layout:
//   root/manifest.json
//   root/{train,test}/{pc,img,label}/<sample_id>.bin
//   root/{train,test}/meta/<sample_id>.json

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "afford3d/autograd.hpp"
#include "afford3d/geom3d.hpp"
#include "afford3d/synthgen.hpp"

namespace afford3d::io {

using ad::Mat;
namespace fs = std::filesystem;

enum class FormatErrc {
  kIo = 1,
  kBadMagic,
  kBadHeader,
  kBadDType,
  kTooLarge,
  kTruncated,
  kTrailingBytes,
  kShapeMismatch,
  kBadJson,
  kChecksum,
};

const char* errc_name(FormatErrc c);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& what);
  FormatErrc code() const { return code_; }

 private:
  FormatErrc code_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : uint32_t { kF32 = 1, kF64 = 2 };

inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr uint64_t kDefaultMaxArrayBytes = 16ull << 20;

struct Array {
  std::vector<uint64_t> shape;
  DType dtype = DType::kF32;
  std::vector<double> data;

  uint64_t element_count() const;
};

std::vector<unsigned char> encode_array(const Array& a);
Array decode_array(const std::vector<unsigned char>& bytes, uint64_t max_bytes = kDefaultMaxArrayBytes);
void write_array(const fs::path& path, const Array& a);
Array read_array(const fs::path& path, uint64_t max_bytes = kDefaultMaxArrayBytes);

// 2-D helpers.
Array to_array(const Mat& m, DType dtype);
Mat to_mat(const Array& a);

std::vector<unsigned char> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

// ---- samples ----

enum class View { kFull, kPartial, kRotation };
std::string to_string(View v);
View view_from_string(const std::string& s);

enum class SplitMode { kSeen, kUnseen };
std::string to_string(SplitMode s);
SplitMode split_from_string(const std::string& s);

struct Sample {
  std::string sample_id;
  std::string subset;  // "train" or "test"
  synth::SyntheticImage image;
  geom::PointCloud cloud;
  Mat annotation;  // (N, K)
  synth::Instruction instruction;  // Full granularity
  int affordance_index = 0;
  std::string object_class;
  View view = View::kFull;
  std::optional<Eigen::Matrix3d> rotation;
  uint64_t seed = 0;

  // (N, 1) column of the annotation for the depicted affordance.
  Mat target() const { return annotation.col(affordance_index); }
};

struct SampleRecord {
  std::string sample_id;
  std::string subset;
  std::string object_class;
  int affordance_index = 0;
  uint64_t seed = 0;
  std::string pc_file;
  std::string img_file;
  std::string label_file;
  std::string meta_file;
};

struct Manifest {
  int format_version = 1;
  SplitMode split = SplitMode::kSeen;
  View view = View::kFull;
  int n_points = 2048;
  int image_size = 64;
  std::vector<std::string> affordances;
  std::vector<std::string> objects;
  std::vector<SampleRecord> samples;

  std::vector<const SampleRecord*> subset(const std::string& name) const;
  int count(const std::string& name) const;
};

// Writes the three arrays and the JSON sidecar; returns the manifest record.
SampleRecord write_sample(const fs::path& root, const Sample& s);
Sample read_sample(const fs::path& root, const SampleRecord& rec, const Manifest& m);

void write_manifest(const fs::path& root, const Manifest& m);
Manifest read_manifest(const fs::path& root);

// Checks referenced files, vocabularies and split consistency. With
// pair_count > 0 also checks that every (class, affordance) group among the
// training samples has at least pair_count members.
void validate_manifest(const fs::path& root, const Manifest& m, int pair_count = 0);

// ---- pairing ----

enum class PairingMode { kTrain, kEval };

// One image (with its instruction) and the clouds paired to it. Indices refer
// to the sampler's pool.
struct PairingItem {
  int image = 0;
  std::vector<int> clouds;
};

class PairingSampler {
 public:
  struct Key {
    std::string object_class;
    int affordance_index = 0;
  };

  // keys[i] describes pool entry i.
  PairingSampler(std::vector<Key> keys, PairingMode mode, int pair_count, uint64_t seed);

  // Train mode: seeded permutation of images, each paired with pair_count
  // distinct clouds of the same class and affordance. Eval mode: identity
  // order, every image paired with its own cloud.
  std::vector<PairingItem> epoch(int epoch_index) const;
  std::size_t size() const { return keys_.size(); }
  int pair_count() const { return pair_count_; }

 private:
  std::vector<Key> keys_;
  PairingMode mode_;
  int pair_count_;
  uint64_t seed_;
  std::vector<std::vector<int>> group_of_;  // pool index -> members of its group
};

}  // namespace afford3d::io

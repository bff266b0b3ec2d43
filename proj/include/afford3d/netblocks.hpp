#pragma once

// Affordance grounding network: image encoder, point encoder, fusion,
// adapter, frozen language backbone, cross-attention decoder and
// segmentation head.
//
// Layout conventions (per sample, batch handled by the caller):
//   F2D  (C_I, h*w)      channel-major feature map
//   F3D  (N_P, C_P)      point tokens, one row per stage-2 center
//   FS   (N_S, C_S)      image tokens first, then point tokens
//   FSP  (N_S, C_L)
//   FT   (N_L, C_L)
//   FA   (N_S, C_S)
//   O    (1, N)

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afford3d/autograd.hpp"
#include "afford3d/geom3d.hpp"
#include "afford3d/synthgen.hpp"

namespace afford3d::net {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int image_size = 64;
  int n_points = 2048;
  // Output channels of the four image stages; the first three halve the
  // resolution. The last entry is C_I.
  std::vector<int> image_channels{16, 32, 64, 64};

  int sa1_centers = 512;
  double sa1_radius = 0.2;
  int sa1_k = 32;
  std::vector<int> sa1_mlp{64, 128};
  int sa2_centers = 128;  // N_P
  double sa2_radius = 0.4;
  int sa2_k = 32;
  std::vector<int> sa2_mlp{128, 256};  // last entry is C_P

  int c_s = 256;
  int fuse_heads = 4;
  int mlp_ratio = 4;
  int c_l = 256;
  int n_l = 24;
  int backbone_layers = 4;
  int backbone_heads = 8;
  int decoder_heads = 4;
  int head_hidden = 128;
  int interp_k = 3;
  // Seed of the frozen backbone and text embeddings; independent of the
  // trainable initialization so every run shares the same backbone.
  uint64_t backbone_seed = 0x11a7a5eedull;

  int c_i() const { return image_channels.back(); }
  int c_p() const { return sa2_mlp.back(); }
  int feature_side() const { return image_size / 8; }
  int n_image_tokens() const { return feature_side() * feature_side(); }
  int n_s() const { return n_image_tokens() + sa2_centers; }

  void validate() const;

  // Reduced widths for CPU-bound experiments and finite-difference checks.
  static ModelConfig compact();
  static ModelConfig tiny();
};

// Lowercase word-level tokenizer with a fixed vocabulary.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;

  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> words);
  // Vocabulary of all words in `texts`, sorted.
  static Tokenizer build(std::span<const std::string> texts);
  // Lowercased alphanumeric runs; everything else separates words.
  static std::vector<std::string> split_words(const std::string& text);

  // [BOS, words..., PAD...] truncated or padded to n_l.
  std::vector<int> encode(const std::string& text, int n_l) const;
  int id(const std::string& word) const;
  int vocab_size() const { return static_cast<int>(words_.size()) + 3; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// Parameter-independent sampling and grouping of one cloud. Pure function
// of the coordinates.
struct PointGeometry {
  geom::PointCloud dense;
  std::vector<int> sa1_index;        // into dense
  std::vector<int> sa1_groups;       // flattened (S1, k1) into dense
  Mat sa1_rel;                       // (S1*k1, 3), offsets / radius
  geom::PointCloud sa1_xyz;
  std::vector<int> sa2_index;        // into sa1 centers
  std::vector<int> sa2_groups;       // flattened (S2, k2) into sa1 centers
  Mat sa2_rel;                       // (S2*k2, 3)
  geom::PointCloud sa2_xyz;          // stage coordinates kept for the head
  geom::InterpolationWeights interp; // dense <- sa2 centers
};

PointGeometry build_point_geometry(const geom::PointCloud& pc, const ModelConfig& cfg);

// One image/instruction with the clouds paired to it.
struct PairInput {
  const synth::SyntheticImage* image = nullptr;
  std::vector<int> tokens;
  std::vector<const PointGeometry*> clouds;
};

struct ForwardOptions {
  bool training = false;
  bool image_on = true;
  bool capture = false;
};

// Values of the named intermediates for one (image, cloud) pair.
struct FeaturePack {
  Mat f2d, f3d, fs, fsp, ft, semantic, instructional, fa, o;
  std::vector<Mat> fuse_attention;      // per head, (N_S, N_S)
  std::vector<Mat> backbone_attention;  // per layer and head
  std::vector<Mat> decoder_attention;   // per head, (N_S, N_L)
};

struct ForwardResult {
  // Heatmaps in (1, N), ordered cloud-major: pair (i, p) at p * B + i.
  std::vector<Var> heatmaps;
  std::vector<FeaturePack> features;  // same order, filled when capturing
};

// Parameter blocks. The backbone and text embeddings are frozen.
inline constexpr const char* kBlocks[] = {"img", "pts", "fuse", "adapt", "text", "backbone", "dec", "head"};

class Model {
 public:
  Model(ModelConfig cfg, int vocab_size, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

  ForwardResult forward(Tape& tape, std::span<const PairInput> batch, const ForwardOptions& opt);

  // ---- individual blocks (per sample) ----
  Var encode_2d(Tape& tape, const synth::SyntheticImage& image);
  Var encode_3d(Tape& tape, const PointGeometry& g);
  Var fuse(Tape& tape, Var f2d, Var f3d, const PointGeometry& g, std::vector<Mat>* attention);
  Var null_image(Tape& tape);
  Var adapt(Tape& tape, Var fs);
  Var embed_text(Tape& tape, std::span<const int> tokens);
  Var backbone(Tape& tape, Var fsp, Var ft, std::vector<Mat>* attention);
  std::pair<Var, Var> split_hidden(Var hidden) const;
  Var decode(Tape& tape, Var fs, Var instructional, Var semantic, std::vector<Mat>* attention);
  // FA of every pair -> heatmaps; batch norm spans all pairs.
  std::vector<Var> head(Tape& tape, std::span<const Var> fa, std::span<const PointGeometry* const> geoms,
                        bool training);

  // ---- parameters ----
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  // FNV-1a over names and raw bytes of the frozen parameters.
  uint64_t frozen_hash() const;
  uint64_t parameter_count(bool trainable_only) const;
  void zero_grad();

 private:
  Parameter& add(const std::string& name, Mat value, bool trainable);
  Parameter& add_dense(const std::string& name, int in, int out, bool trainable, uint64_t seed, bool bias = true,
                       double gain = 1.0);
  Parameter& add_norm(const std::string& name, int width, bool trainable);
  Var p(Tape& tape, const std::string& name);
  Var dense(Tape& tape, Var x, const std::string& name, bool bias = true);
  Var norm(Tape& tape, Var x, const std::string& name);
  Var attention(Tape& tape, Var q, Var k, Var v, int heads, std::vector<Mat>* capture);
  Var self_attention_block(Tape& tape, Var x, const std::string& prefix, int heads, std::vector<Mat>* capture);
  Var mlp_block(Tape& tape, Var x, const std::string& norm_name, const std::string& prefix);

  ModelConfig cfg_;
  int vocab_size_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
  // Tape-local parameter leaves, rebuilt per tape.
  uint64_t leaf_tape_ = 0;
  std::map<std::string, Var> leaves_;
};

}  // namespace afford3d::net

#include "afford3d/netblocks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "afford3d/rng.hpp"

namespace afford3d::net {

namespace {

bool is_frozen_block(const std::string& name) {
  const std::string block = name.substr(0, name.find('.'));
  return block == "text" || block == "backbone";
}

Mat normal_mat(int rows, int cols, double stddev, uint64_t seed) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw ModelError(std::string(what) + ": non-finite input");
}

}  // namespace

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ModelError("model config: " + what);
  };
  need(image_size >= 8 && image_size % 8 == 0, "image_size must be a positive multiple of 8");
  need(image_channels.size() == 4, "image_channels needs four stages");
  for (int c : image_channels) need(c > 0, "image channel widths must be positive");
  need(!sa1_mlp.empty() && !sa2_mlp.empty(), "set-abstraction MLPs must be non-empty");
  for (int c : sa1_mlp) need(c > 0, "sa1 widths must be positive");
  for (int c : sa2_mlp) need(c > 0, "sa2 widths must be positive");
  need(sa1_centers >= 1 && sa1_centers <= n_points, "need 1 <= sa1_centers <= n_points");
  need(sa2_centers >= 1 && sa2_centers <= sa1_centers, "need 1 <= sa2_centers <= sa1_centers");
  need(sa1_k >= 1 && sa2_k >= 1, "group sizes must be positive");
  need(sa1_radius > 0 && sa2_radius > 0, "radii must be positive");
  need(interp_k >= 1 && interp_k <= sa2_centers, "need 1 <= interp_k <= sa2_centers");
  need(c_s > 0 && c_l > 0 && n_l >= 1 && head_hidden > 0 && mlp_ratio > 0, "widths must be positive");
  need(fuse_heads > 0 && c_s % fuse_heads == 0, "fuse_heads must divide c_s");
  need(decoder_heads > 0 && c_s % decoder_heads == 0, "decoder_heads must divide c_s");
  need(backbone_heads > 0 && c_l % backbone_heads == 0, "backbone_heads must divide c_l");
  need(backbone_layers >= 0, "backbone_layers must be >= 0");
}

ModelConfig ModelConfig::compact() {
  ModelConfig c;
  c.image_size = 32;
  c.n_points = 512;
  c.image_channels = {8, 16, 16, 16};
  c.sa1_centers = 128;
  c.sa1_radius = 0.3;
  c.sa1_k = 16;
  c.sa1_mlp = {32, 32};
  c.sa2_centers = 32;
  c.sa2_radius = 0.6;
  c.sa2_k = 16;
  c.sa2_mlp = {32, 64};
  c.c_s = 32;
  c.fuse_heads = 2;
  c.mlp_ratio = 2;
  c.c_l = 32;
  c.n_l = 12;
  c.backbone_layers = 2;
  c.backbone_heads = 4;
  c.decoder_heads = 2;
  c.head_hidden = 32;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_size = 16;
  c.n_points = 96;
  c.image_channels = {3, 4, 4, 4};
  c.sa1_centers = 24;
  c.sa1_radius = 0.5;
  c.sa1_k = 6;
  c.sa1_mlp = {6, 8};
  c.sa2_centers = 8;
  c.sa2_radius = 0.9;
  c.sa2_k = 4;
  c.sa2_mlp = {8, 8};
  c.c_s = 32;
  c.fuse_heads = 2;
  c.mlp_ratio = 2;
  c.c_l = 32;
  c.n_l = 6;
  c.backbone_layers = 2;
  c.backbone_heads = 2;
  c.decoder_heads = 2;
  c.head_hidden = 6;
  return c;
}

// ---------------------------------------------------------------------------
// tokenizer

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i) + 3;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
  std::vector<std::string> words;
  for (const std::string& t : texts)
    for (std::string& w : split_words(t)) words.push_back(std::move(w));
  return Tokenizer(std::move(words));
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

int Tokenizer::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(const std::string& text, int n_l) const {
  std::vector<int> ids(static_cast<std::size_t>(n_l), kPad);
  if (n_l < 1) return ids;
  ids[0] = kBos;
  std::size_t pos = 1;
  for (const std::string& w : split_words(text)) {
    if (pos >= ids.size()) break;
    ids[pos++] = id(w);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// point geometry

PointGeometry build_point_geometry(const geom::PointCloud& pc, const ModelConfig& cfg) {
  if (pc.size() != cfg.n_points)
    throw ModelError("point geometry: expected " + std::to_string(cfg.n_points) + " points, got " +
                     std::to_string(pc.size()));
  check_finite(pc.xyz, "encode_3d");
  PointGeometry g;
  g.dense = pc;

  g.sa1_index = geom::farthest_point_sample_from(pc, cfg.sa1_centers, geom::coordinate_hash_start(pc, 1));
  const ad::IndexMat groups1 = geom::ball_query(pc, g.sa1_index, cfg.sa1_radius, cfg.sa1_k);
  g.sa1_xyz = geom::gather(pc, g.sa1_index);
  g.sa1_groups.assign(groups1.data(), groups1.data() + groups1.size());
  g.sa1_rel.resize(groups1.size(), 3);
  for (Eigen::Index s = 0; s < groups1.rows(); ++s)
    for (Eigen::Index j = 0; j < groups1.cols(); ++j)
      g.sa1_rel.row(s * groups1.cols() + j) = (pc.xyz.row(groups1(s, j)) - g.sa1_xyz.xyz.row(s)) / cfg.sa1_radius;

  g.sa2_index = geom::farthest_point_sample_from(g.sa1_xyz, cfg.sa2_centers, geom::coordinate_hash_start(g.sa1_xyz, 2));
  const ad::IndexMat groups2 = geom::ball_query(g.sa1_xyz, g.sa2_index, cfg.sa2_radius, cfg.sa2_k);
  g.sa2_xyz = geom::gather(g.sa1_xyz, g.sa2_index);
  g.sa2_groups.assign(groups2.data(), groups2.data() + groups2.size());
  g.sa2_rel.resize(groups2.size(), 3);
  for (Eigen::Index s = 0; s < groups2.rows(); ++s)
    for (Eigen::Index j = 0; j < groups2.cols(); ++j)
      g.sa2_rel.row(s * groups2.cols() + j) =
          (g.sa1_xyz.xyz.row(groups2(s, j)) - g.sa2_xyz.xyz.row(s)) / cfg.sa2_radius;

  g.interp = geom::interpolation_weights(pc, g.sa2_xyz, cfg.interp_k);
  return g;
}

// ---------------------------------------------------------------------------
// model construction

Parameter& Model::add(const std::string& name, Mat value, bool trainable) {
  if (by_name_.count(name)) throw ModelError("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(value);
  p->trainable = trainable;
  p->zero_grad();
  by_name_[name] = p.get();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& Model::add_dense(const std::string& name, int in, int out, bool trainable, uint64_t seed, bool bias,
                            double gain) {
  Parameter& w =
      add(name + ".w", normal_mat(in, out, gain / std::sqrt(in), derive_seed(seed, fnv1a64(name))), trainable);
  if (bias) add(name + ".b", Mat::Zero(1, out), trainable);
  return w;
}

Parameter& Model::add_norm(const std::string& name, int width, bool trainable) {
  Parameter& g = add(name + ".g", Mat::Ones(1, width), trainable);
  add(name + ".b", Mat::Zero(1, width), trainable);
  return g;
}

// Encoder layers feed GELUs: He-scaled so features keep unit order.
constexpr double kEncoderGain = 1.4142135623730951;
constexpr double kImagePosStd = 0.5;

Model::Model(ModelConfig cfg, int vocab_size, uint64_t seed) : cfg_(std::move(cfg)), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size_ < 3) throw ModelError("vocabulary must include the special tokens");
  const uint64_t frozen = cfg_.backbone_seed;

  // image encoder
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    const int out = cfg_.image_channels[static_cast<std::size_t>(s)];
    const std::string pre = "img.s" + std::to_string(s);
    for (const auto& [name, cin, k] : {std::tuple{pre + ".conv1", in, 3}, std::tuple{pre + ".conv2", out, 3},
                                       std::tuple{pre + ".skip", in, 1}}) {
      add(name + ".w", normal_mat(out, cin * k * k, kEncoderGain / std::sqrt(cin * k * k), derive_seed(seed, fnv1a64(name))),
          true);
      add(name + ".b", Mat::Zero(1, out), true);
    }
    in = out;
  }
  add("img.null", Mat::Zero(1, cfg_.c_i()), true);

  // point encoder
  in = 3;
  for (std::size_t l = 0; l < cfg_.sa1_mlp.size(); ++l) {
    add_dense("pts.sa1.l" + std::to_string(l), in, cfg_.sa1_mlp[l], true, seed, true, kEncoderGain);
    in = cfg_.sa1_mlp[l];
  }
  in = 3 + cfg_.sa1_mlp.back();
  for (std::size_t l = 0; l < cfg_.sa2_mlp.size(); ++l) {
    add_dense("pts.sa2.l" + std::to_string(l), in, cfg_.sa2_mlp[l], true, seed, true, kEncoderGain);
    in = cfg_.sa2_mlp[l];
  }

  // fusion
  const int cs = cfg_.c_s, cl = cfg_.c_l;
  add_dense("fuse.img_proj", cfg_.c_i(), cs, true, seed);
  add("fuse.img_pos", normal_mat(cfg_.n_image_tokens(), cs, kImagePosStd, derive_seed(seed, fnv1a64("fuse.img_pos"))), true);
  add_dense("fuse.pts_proj", cfg_.c_p(), cs, true, seed);
  add_dense("fuse.xyz_embed", 3, cs, true, seed);
  add_norm("fuse.ln1", cs, true);
  for (const char* n : {"fuse.wq", "fuse.wk", "fuse.wv", "fuse.wo"}) add_dense(n, cs, cs, true, seed);
  add_norm("fuse.ln2", cs, true);
  add_dense("fuse.mlp.fc1", cs, cs * cfg_.mlp_ratio, true, seed);
  add_dense("fuse.mlp.fc2", cs * cfg_.mlp_ratio, cs, true, seed);

  // adapter
  add_dense("adapt.fc1", cs, 2 * cl, true, seed);
  add_dense("adapt.fc2", 2 * cl, cl, true, seed);

  // frozen text embeddings and backbone
  add("text.embed", normal_mat(vocab_size_, cl, 1.0, derive_seed(frozen, fnv1a64("text.embed"))), false);
  add("text.pos", normal_mat(cfg_.n_l, cl, 0.1, derive_seed(frozen, fnv1a64("text.pos"))), false);
  for (int l = 0; l < cfg_.backbone_layers; ++l) {
    const std::string pre = "backbone.l" + std::to_string(l);
    add_norm(pre + ".ln1", cl, false);
    for (const char* n : {".wq", ".wk", ".wv", ".wo"}) add_dense(pre + n, cl, cl, false, frozen);
    add_norm(pre + ".ln2", cl, false);
    add_dense(pre + ".mlp.fc1", cl, cl * cfg_.mlp_ratio, false, frozen);
    add_dense(pre + ".mlp.fc2", cl * cfg_.mlp_ratio, cl, false, frozen);
  }
  add_norm("backbone.ln_f", cl, false);

  // decoder
  add_dense("dec.wq", cs, cs, true, seed, false);
  add_dense("dec.wk", cl, cs, true, seed, false);
  add_dense("dec.wv", cl, cs, true, seed, false);
  add_dense("dec.wo", cs, cs, true, seed, false);
  add("dec.align", normal_mat(cfg_.n_l, cfg_.n_s(), 1.0 / std::sqrt(cfg_.n_s()), derive_seed(seed, fnv1a64("dec.align"))),
      true);
  add_norm("dec.ln", cs, true);
  add_dense("dec.mlp.fc1", cs, cs * cfg_.mlp_ratio, true, seed);
  add_dense("dec.mlp.fc2", cs * cfg_.mlp_ratio, cs, true, seed);

  // head
  add_dense("head.fc1", cs, cfg_.head_hidden, true, seed);
  add("head.bn.gamma", Mat::Ones(1, cfg_.head_hidden), true);
  add("head.bn.beta", Mat::Zero(1, cfg_.head_hidden), true);
  add("head.bn.running_mean", Mat::Zero(1, cfg_.head_hidden), false);
  add("head.bn.running_var", Mat::Ones(1, cfg_.head_hidden), false);
  add_dense("head.fc2", cfg_.head_hidden, 1, true, seed);
}

// ---------------------------------------------------------------------------
// parameters

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->trainable) out.push_back(p.get());
  return out;
}

Parameter& Model::param(const std::string& name) {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ModelError("unknown parameter " + name);
  return *it->second;
}

const Parameter& Model::param(const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ModelError("unknown parameter " + name);
  return *it->second;
}

bool Model::has_param(const std::string& name) const { return by_name_.count(name) > 0; }

uint64_t Model::frozen_hash() const {
  uint64_t h = fnv1a64(std::string_view("frozen"));
  for (const auto& p : params_) {
    if (!is_frozen_block(p->name)) continue;
    h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(p->name.data()), p->name.size()), h);
    h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(p->value.data()),
                          static_cast<std::size_t>(p->value.size()) * sizeof(double)),
                h);
  }
  return h;
}

uint64_t Model::parameter_count(bool trainable_only) const {
  uint64_t n = 0;
  for (const auto& p : params_)
    if (!trainable_only || p->trainable) n += static_cast<uint64_t>(p->value.size());
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// building blocks

Var Model::p(Tape& tape, const std::string& name) {
  if (leaf_tape_ != tape.serial()) {
    leaves_.clear();
    leaf_tape_ = tape.serial();
  }
  const auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  Var v = tape.parameter(param(name));
  leaves_.emplace(name, v);
  return v;
}

Var Model::dense(Tape& tape, Var x, const std::string& name, bool bias) {
  return bias ? ad::linear(x, p(tape, name + ".w"), p(tape, name + ".b")) : ad::linear(x, p(tape, name + ".w"));
}

Var Model::norm(Tape& tape, Var x, const std::string& name) {
  return ad::layer_norm(x, p(tape, name + ".g"), p(tape, name + ".b"));
}

Var Model::attention(Tape&, Var q, Var k, Var v, int heads, std::vector<Mat>* capture) {
  const Eigen::Index dh = q.cols() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var probs = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv));
    if (capture) capture->push_back(probs.value());
    outs.push_back(ad::matmul(probs, vh));
  }
  return heads == 1 ? outs[0] : ad::concat_cols(outs);
}

Var Model::self_attention_block(Tape& tape, Var x, const std::string& prefix, int heads,
                                std::vector<Mat>* capture) {
  Var h = norm(tape, x, prefix + ".ln1");
  Var a = attention(tape, dense(tape, h, prefix + ".wq"), dense(tape, h, prefix + ".wk"), dense(tape, h, prefix + ".wv"),
                    heads, capture);
  return ad::add(x, dense(tape, a, prefix + ".wo"));
}

Var Model::mlp_block(Tape& tape, Var x, const std::string& norm_name, const std::string& prefix) {
  Var h = norm(tape, x, norm_name);
  h = ad::gelu(dense(tape, h, prefix + ".fc1"));
  return ad::add(x, dense(tape, h, prefix + ".fc2"));
}

// ---------------------------------------------------------------------------
// blocks

Var Model::encode_2d(Tape& tape, const synth::SyntheticImage& image) {
  if (image.size != cfg_.image_size || image.pixels.rows() != 3 ||
      image.pixels.cols() != static_cast<Eigen::Index>(image.size) * image.size)
    throw ModelError("encode_2d: expected a (3, " + std::to_string(cfg_.image_size) + ", " +
                     std::to_string(cfg_.image_size) + ") image");
  check_finite(image.pixels, "encode_2d");
  Var x = tape.constant(image.pixels);
  int in = 3, side = cfg_.image_size;
  for (int s = 0; s < 4; ++s) {
    const int stride = s < 3 ? 2 : 1;
    const std::string pre = "img.s" + std::to_string(s);
    const ad::ConvShape c1{in, side, side, 3, stride, 1};
    Var h = ad::gelu(ad::conv2d(x, p(tape, pre + ".conv1.w"), p(tape, pre + ".conv1.b"), c1));
    const int out_side = c1.out_height();
    const int out = cfg_.image_channels[static_cast<std::size_t>(s)];
    const ad::ConvShape c2{out, out_side, out_side, 3, 1, 1};
    h = ad::conv2d(h, p(tape, pre + ".conv2.w"), p(tape, pre + ".conv2.b"), c2);
    const ad::ConvShape cs{in, side, side, 1, stride, 0};
    Var skip = ad::conv2d(x, p(tape, pre + ".skip.w"), p(tape, pre + ".skip.b"), cs);
    x = ad::gelu(ad::add(h, skip));
    in = out;
    side = out_side;
  }
  return x;
}

Var Model::null_image(Tape& tape) {
  return ad::transpose(ad::repeat_rows(p(tape, "img.null"), cfg_.n_image_tokens()));
}

Var Model::encode_3d(Tape& tape, const PointGeometry& g) {
  Var x = tape.constant(g.sa1_rel);
  for (std::size_t l = 0; l < cfg_.sa1_mlp.size(); ++l) x = ad::gelu(dense(tape, x, "pts.sa1.l" + std::to_string(l)));
  Var f1 = ad::group_max(x, cfg_.sa1_k);

  Var grouped = ad::gather_rows(f1, g.sa2_groups);
  const Var parts[] = {tape.constant(g.sa2_rel), grouped};
  x = ad::concat_cols(parts);
  for (std::size_t l = 0; l < cfg_.sa2_mlp.size(); ++l) x = ad::gelu(dense(tape, x, "pts.sa2.l" + std::to_string(l)));
  return ad::group_max(x, cfg_.sa2_k);
}

Var Model::fuse(Tape& tape, Var f2d, Var f3d, const PointGeometry& g, std::vector<Mat>* attention_out) {
  if (f2d.rows() != cfg_.c_i() || f2d.cols() != cfg_.n_image_tokens())
    throw ModelError("fuse: F2D shape mismatch");
  if (f3d.rows() != cfg_.sa2_centers || f3d.cols() != cfg_.c_p()) throw ModelError("fuse: F3D shape mismatch");
  Var img = ad::add(dense(tape, ad::transpose(f2d), "fuse.img_proj"), p(tape, "fuse.img_pos"));
  Var pts = ad::add(dense(tape, f3d, "fuse.pts_proj"), dense(tape, tape.constant(Mat(g.sa2_xyz.xyz)), "fuse.xyz_embed"));
  const Var parts[] = {img, pts};
  Var x = ad::concat_rows(parts);
  x = self_attention_block(tape, x, "fuse", cfg_.fuse_heads, attention_out);
  return mlp_block(tape, x, "fuse.ln2", "fuse.mlp");
}

Var Model::adapt(Tape& tape, Var fs) {
  return dense(tape, ad::gelu(dense(tape, fs, "adapt.fc1")), "adapt.fc2");
}

Var Model::embed_text(Tape& tape, std::span<const int> tokens) {
  if (static_cast<int>(tokens.size()) != cfg_.n_l) throw ModelError("embed_text: expected n_l tokens");
  for (int t : tokens)
    if (t < 0 || t >= vocab_size_) throw ModelError("embed_text: token id out of range");
  return ad::add(ad::gather_rows(p(tape, "text.embed"), tokens), p(tape, "text.pos"));
}

Var Model::backbone(Tape& tape, Var fsp, Var ft, std::vector<Mat>* attention_out) {
  const Var parts[] = {fsp, ft};
  Var x = ad::concat_rows(parts);
  for (int l = 0; l < cfg_.backbone_layers; ++l) {
    const std::string pre = "backbone.l" + std::to_string(l);
    x = self_attention_block(tape, x, pre, cfg_.backbone_heads, attention_out);
    x = mlp_block(tape, x, pre + ".ln2", pre + ".mlp");
  }
  return norm(tape, x, "backbone.ln_f");
}

std::pair<Var, Var> Model::split_hidden(Var hidden) const {
  return {ad::slice_rows(hidden, 0, cfg_.n_s()), ad::slice_rows(hidden, cfg_.n_s(), hidden.rows() - cfg_.n_s())};
}

Var Model::decode(Tape& tape, Var fs, Var instructional, Var semantic, std::vector<Mat>* attention_out) {
  Var q = dense(tape, fs, "dec.wq", false);
  Var k = dense(tape, instructional, "dec.wk", false);
  // Values come from the semantic tokens resampled onto the instruction axis
  // so that key and value counts agree.
  Var aligned = ad::matmul(p(tape, "dec.align"), semantic);
  Var v = dense(tape, aligned, "dec.wv", false);
  Var a = attention(tape, q, k, v, cfg_.decoder_heads, attention_out);
  Var x = ad::add(fs, dense(tape, a, "dec.wo", false));
  return mlp_block(tape, x, "dec.ln", "dec.mlp");
}

std::vector<Var> Model::head(Tape& tape, std::span<const Var> fa, std::span<const PointGeometry* const> geoms,
                             bool training) {
  if (fa.size() != geoms.size() || fa.empty()) throw ModelError("head: one geometry per feature map required");
  std::vector<Var> hidden;
  hidden.reserve(fa.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    Var tokens = ad::slice_rows(fa[i], cfg_.n_image_tokens(), cfg_.sa2_centers);
    // The first linear layer commutes with the convex interpolation, so it
    // runs on the sparse tokens.
    Var h = dense(tape, tokens, "head.fc1");
    hidden.push_back(ad::weighted_gather(h, geoms[i]->interp.index, geoms[i]->interp.weight));
  }
  Var all = hidden.size() == 1 ? hidden[0] : ad::concat_rows(hidden);
  ad::BatchNormBuffers buffers{&param("head.bn.running_mean"), &param("head.bn.running_var")};
  all = ad::batch_norm(all, p(tape, "head.bn.gamma"), p(tape, "head.bn.beta"), buffers, training);
  Var prob = ad::sigmoid(dense(tape, ad::gelu(all), "head.fc2"));
  std::vector<Var> out;
  out.reserve(fa.size());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const Eigen::Index n = geoms[i]->dense.size();
    out.push_back(ad::transpose(ad::slice_rows(prob, row, n)));
    row += n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// forward

ForwardResult Model::forward(Tape& tape, std::span<const PairInput> batch, const ForwardOptions& opt) {
  if (batch.empty()) throw ModelError("forward: empty batch");
  const std::size_t pairs = batch[0].clouds.size();
  if (pairs == 0) throw ModelError("forward: every image needs at least one cloud");
  for (const PairInput& in : batch) {
    if (in.clouds.size() != pairs) throw ModelError("forward: all images need the same number of clouds");
    if (opt.image_on && in.image == nullptr) throw ModelError("forward: missing image");
  }
  const std::size_t b = batch.size();
  ForwardResult res;
  if (opt.capture) res.features.resize(b * pairs);

  std::vector<Var> f2d(b), ft(b);
  for (std::size_t i = 0; i < b; ++i) {
    f2d[i] = opt.image_on ? encode_2d(tape, *batch[i].image) : null_image(tape);
    ft[i] = embed_text(tape, batch[i].tokens);
  }

  std::vector<Var> fa(b * pairs);
  std::vector<const PointGeometry*> geoms(b * pairs);
  for (std::size_t pi = 0; pi < pairs; ++pi) {
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t slot = pi * b + i;
      FeaturePack* fp = opt.capture ? &res.features[slot] : nullptr;
      const PointGeometry& g = *batch[i].clouds[pi];
      Var f3d = encode_3d(tape, g);
      Var fs = fuse(tape, f2d[i], f3d, g, fp ? &fp->fuse_attention : nullptr);
      Var fsp = adapt(tape, fs);
      Var hidden = backbone(tape, fsp, ft[i], fp ? &fp->backbone_attention : nullptr);
      auto [semantic, instructional] = split_hidden(hidden);
      fa[slot] = decode(tape, fs, instructional, semantic, fp ? &fp->decoder_attention : nullptr);
      geoms[slot] = &g;
      if (fp) {
        fp->f2d = f2d[i].value();
        fp->f3d = f3d.value();
        fp->fs = fs.value();
        fp->fsp = fsp.value();
        fp->ft = ft[i].value();
        fp->semantic = semantic.value();
        fp->instructional = instructional.value();
        fp->fa = fa[slot].value();
      }
    }
  }
  res.heatmaps = head(tape, fa, geoms, opt.training);
  if (opt.capture)
    for (std::size_t s = 0; s < res.heatmaps.size(); ++s) res.features[s].o = res.heatmaps[s].value();
  return res;
}

}  // namespace afford3d::net

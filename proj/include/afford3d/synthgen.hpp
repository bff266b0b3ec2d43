#pragma once

// Procedural objects with part-level affordance labels, rendered cue images
// and templated instructions.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "afford3d/autograd.hpp"
#include "afford3d/geom3d.hpp"
#include "afford3d/rng.hpp"

namespace afford3d::synth {

using ad::Mat;

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- vocabularies ----

// All affordance names the templates know about.
const std::vector<std::string>& full_affordance_vocabulary();
// Affordances that form the training side of an unseen split; everything
// else belongs to the test side.
bool is_unseen_train_affordance(const std::string& affordance);
const std::vector<std::string>& default_affordances();
const std::vector<std::string>& default_objects();

// ---- templates ----

enum class Shape { kCylinder, kBox, kSphere, kTorusSegment };

// dims: cylinder (radius, height, capped 0/1); box (sx, sy, sz);
// sphere (radius, -, -); torus segment (major R, minor r, arc span).
struct Primitive {
  Shape shape = Shape::kBox;
  Eigen::Vector3d dims = Eigen::Vector3d::Ones();
  Eigen::Vector3d euler = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  double area() const;
  // Uniform sample on the posed surface.
  Eigen::Vector3d sample(Rng& rng) const;
};

struct Part {
  std::string name;
  Primitive primitive;
  std::vector<std::string> affordances;
};

struct ObjectTemplate {
  std::string object_class;
  std::vector<Part> parts;

  bool carries(const std::string& affordance) const;
  // First part carrying the affordance, if any.
  const Part* part_for(const std::string& affordance) const;
};

const std::vector<ObjectTemplate>& template_registry();
const ObjectTemplate& find_template(const std::string& object_class);
// Per-part size jitter in [0.9, 1.1].
ObjectTemplate jitter_template(const ObjectTemplate& base, uint64_t seed);

// ---- sampling ----

inline constexpr double kFeatherBand = 0.05;

struct ObjectSample {
  geom::PointCloud cloud;   // normalized
  Mat annotation;           // (N, K) over `vocabulary`
  std::vector<int> part_id; // (N)
};

// Points are allocated to parts in proportion to surface area (largest
// remainder) and drawn uniformly on each part. Points on a part carrying an
// affordance score 1; other points within kFeatherBand of such a part get a
// raised-cosine falloff; the rest score 0.
ObjectSample sample_object(const ObjectTemplate& tmpl, int n_points, uint64_t seed,
                           const std::vector<std::string>& vocabulary);

// Feathered scores for one affordance given per-point "on a carrying part".
Eigen::VectorXd feather_scores(const geom::PointCloud& cloud, const std::vector<char>& on_part, double band);

// ---- images ----

inline constexpr double kCueSigma = 4.0;

struct SyntheticImage {
  int size = 64;
  Mat pixels;  // (3, size*size), channel-major, values in [0, 1]

  double at(int channel, int row, int col) const { return pixels(channel, row * size + col); }
};

// Pixel coordinates (col, row) of a point under the image's view rotation.
Eigen::Vector2d project_to_pixel(const Eigen::Vector3d& p, const geom::Rotation& view, int size);

// Channel 0: occupancy splat; channel 1: Gaussian actor cue on the projected
// centroid of positive-score points; channel 2: nearness (1 = closest).
// The view rotation is random_rotation(seed).
SyntheticImage render_image(const geom::PointCloud& cloud, const Mat& annotation, int affordance_index,
                            uint64_t seed, int size = 64);

// ---- instructions ----

enum class Granularity { kFull, kActionObject, kAction, kNone };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

struct Instruction {
  std::string text;
  Granularity granularity = Granularity::kFull;
  std::string verb;
  std::string object_noun;
};

// Sentence patterns for Full instructions. Placeholders: {v} verb,
// {g} gerund, {n} noun, {p} part name.
const std::vector<std::string>& full_instruction_patterns();
std::string gerund(const std::string& verb);
// All Full texts make_instruction can produce for (verb, noun).
std::vector<std::string> expand_full_instructions(const std::string& verb, const std::string& noun);

Instruction make_instruction(const std::string& verb, const std::string& noun, Granularity g, uint64_t seed);
// Same verb/noun at another granularity; a Full source keeps its text.
Instruction with_granularity(const Instruction& src, Granularity g);

}  // namespace afford3d::synth

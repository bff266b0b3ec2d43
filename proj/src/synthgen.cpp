#include "afford3d/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace afford3d::synth {

namespace {

constexpr double kPi = std::numbers::pi;

Primitive cylinder(double r, double h, bool capped, Eigen::Vector3d t = Eigen::Vector3d::Zero(),
                   Eigen::Vector3d euler = Eigen::Vector3d::Zero()) {
  return Primitive{Shape::kCylinder, {r, h, capped ? 1.0 : 0.0}, euler, t};
}
Primitive box(double sx, double sy, double sz, Eigen::Vector3d t = Eigen::Vector3d::Zero(),
              Eigen::Vector3d euler = Eigen::Vector3d::Zero()) {
  return Primitive{Shape::kBox, {sx, sy, sz}, euler, t};
}
Primitive sphere(double r, Eigen::Vector3d t = Eigen::Vector3d::Zero()) {
  return Primitive{Shape::kSphere, {r, 0.0, 0.0}, Eigen::Vector3d::Zero(), t};
}
Primitive torus(double major, double minor, double span, Eigen::Vector3d t = Eigen::Vector3d::Zero(),
                Eigen::Vector3d euler = Eigen::Vector3d::Zero()) {
  return Primitive{Shape::kTorusSegment, {major, minor, span}, euler, t};
}

// Turns the +x half-ring of a torus segment into an arc over the +z side.
const Eigen::Vector3d kArcOverTop{kPi / 2, -kPi / 2, 0.0};
const Eigen::Vector3d kAlongX{0.0, kPi / 2, 0.0};
const Eigen::Vector3d kAlongY{kPi / 2, 0.0, 0.0};

std::vector<ObjectTemplate> build_registry() {
  std::vector<ObjectTemplate> r;
  r.push_back({"mug",
               {{"body", cylinder(0.35, 0.8, true), {"contain", "wrapgrasp"}},
                {"rim", torus(0.35, 0.03, 2 * kPi, {0, 0, 0.4}), {"pour"}},
                {"handle", torus(0.2, 0.05, kPi, {0.35, 0, 0}, {kPi / 2, 0, 0}), {"grasp", "lift"}}}});
  r.push_back({"knife",
               {{"blade", box(1.0, 0.2, 0.03, {0.5, 0, 0}), {"cut", "stab"}},
                {"handle", cylinder(0.06, 0.5, true, {-0.25, 0, 0}, kAlongX), {"grasp"}}}});
  std::vector<Part> chair{{"seat", box(0.8, 0.8, 0.08), {"sit", "support"}},
                          {"backrest", box(0.8, 0.08, 0.8, {0, 0.36, 0.44}), {"push"}}};
  for (double sx : {-0.35, 0.35})
    for (double sy : {-0.35, 0.35})
      chair.push_back({"leg", cylinder(0.04, 0.7, false, {sx, sy, -0.39}), {"move", "lift"}});
  r.push_back({"chair", chair});
  r.push_back({"door",
               {{"panel", box(1.0, 0.06, 2.0), {"push"}},
                {"handle", cylinder(0.03, 0.25, true, {0.3, -0.1, 0}, kAlongX), {"grasp", "open"}}}});
  r.push_back({"bottle",
               {{"body", cylinder(0.3, 1.0, true), {"contain", "wrapgrasp"}},
                {"neck", cylinder(0.12, 0.3, false, {0, 0, 0.65}), {"grasp"}},
                {"mouth", torus(0.12, 0.03, 2 * kPi, {0, 0, 0.8}), {"pour", "open"}}}});
  r.push_back({"earphone",
               {{"cup", sphere(0.22, {-0.5, 0, 0}), {"listen"}},
                {"cup", sphere(0.22, {0.5, 0, 0}), {"listen"}},
                {"band", torus(0.5, 0.04, kPi, {0, 0, 0}, kArcOverTop), {"grasp", "wear"}}}});
  r.push_back({"bag",
               {{"body", box(0.9, 0.35, 0.7), {"contain"}},
                {"strap", torus(0.3, 0.04, kPi, {0, 0, 0.35}, kArcOverTop), {"grasp", "lift"}}}});
  r.push_back({"hammer",
               {{"handle", cylinder(0.05, 1.0, true), {"grasp"}},
                {"head", box(0.5, 0.14, 0.14, {0, 0, 0.55}), {"push"}}}});
  r.push_back({"bowl",
               {{"body", cylinder(0.5, 0.3, true), {"contain", "wrapgrasp", "pour"}},
                {"base", cylinder(0.25, 0.06, true, {0, 0, -0.18}), {"support"}}}});
  std::vector<Part> table{{"top", box(1.4, 0.8, 0.06), {"support"}}};
  for (double sx : {-0.6, 0.6})
    for (double sy : {-0.3, 0.3}) table.push_back({"leg", cylinder(0.04, 0.7, false, {sx, sy, -0.38}), {"move"}});
  r.push_back({"table", table});
  r.push_back({"bed",
               {{"mattress", box(1.0, 2.0, 0.3), {"lay", "sit"}},
                {"headboard", box(1.0, 0.08, 0.6, {0, -1.04, 0.15}), {"support"}}}});
  r.push_back({"laptop",
               {{"screen", box(1.0, 0.04, 0.65, {0, 0.35, 0.33}), {"display"}},
                {"base", box(1.0, 0.7, 0.04), {"press", "support"}}}});
  r.push_back({"faucet",
               {{"base", cylinder(0.12, 0.3, true), {"support"}},
                {"spout", cylinder(0.05, 0.5, true, {0, 0.25, 0.12}, kAlongY), {"pour"}},
                {"knob", sphere(0.08, {0, 0, 0.22}), {"open", "grasp"}}}});
  r.push_back({"hat",
               {{"crown", cylinder(0.3, 0.3, true, {0, 0, 0.165}), {"wear"}},
                {"brim", cylinder(0.55, 0.03, true), {"grasp"}}}});
  return r;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

}  // namespace

const std::vector<std::string>& full_affordance_vocabulary() {
  static const std::vector<std::string> v{"grasp", "press",     "stab",    "open", "lay",    "sit",
                                          "cut",   "contain",   "display", "wrapgrasp", "support",
                                          "push",  "listen",    "wear",    "move", "lift",   "pour"};
  return v;
}

bool is_unseen_train_affordance(const std::string& a) {
  static const std::vector<std::string> train{"support", "push", "listen", "wear", "move", "lift", "pour"};
  return std::find(train.begin(), train.end(), a) != train.end();
}

const std::vector<std::string>& default_affordances() {
  static const std::vector<std::string> v{"grasp", "open", "sit", "cut", "contain",
                                          "support", "push", "listen", "lift", "pour"};
  return v;
}

const std::vector<std::string>& default_objects() {
  static const std::vector<std::string> v{"mug", "knife", "chair", "door", "bottle", "earphone", "bag", "hammer"};
  return v;
}

double Primitive::area() const {
  switch (shape) {
    case Shape::kCylinder: {
      const double r = dims[0], h = dims[1];
      return 2 * kPi * r * h + (dims[2] > 0.5 ? 2 * kPi * r * r : 0.0);
    }
    case Shape::kBox:
      return 2 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[0] * dims[2]);
    case Shape::kSphere:
      return 4 * kPi * dims[0] * dims[0];
    case Shape::kTorusSegment:
      return 2 * kPi * dims[1] * dims[0] * dims[2];
  }
  return 0.0;
}

Eigen::Vector3d Primitive::sample(Rng& rng) const {
  Eigen::Vector3d local;
  switch (shape) {
    case Shape::kCylinder: {
      const double r = dims[0], h = dims[1];
      const double lateral = 2 * kPi * r * h;
      const double caps = dims[2] > 0.5 ? 2 * kPi * r * r : 0.0;
      const double theta = rng.uniform(0.0, 2 * kPi);
      if (rng.uniform() * (lateral + caps) < lateral) {
        local = {r * std::cos(theta), r * std::sin(theta), rng.uniform(-h / 2, h / 2)};
      } else {
        const double rho = r * std::sqrt(rng.uniform());
        const double z = rng.uniform() < 0.5 ? -h / 2 : h / 2;
        local = {rho * std::cos(theta), rho * std::sin(theta), z};
      }
      break;
    }
    case Shape::kBox: {
      const double a[3] = {dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]};
      double pick = rng.uniform() * (a[0] + a[1] + a[2]);
      int axis = 0;
      while (axis < 2 && pick >= a[axis]) pick -= a[axis++];
      local = {rng.uniform(-dims[0] / 2, dims[0] / 2), rng.uniform(-dims[1] / 2, dims[1] / 2),
               rng.uniform(-dims[2] / 2, dims[2] / 2)};
      local[axis] = rng.uniform() < 0.5 ? -dims[axis] / 2 : dims[axis] / 2;
      break;
    }
    case Shape::kSphere: {
      Eigen::Vector3d n;
      do {
        n = {rng.normal(), rng.normal(), rng.normal()};
      } while (n.norm() < 1e-12);
      local = dims[0] * n.normalized();
      break;
    }
    case Shape::kTorusSegment: {
      const double big = dims[0], small = dims[1], span = dims[2];
      const double u = rng.uniform(-span / 2, span / 2);
      double v;
      // Area element is proportional to (R + r cos v).
      do {
        v = rng.uniform(0.0, 2 * kPi);
      } while (rng.uniform() * (big + small) > big + small * std::cos(v));
      const double ring = big + small * std::cos(v);
      local = {ring * std::cos(u), ring * std::sin(u), small * std::sin(v)};
      break;
    }
  }
  return geom::Rotation::from_euler(euler[0], euler[1], euler[2]).matrix * local + translation;
}

bool ObjectTemplate::carries(const std::string& affordance) const { return part_for(affordance) != nullptr; }

const Part* ObjectTemplate::part_for(const std::string& affordance) const {
  for (const Part& p : parts)
    if (std::find(p.affordances.begin(), p.affordances.end(), affordance) != p.affordances.end()) return &p;
  return nullptr;
}

const std::vector<ObjectTemplate>& template_registry() {
  static const std::vector<ObjectTemplate> r = build_registry();
  return r;
}

const ObjectTemplate& find_template(const std::string& object_class) {
  for (const ObjectTemplate& t : template_registry())
    if (t.object_class == object_class) return t;
  throw SynthError("unknown object class: " + object_class);
}

ObjectTemplate jitter_template(const ObjectTemplate& base, uint64_t seed) {
  Rng rng(seed);
  ObjectTemplate t = base;
  for (Part& p : t.parts) {
    const double s = rng.uniform(0.9, 1.1);
    switch (p.primitive.shape) {
      case Shape::kCylinder:
        p.primitive.dims[0] *= s;
        p.primitive.dims[1] *= rng.uniform(0.9, 1.1);
        break;
      case Shape::kBox:
        p.primitive.dims[0] *= s;
        p.primitive.dims[1] *= rng.uniform(0.9, 1.1);
        p.primitive.dims[2] *= rng.uniform(0.9, 1.1);
        break;
      case Shape::kSphere:
        p.primitive.dims[0] *= s;
        break;
      case Shape::kTorusSegment:
        p.primitive.dims[0] *= s;
        break;
    }
  }
  return t;
}

Eigen::VectorXd feather_scores(const geom::PointCloud& cloud, const std::vector<char>& on_part, double band) {
  const Eigen::Index n = cloud.size();
  Eigen::VectorXd score = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> members;
  for (Eigen::Index i = 0; i < n; ++i)
    if (on_part[static_cast<std::size_t>(i)]) members.push_back(i);
  if (members.empty()) return score;
  const double band2 = band * band;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (on_part[static_cast<std::size_t>(i)]) {
      score[i] = 1.0;
      continue;
    }
    double best = band2;
    for (Eigen::Index j : members) best = std::min(best, (cloud.xyz.row(i) - cloud.xyz.row(j)).squaredNorm());
    if (best < band2) score[i] = 0.5 * (1.0 + std::cos(kPi * std::sqrt(best) / band));
  }
  return score;
}

ObjectSample sample_object(const ObjectTemplate& tmpl, int n_points, uint64_t seed,
                           const std::vector<std::string>& vocabulary) {
  if (n_points < 64) throw SynthError("sample_object: n_points must be >= 64");
  if (tmpl.parts.size() < 2) throw SynthError("sample_object: template needs at least two parts");
  std::vector<double> area;
  for (const Part& p : tmpl.parts) {
    const double a = p.primitive.area();
    if (!(a > 0.0)) throw SynthError("sample_object: part '" + p.name + "' has zero area");
    area.push_back(a);
  }
  const double total = std::accumulate(area.begin(), area.end(), 0.0);

  // Largest-remainder allocation.
  std::vector<int> count(area.size());
  std::vector<std::pair<double, std::size_t>> remainder;
  int assigned = 0;
  for (std::size_t i = 0; i < area.size(); ++i) {
    const double exact = n_points * area[i] / total;
    count[i] = static_cast<int>(std::floor(exact));
    assigned += count[i];
    remainder.emplace_back(-(exact - count[i]), i);
  }
  std::sort(remainder.begin(), remainder.end());
  for (int k = 0; k < n_points - assigned; ++k) ++count[remainder[static_cast<std::size_t>(k)].second];

  Rng rng(seed);
  ObjectSample out;
  geom::Points raw(n_points, 3);
  out.part_id.reserve(static_cast<std::size_t>(n_points));
  Eigen::Index row = 0;
  for (std::size_t part = 0; part < tmpl.parts.size(); ++part)
    for (int k = 0; k < count[part]; ++k) {
      raw.row(row++) = tmpl.parts[part].primitive.sample(rng).transpose();
      out.part_id.push_back(static_cast<int>(part));
    }
  out.cloud = geom::normalize_unit_sphere(geom::PointCloud{raw});

  out.annotation = Mat::Zero(n_points, static_cast<Eigen::Index>(vocabulary.size()));
  for (std::size_t k = 0; k < vocabulary.size(); ++k) {
    std::vector<char> on_part(static_cast<std::size_t>(n_points), 0);
    bool any = false;
    for (int i = 0; i < n_points; ++i) {
      const Part& p = tmpl.parts[static_cast<std::size_t>(out.part_id[static_cast<std::size_t>(i)])];
      if (std::find(p.affordances.begin(), p.affordances.end(), vocabulary[k]) != p.affordances.end()) {
        on_part[static_cast<std::size_t>(i)] = 1;
        any = true;
      }
    }
    if (any) out.annotation.col(static_cast<Eigen::Index>(k)) = feather_scores(out.cloud, on_part, kFeatherBand);
  }
  return out;
}

Eigen::Vector2d project_to_pixel(const Eigen::Vector3d& p, const geom::Rotation& view, int size) {
  const Eigen::Vector3d q = view.matrix * p;
  return {(q.x() + 1.0) / 2.0 * (size - 1), (q.y() + 1.0) / 2.0 * (size - 1)};
}

SyntheticImage render_image(const geom::PointCloud& cloud, const Mat& annotation, int affordance_index,
                            uint64_t seed, int size) {
  if (affordance_index < 0 || affordance_index >= annotation.cols())
    throw SynthError("render_image: affordance index out of range");
  if (annotation.rows() != cloud.size()) throw SynthError("render_image: annotation/cloud size mismatch");
  const auto column = annotation.col(affordance_index);
  if (!(column.maxCoeff() > 0.0)) throw SynthError("render_image: affordance column is all zero");

  const geom::Rotation view = geom::random_rotation(seed);
  SyntheticImage img{size, Mat::Zero(3, static_cast<Eigen::Index>(size) * size)};
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  int positives = 0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d p = cloud.xyz.row(i).transpose();
    const Eigen::Vector2d px = project_to_pixel(p, view, size);
    const int c = std::clamp(static_cast<int>(std::lround(px.x())), 0, size - 1);
    const int r = std::clamp(static_cast<int>(std::lround(px.y())), 0, size - 1);
    const Eigen::Index at = static_cast<Eigen::Index>(r) * size + c;
    img.pixels(0, at) = 1.0;
    const double near = std::clamp(((view.matrix * p).z() + 1.0) / 2.0, 0.0, 1.0);
    img.pixels(2, at) = std::max(img.pixels(2, at), near);
    if (column[i] > 0.0) {
      centroid += p;
      ++positives;
    }
  }
  centroid /= positives;
  const Eigen::Vector2d cue = project_to_pixel(centroid, view, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double d2 = (c - cue.x()) * (c - cue.x()) + (r - cue.y()) * (r - cue.y());
      img.pixels(1, static_cast<Eigen::Index>(r) * size + c) = std::exp(-d2 / (2.0 * kCueSigma * kCueSigma));
    }
  img.pixels = img.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::kFull:
      return "full";
    case Granularity::kActionObject:
      return "action_object";
    case Granularity::kAction:
      return "action";
    case Granularity::kNone:
      return "none";
  }
  return "full";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "full") return Granularity::kFull;
  if (s == "action_object") return Granularity::kActionObject;
  if (s == "action") return Granularity::kAction;
  if (s == "none") return Granularity::kNone;
  throw SynthError("unknown instruction granularity: " + s);
}

const std::vector<std::string>& full_instruction_patterns() {
  static const std::vector<std::string> p{
      "{g} the {n} by its {p}",
      "the person wants to {v} the {n} using the {p}",
      "{v} the {n} at the {p}",
      "a hand reaches out to {v} the {n}",
      "use the {p} of the {n} to {v}",
      "someone is {g} a {n}",
  };
  return p;
}

std::string gerund(const std::string& verb) {
  if (verb == "cut") return "cutting";
  if (verb == "sit") return "sitting";
  if (verb == "stab") return "stabbing";
  if (verb == "move") return "moving";
  return verb + "ing";
}

namespace {

void check_words(const std::string& verb, const std::string& noun) {
  const auto& vocab = full_affordance_vocabulary();
  if (std::find(vocab.begin(), vocab.end(), verb) == vocab.end()) throw SynthError("unknown verb: " + verb);
  find_template(noun);
}

std::vector<std::string> usable_patterns(const std::string& verb, const std::string& noun) {
  const Part* part = find_template(noun).part_for(verb);
  std::vector<std::string> out;
  for (const std::string& p : full_instruction_patterns()) {
    const bool needs_part = p.find("{p}") != std::string::npos;
    if (needs_part && part == nullptr) continue;
    std::string s = replace_all(p, "{v}", verb);
    s = replace_all(s, "{g}", gerund(verb));
    s = replace_all(s, "{n}", noun);
    if (part != nullptr) s = replace_all(s, "{p}", part->name);
    out.push_back(s);
  }
  return out;
}

}  // namespace

std::vector<std::string> expand_full_instructions(const std::string& verb, const std::string& noun) {
  check_words(verb, noun);
  return usable_patterns(verb, noun);
}

Instruction make_instruction(const std::string& verb, const std::string& noun, Granularity g, uint64_t seed) {
  check_words(verb, noun);
  Instruction ins{"", g, verb, noun};
  switch (g) {
    case Granularity::kFull: {
      const std::vector<std::string> options = usable_patterns(verb, noun);
      Rng rng(seed);
      ins.text = options[rng.below(options.size())];
      break;
    }
    case Granularity::kActionObject:
      ins.text = verb + " " + noun;
      break;
    case Granularity::kAction:
      ins.text = verb;
      break;
    case Granularity::kNone:
      break;
  }
  return ins;
}

Instruction with_granularity(const Instruction& src, Granularity g) {
  if (g == Granularity::kFull) {
    if (src.granularity != Granularity::kFull) throw SynthError("with_granularity: Full text is not recoverable");
    return src;
  }
  return make_instruction(src.verb, src.object_noun, g, 0);
}

}  // namespace afford3d::synth

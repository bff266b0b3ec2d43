#include "afford3d/generate.hpp"

#include <algorithm>
#include <cstdio>

#include "afford3d/parallel.hpp"
#include "afford3d/rng.hpp"

namespace afford3d::synth {

namespace {

constexpr uint64_t kTrainTag = 0x7472;
constexpr uint64_t kTestTag = 0x7465;
constexpr int kMaxAttempts = 16;

std::string sample_name(const std::string& subset, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06d", subset.c_str(), index);
  return buf;
}

Eigen::Vector3d random_direction(Rng& rng) {
  Eigen::Vector3d d;
  do {
    d = {rng.normal(), rng.normal(), rng.normal()};
  } while (d.norm() < 1e-6);
  return d.normalized();
}

}  // namespace

void DataConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw io::ValidationError("data config: " + what);
  };
  need(train_count >= 2, "train_count must be >= 2");
  need(test_count >= 1, "test_count must be >= 1");
  need(n_points >= 64, "n_points must be >= 64");
  need(image_size >= 8, "image_size must be >= 8");
  need(!affordances.empty() && !objects.empty(), "vocabularies must be non-empty");
  need(partial_resolution >= 4, "partial_resolution must be >= 4");
  need(partial_tolerance >= 0.0, "partial_tolerance must be >= 0");
  const auto& known = full_affordance_vocabulary();
  for (const std::string& a : affordances)
    need(std::find(known.begin(), known.end(), a) != known.end(), "unknown affordance '" + a + "'");
  for (const std::string& o : objects) find_template(o);
}

SplitPlan plan_split(const DataConfig& cfg) {
  SplitPlan plan;
  for (const std::string& o : cfg.objects) {
    const ObjectTemplate& t = find_template(o);
    for (std::size_t k = 0; k < cfg.affordances.size(); ++k) {
      if (!t.carries(cfg.affordances[k])) continue;
      const GroupKey key{o, static_cast<int>(k)};
      if (cfg.split == io::SplitMode::kSeen) {
        plan.train.push_back(key);
        plan.test.push_back(key);
      } else if (is_unseen_train_affordance(cfg.affordances[k])) {
        plan.train.push_back(key);
      } else {
        plan.test.push_back(key);
      }
    }
  }
  if (plan.train.empty() || plan.test.empty())
    throw io::ValidationError("infeasible split: no (object, affordance) groups on the " +
                              std::string(plan.train.empty() ? "train" : "test") + " side");
  return plan;
}

std::vector<int> resample_to(std::span<const int> visible, int n, uint64_t seed) {
  if (visible.empty()) throw SynthError("resample_to: no visible points");
  std::vector<int> out(visible.begin(), visible.end());
  if (static_cast<int>(out.size()) > n) out.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  while (static_cast<int>(out.size()) < n) out.push_back(visible[rng.below(visible.size())]);
  return out;
}

io::Sample build_sample(const DataConfig& cfg, const GroupKey& group, const std::string& subset, int index,
                        uint64_t seed, geom::PointCloud* partial_source) {
  const auto& [object_class, aff] = group;
  const std::string& verb = cfg.affordances[static_cast<std::size_t>(aff)];
  const ObjectTemplate& base = find_template(object_class);
  const uint64_t tag = subset == "train" ? kTrainTag : kTestTag;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const uint64_t s = derive_seed(seed, tag, static_cast<uint64_t>(index) * kMaxAttempts + attempt);
    const ObjectSample obj = sample_object(jitter_template(base, derive_seed(s, 1)), cfg.n_points, derive_seed(s, 2),
                                           cfg.affordances);
    if (!(obj.annotation.col(aff).maxCoeff() > 0.0)) continue;

    io::Sample out;
    out.sample_id = sample_name(subset, index);
    out.subset = subset;
    out.object_class = object_class;
    out.affordance_index = aff;
    out.view = cfg.view;
    out.seed = s;
    out.instruction = make_instruction(verb, object_class, Granularity::kFull, derive_seed(s, 3));

    if (cfg.shuffle_pairing) {
      ObjectSample other;
      bool found = false;
      for (int a = 0; a < kMaxAttempts && !found; ++a) {
        other = sample_object(jitter_template(base, derive_seed(s, 4, static_cast<uint64_t>(a))), cfg.n_points,
                              derive_seed(s, 5, static_cast<uint64_t>(a)), cfg.affordances);
        found = other.annotation.col(aff).maxCoeff() > 0.0;
      }
      if (!found) continue;
      out.image = render_image(other.cloud, other.annotation, aff, derive_seed(s, 6), cfg.image_size);
    } else {
      out.image = render_image(obj.cloud, obj.annotation, aff, derive_seed(s, 6), cfg.image_size);
    }

    if (cfg.view == io::View::kFull) {
      out.cloud = obj.cloud;
      out.annotation = obj.annotation;
      return out;
    }
    Rng vr(derive_seed(s, 7));
    const geom::Viewpoint vp{random_direction(vr), cfg.partial_resolution, cfg.partial_tolerance};
    const std::vector<int> visible = geom::partial_view(obj.cloud, vp);
    const std::vector<int> chosen = resample_to(visible, cfg.n_points, derive_seed(s, 8));
    geom::PointCloud partial = geom::normalize_unit_sphere(geom::gather(obj.cloud, chosen));
    out.annotation.resize(cfg.n_points, obj.annotation.cols());
    for (int i = 0; i < cfg.n_points; ++i) out.annotation.row(i) = obj.annotation.row(chosen[static_cast<std::size_t>(i)]);
    // The depicted part must survive occlusion.
    if (!(out.annotation.col(aff).maxCoeff() > 0.0)) continue;
    if (cfg.view == io::View::kPartial) {
      out.cloud = std::move(partial);
      return out;
    }
    const geom::Rotation rot = geom::random_rotation(derive_seed(s, 9));
    out.cloud = geom::apply_rotation(partial, rot);
    out.rotation = rot.matrix;
    if (partial_source) *partial_source = std::move(partial);
    return out;
  }
  throw SynthError("build_sample: no instance of " + object_class + " shows '" + verb + "'");
}

io::Manifest generate_dataset(const DataConfig& cfg, uint64_t seed, const std::filesystem::path& root) {
  cfg.validate();
  const SplitPlan plan = plan_split(cfg);

  // Training samples come in twos per group so every group can be paired.
  std::vector<GroupKey> order = plan.train;
  Rng rng(derive_seed(seed, 0x6f72646572));
  rng.shuffle(order.begin(), order.end());
  std::vector<GroupKey> train_group(static_cast<std::size_t>(cfg.train_count));
  for (int i = 0; i < cfg.train_count; ++i) {
    int slot = i / 2;
    if (cfg.train_count % 2 == 1 && i == cfg.train_count - 1) slot = (i - 1) / 2;
    train_group[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(slot) % order.size()];
  }

  // A seen-split test group must occur in training.
  std::vector<GroupKey> test_groups;
  for (const GroupKey& g : plan.test)
    if (cfg.split == io::SplitMode::kUnseen || std::find(train_group.begin(), train_group.end(), g) != train_group.end())
      test_groups.push_back(g);
  if (test_groups.empty()) throw io::ValidationError("no test group is covered by the training samples");

  io::Manifest m;
  m.split = cfg.split;
  m.view = cfg.view;
  m.n_points = cfg.n_points;
  m.image_size = cfg.image_size;
  m.affordances = cfg.affordances;
  m.objects = cfg.objects;
  const std::size_t total = static_cast<std::size_t>(cfg.train_count + cfg.test_count);
  m.samples.resize(total);
  std::filesystem::create_directories(root);
  parallel_for(total, [&](std::size_t j) {
    const bool train = j < static_cast<std::size_t>(cfg.train_count);
    const int index = train ? static_cast<int>(j) : static_cast<int>(j) - cfg.train_count;
    const GroupKey& g = train ? train_group[j] : test_groups[static_cast<std::size_t>(index) % test_groups.size()];
    const io::Sample s = build_sample(cfg, g, train ? "train" : "test", index, seed);
    m.samples[j] = io::write_sample(root, s);
  });
  io::write_manifest(root, m);
  io::validate_manifest(root, m);
  return m;
}

}  // namespace afford3d::synth

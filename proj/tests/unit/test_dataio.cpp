#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "afford3d/dataio.hpp"
#include "afford3d/generate.hpp"
#include "test_util.hpp"

using namespace afford3d;
using namespace afford3d::io;

namespace {

template <class F>
FormatErrc code_of(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.code();
  }
  return FormatErrc{};
}

}  // namespace

TEST_CASE("array container layout") {
  Array a;
  a.shape = {2048, 1};
  a.dtype = DType::kF32;
  a.data.assign(2048, 0.25);
  const std::vector<unsigned char> enc = encode_array(a);
  CHECK(enc.size() == 16 + 2 * 8 + 2048 * 4);
  const unsigned char magic[8] = {'A', 'G', 'P', 'L', 0, 1, 0, 0};
  CHECK(std::memcmp(enc.data(), magic, 8) == 0);
  // ndim and dtype, little-endian.
  CHECK(enc[8] == 2);
  CHECK(enc[9] == 0);
  CHECK(enc[12] == 1);
  // first dim 2048 = 0x0800.
  CHECK(enc[16] == 0x00);
  CHECK(enc[17] == 0x08);
  // 0.25f = 0x3e800000 little-endian.
  CHECK(enc[32] == 0x00);
  CHECK(enc[35] == 0x3e);
}

TEST_CASE("array round trip") {
  Array a;
  a.shape = {3, 4, 5};
  a.dtype = DType::kF64;
  for (int i = 0; i < 60; ++i) a.data.push_back(i * 0.1 - 2.0);
  const Array b = decode_array(encode_array(a));
  CHECK(b.shape == a.shape);
  CHECK(b.dtype == a.dtype);
  CHECK(b.data == a.data);
  CHECK(encode_array(b) == encode_array(a));
}

TEST_CASE("corrupt arrays give typed errors") {
  Array a;
  a.shape = {4, 2};
  a.data.assign(8, 1.0);
  const std::vector<unsigned char> good = encode_array(a);

  std::vector<unsigned char> bad = good;
  bad[0] = 'X';
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kBadMagic);
  bad = good;
  bad[12] = 7;
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kBadDType);
  bad = good;
  bad[8] = 0;
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kBadHeader);
  bad = good;
  bad.resize(good.size() - 3);
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kTruncated);
  bad = good;
  bad.push_back(0);
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kTrailingBytes);
  CHECK(code_of([&] { decode_array(std::vector<unsigned char>(5, 0)); }) == FormatErrc::kTruncated);
  bad = good;
  // A header promising 2^40 x 2 floats must be refused before allocating.
  bad[16 + 5] = 1;
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kTooLarge);
  bad = good;
  for (int i = 0; i < 8; ++i) bad[16 + i] = 0xff;
  CHECK(code_of([&] { decode_array(bad); }) == FormatErrc::kTooLarge);
}

TEST_CASE("random header corruption never crashes") {
  Array a;
  a.shape = {6, 3};
  a.data.assign(18, 0.5);
  const std::vector<unsigned char> good = encode_array(a);
  Rng rng(3);
  int typed = 0;
  for (int t = 0; t < 2000; ++t) {
    std::vector<unsigned char> bad = good;
    const int flips = 1 + static_cast<int>(rng.below(4));
    for (int f = 0; f < flips; ++f) bad[rng.below(32)] = static_cast<unsigned char>(rng.below(256));
    try {
      decode_array(bad);
    } catch (const FormatError&) {
      ++typed;
    }
  }
  CHECK(typed > 0);
}

TEST_CASE("samples and manifests round trip bytewise") {
  testutil::TempDir d("dataio");
  synth::DataConfig cfg;
  cfg.train_count = 6;
  cfg.test_count = 2;
  cfg.n_points = 64;
  cfg.image_size = 16;
  cfg.view = View::kRotation;
  const Manifest m = synth::generate_dataset(cfg, 9, d / "a");
  const Manifest back = read_manifest(d / "a");
  CHECK(back.samples.size() == m.samples.size());
  CHECK_NOTHROW(validate_manifest(d / "a", back, 2));

  fs::create_directories(d / "b");
  Manifest copy = back;
  copy.samples.clear();
  for (const SampleRecord& r : back.samples) {
    const Sample s = read_sample(d / "a", r, back);
    CHECK(s.target().rows() == 64);
    CHECK(s.rotation.has_value());
    copy.samples.push_back(write_sample(d / "b", s));
  }
  write_manifest(d / "b", copy);
  CHECK(testutil::slurp(d / "a" / "manifest.json") == testutil::slurp(d / "b" / "manifest.json"));
  for (const SampleRecord& r : m.samples)
    for (const std::string& f : {r.pc_file, r.img_file, r.label_file, r.meta_file})
      CHECK(testutil::slurp(d / "a" / f) == testutil::slurp(d / "b" / f));
  CHECK(fs::file_size(d / "a" / m.samples[0].label_file) == 16 + 2 * 8 + 64 * cfg.affordances.size() * 4);
}

TEST_CASE("manifest validation") {
  testutil::TempDir d("manifest");
  synth::DataConfig cfg;
  cfg.train_count = 6;
  cfg.test_count = 2;
  cfg.n_points = 64;
  cfg.image_size = 16;
  Manifest m = synth::generate_dataset(cfg, 1, d.path());

  SUBCASE("missing file") {
    fs::remove(d / m.samples[1].pc_file);
    CHECK_THROWS_AS(validate_manifest(d.path(), m), ValidationError);
  }
  SUBCASE("unseen overlap rejected") {
    m.split = SplitMode::kUnseen;
    const int a = m.samples[0].affordance_index;
    for (SampleRecord& r : m.samples)
      if (r.subset == "test") r.affordance_index = a;
    CHECK_THROWS_AS(validate_manifest(d.path(), m), ValidationError);
  }
  SUBCASE("duplicate ids rejected") {
    m.samples[1].sample_id = m.samples[0].sample_id;
    CHECK_THROWS_AS(validate_manifest(d.path(), m), ValidationError);
  }
  SUBCASE("groups smaller than the pair count rejected") {
    CHECK_THROWS_AS(validate_manifest(d.path(), m, 7), ValidationError);
  }
  SUBCASE("bad json is a format error") {
    std::ofstream(d / "manifest.json") << "{ not json";
    CHECK(code_of([&] { read_manifest(d.path()); }) == FormatErrc::kBadJson);
  }
  SUBCASE("corrupt sample header is a format error") {
    std::fstream f(d / m.samples[0].pc_file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("JUNK", 4);
    f.close();
    CHECK(code_of([&] { read_sample(d.path(), m.samples[0], m); }) == FormatErrc::kBadMagic);
  }
}

TEST_CASE("pairing sampler") {
  std::vector<PairingSampler::Key> keys;
  for (int i = 0; i < 12; ++i) keys.push_back({i < 6 ? "mug" : "knife", i % 3 == 0 ? 0 : 1});
  // Groups: mug/0 {0,3}, mug/1 {1,2,4,5}, knife/0 {6,9}, knife/1 {7,8,10,11}.
  SUBCASE("train mode pairs within class and affordance, no duplicates") {
    const PairingSampler s(keys, PairingMode::kTrain, 2, 42);
    for (int e = 0; e < 5; ++e) {
      const std::vector<PairingItem> items = s.epoch(e);
      std::set<int> images;
      for (const PairingItem& it : items) {
        images.insert(it.image);
        REQUIRE(it.clouds.size() == 2);
        CHECK(it.clouds[0] != it.clouds[1]);
        for (int c : it.clouds) {
          CHECK(keys[static_cast<std::size_t>(c)].object_class == keys[static_cast<std::size_t>(it.image)].object_class);
          CHECK(keys[static_cast<std::size_t>(c)].affordance_index ==
                keys[static_cast<std::size_t>(it.image)].affordance_index);
        }
      }
      CHECK(images.size() == 12);
    }
  }
  SUBCASE("fixed seed replays; epochs differ") {
    const PairingSampler a(keys, PairingMode::kTrain, 2, 42), b(keys, PairingMode::kTrain, 2, 42);
    auto flat = [](const std::vector<PairingItem>& v) {
      std::vector<int> out;
      for (const auto& it : v) {
        out.push_back(it.image);
        out.insert(out.end(), it.clouds.begin(), it.clouds.end());
      }
      return out;
    };
    CHECK(flat(a.epoch(3)) == flat(b.epoch(3)));
    CHECK(flat(a.epoch(0)) != flat(a.epoch(1)));
  }
  SUBCASE("eval mode visits each sample once with its own cloud") {
    const PairingSampler s(keys, PairingMode::kEval, 1, 1);
    const std::vector<PairingItem> items = s.epoch(0);
    REQUIRE(items.size() == 12);
    for (int i = 0; i < 12; ++i) {
      CHECK(items[static_cast<std::size_t>(i)].image == i);
      CHECK(items[static_cast<std::size_t>(i)].clouds == std::vector<int>{i});
    }
  }
  SUBCASE("invalid configurations") {
    CHECK_THROWS(PairingSampler(keys, PairingMode::kEval, 2, 1));
    CHECK_THROWS(PairingSampler(keys, PairingMode::kTrain, 3, 1));
  }
}

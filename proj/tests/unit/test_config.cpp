#include <doctest.h>

#include <fstream>

#include "afford3d/config.hpp"
#include "test_util.hpp"

using namespace afford3d;

TEST_CASE("assignment parsing") {
  const auto a = parse_assignments("# comment\n\n seed = 7 \ntrain.epochs=3\r\ndata.objects = mug, knife\n");
  REQUIRE(a.size() == 3);
  CHECK(a[0] == std::pair<std::string, std::string>{"seed", "7"});
  CHECK(a[1] == std::pair<std::string, std::string>{"train.epochs", "3"});
  CHECK(a[2].second == "mug, knife");
  CHECK_THROWS_AS(parse_assignments("seed 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_assignments(" = 7\n"), ConfigError);
  CHECK(parse_override("loss.gamma=1.5") == std::pair<std::string, std::string>{"loss.gamma", "1.5"});
  CHECK_THROWS_AS(parse_override("loss.gamma"), ConfigError);
}

TEST_CASE("typed values") {
  const RunConfig c = config_from_assignments({{"seed", "7"},
                                               {"train.image_on", "off"},
                                               {"loss.gamma", "1.5"},
                                               {"data.objects", "mug, knife"},
                                               {"data.view", "partial"},
                                               {"train.granularity", "action"}});
  CHECK(c.seed == 7);
  CHECK_FALSE(c.train.image_on);
  CHECK(c.loss.gamma == 1.5);
  CHECK(c.data.objects == std::vector<std::string>{"mug", "knife"});
  CHECK(c.data.view == io::View::kPartial);
  CHECK(c.train.granularity == synth::Granularity::kAction);
  CHECK_THROWS_AS(config_from_assignments({{"train.epochs", "three"}}), ConfigError);
  CHECK_THROWS_AS(config_from_assignments({{"train.epochs", "3.5"}}), ConfigError);
  CHECK_THROWS_AS(config_from_assignments({{"train.image_on", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(config_from_assignments({{"data.view", "sideways"}}), ConfigError);
  CHECK_THROWS_AS(config_from_assignments({{"train.learning_rate", "-1"}}), ConfigError);
  CHECK_THROWS_AS(config_from_assignments({{"model.preset", "huge"}}), ConfigError);
}

TEST_CASE("unknown keys are rejected") {
  try {
    config_from_assignments({{"train.epochz", "3"}});
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epochz") != std::string::npos);
  }
}

TEST_CASE("preset applies before every other key") {
  const RunConfig a = config_from_assignments({{"model.c_s", "64"}, {"model.preset", "compact"}});
  CHECK(a.preset == "compact");
  CHECK(a.model.c_s == 64);
  CHECK(a.model.n_l == net::ModelConfig::compact().n_l);
  CHECK(a.data.n_points == 512);
  CHECK(a.model.n_points == 512);
  const RunConfig b = config_from_assignments({{"model.preset", "tiny"}, {"data.n_points", "128"}});
  CHECK(b.data.n_points == 128);
  CHECK(b.model.n_points == 128);
  const RunConfig d = config_from_assignments({});
  CHECK(d.data.n_points == 2048);
  CHECK(d.model.c_s == 256);
  // Later assignments win.
  CHECK(config_from_assignments({{"seed", "1"}, {"seed", "2"}}).seed == 2);
}

TEST_CASE("file plus overrides") {
  testutil::TempDir d("config");
  std::ofstream(d / "run.cfg") << "model.preset = tiny\nseed = 4\ntrain.epochs = 2\n";
  const RunConfig c = load_config(d / "run.cfg", {"seed=9"});
  CHECK(c.seed == 9);
  CHECK(c.train.epochs == 2);
  CHECK(c.preset == "tiny");
  CHECK_THROWS_AS(load_config(d / "missing.cfg", {}), ConfigError);
}

TEST_CASE("snapshot round trip") {
  const RunConfig c = config_from_assignments({{"model.preset", "tiny"},
                                               {"seed", "11"},
                                               {"loss.alpha", "0.3"},
                                               {"train.learning_rate", "0.0001"},
                                               {"data.affordances", "grasp,cut,pour"}});
  const std::string snap = c.snapshot();
  const RunConfig back = config_from_assignments(parse_assignments(snap));
  CHECK(back.snapshot() == snap);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.data.affordances == c.data.affordances);
  std::size_t lines = 0;
  for (char ch : snap) lines += ch == '\n';
  CHECK(lines == RunConfig::keys().size());
}

#include "doctest.h"

#include "grace/config.hpp"

using namespace grace;

namespace {
const char* kValid = R"(
# preset
p_m_1 = 0.3
p_m_2 = 0.4
p_r_1 = 0.2
p_r_2 = 0.4
learning_rate = 0.005
weight_decay = 1e-5
epochs = 200
hidden_dim = 128
activation = relu
tau = 0.5
seed = 1
arch = gcn2
)";
}

TEST_CASE("a valid config parses with defaults filled") {
  auto cfg = ExperimentConfig::parse_string(kValid, "test");
  CHECK(cfg.p_m_1 == 0.3);
  CHECK(cfg.p_r_2 == 0.4);
  CHECK(cfg.learning_rate == 0.005);
  CHECK(cfg.epochs == 200);
  CHECK(cfg.hidden_dim == 128);
  CHECK(cfg.activation == "relu");
  CHECK(cfg.objective == "grace");
  CHECK(cfg.n_runs == 5);
  CHECK(cfg.metric == "accuracy");
  TrainConfig t = cfg.to_train_config();
  CHECK(t.arch == EncoderArch::Gcn2);
  CHECK(t.mode == LossConfig::Mode::Grace);
}

TEST_CASE("unknown keys are rejected") {
  std::string text = std::string(kValid) + "mystery_knob = 3\n";
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string(text, "test"),
                       doctest::Contains("mystery_knob"), ConfigError);
}

TEST_CASE("missing required keys are rejected") {
  std::string text = kValid;
  const auto pos = text.find("tau = 0.5\n");
  text.erase(pos, 10);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string(text, "test"), doctest::Contains("tau"),
                       ConfigError);
}

TEST_CASE("malformed lines and duplicates are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::parse_string(std::string(kValid) + "not a kv line\n", "t"),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_string(std::string(kValid) + "tau = 0.7\n", "t"),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_string(std::string(kValid) + "seed = -1\n", "t"),
                  ConfigError);
}

TEST_CASE("enum-like values are validated at parse time") {
  std::string bad_act = kValid;
  bad_act.replace(bad_act.find("activation = relu"), 17, "activation = tanh");
  CHECK_THROWS_AS(ExperimentConfig::parse_string(bad_act, "t"), ConfigError);

  std::string bad_arch = kValid;
  bad_arch.replace(bad_arch.find("arch = gcn2"), 11, "arch = gcn9");
  CHECK_THROWS_AS(ExperimentConfig::parse_string(bad_arch, "t"), ConfigError);
}

TEST_CASE("semantic validation happens at parse time") {
  std::string bad = kValid;
  bad.replace(bad.find("epochs = 200"), 12, "epochs = 0  ");
  CHECK_THROWS_AS(ExperimentConfig::parse_string(bad, "t"), ConfigError);
  std::string bad_p = kValid;
  bad_p.replace(bad_p.find("p_m_1 = 0.3"), 11, "p_m_1 = 1.2");
  CHECK_THROWS_AS(ExperimentConfig::parse_string(bad_p, "t"), ConfigError);
}

TEST_CASE("digest is stable and sensitive") {
  auto a = ExperimentConfig::parse_string(kValid, "t");
  auto b = ExperimentConfig::parse_string(kValid, "t");
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 16);

  auto c = a;
  c.tau = 0.4;
  CHECK(a.digest() != c.digest());
  auto d = a;
  d.seed = 2;
  CHECK(a.digest() != d.digest());
  // paths are not part of the experiment identity
  auto e = a;
  e.out_dir = "elsewhere";
  CHECK(a.digest() == e.digest());
}

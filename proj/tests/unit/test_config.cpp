#include "doctest.h"
#include "dreamplan/config.hpp"
#include "dreamplan/errors.hpp"

using namespace dreamplan;

TEST_SUITE("config") {
  TEST_CASE("round trip and stable hash") {
    Config c;
    c.seed = 42;
    c.wm.mode = "full_scene";
    c.harness.bench_ks = {2, 16};
    const Config d = config_from_json(config_to_json(c));
    CHECK(config_to_json(d) == config_to_json(c));
    CHECK(config_hash(d) == config_hash(c));
    CHECK(config_hash(c) != config_hash(Config{}));
  }

  TEST_CASE("partial documents keep defaults") {
    const Config c = config_from_json(nlohmann::json::parse(R"({"orpo":{"epochs":7},"seed":3})"));
    CHECK(c.orpo.epochs == 7);
    CHECK(c.seed == 3);
    CHECK(c.orpo.lr == Config{}.orpo.lr);
  }

  TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"orpo":{"epoch":7}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"nope":1})")), ConfigError);
  }

  TEST_CASE("thread count") {
    Config c;
    c.threads = 3;
    CHECK(effective_threads(c) == 3);
    c.threads = 0;
    CHECK(effective_threads(c) >= 1);
  }
}

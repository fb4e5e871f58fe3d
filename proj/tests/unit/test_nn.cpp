#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dreamplan/errors.hpp"
#include "dreamplan/gradcheck.hpp"
#include "dreamplan/nn.hpp"
#include "dreamplan/rng.hpp"

using namespace dreamplan;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dreamplan_test_" + name);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("param store layout") {
    ParamStore s;
    CHECK(s.add("a.w", {2, 3}) == 0);
    CHECK(s.add("a.b", {2}) == 6);
    CHECK(s.add("b.w", {1}) == 8);
    CHECK(s.size() == 9);
    CHECK(s.block("a.").size() == 8);
    CHECK(s.view("a.b").size() == 2);
    CHECK_THROWS(s.add("a.w", {1}));
  }

  TEST_CASE("mlp: zero weights give the bias") {
    const MlpSpec spec{{3, 4, 2}};
    ParamStore s;
    add_mlp_params(s, "m", spec);
    s.view("m.l1.b")[0] = 0.25;
    s.view("m.l1.b")[1] = -1.5;
    Matrix x = Matrix::Random(3, 5);
    const Matrix y = mlp_forward(spec, s.values(), x).output();
    for (Eigen::Index c = 0; c < 5; ++c) {
      CHECK(y(0, c) == 0.25);
      CHECK(y(1, c) == -1.5);
    }
  }

  TEST_CASE("mlp: single identity layer passes the input through") {
    const MlpSpec spec{{3, 3}};
    ParamStore s;
    add_mlp_params(s, "m", spec);
    auto w = s.view("m.l0.w");
    for (int k = 0; k < 3; ++k) w[static_cast<std::size_t>(k * 3 + k)] = 1.0;
    const Matrix x = Matrix::Random(3, 4);
    CHECK(mlp_forward(spec, s.values(), x).output() == x);
  }

  TEST_CASE("mlp gradient against finite differences") {
    const GradcheckSuite s = gradcheck_mlp(5, 3);
    CHECK(s.passed());
  }

  TEST_CASE("adam: zero gradient leaves params, advances the step") {
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState st(2);
    adam_step(p, g, st, {});
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(st.step == 1);
  }

  TEST_CASE("adam: first step closed form") {
    const AdamOptions opt{0.01, 0.9, 0.999, 1e-8};
    for (double g : {0.5, -3.0, 1e-6}) {
      std::vector<double> p{0.7};
      AdamState st(1);
      adam_step(p, std::vector<double>{g}, st, opt);
      // m_hat = g, v_hat = g^2 after bias correction at t = 1.
      const double expect = 0.7 - opt.lr * g / (std::abs(g) + opt.eps);
      CHECK(p[0] == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  TEST_CASE("adam: deterministic and rejects NaN") {
    std::vector<double> p1{0.1, 0.2}, p2{0.1, 0.2};
    AdamState s1(2), s2(2);
    const std::vector<double> g{0.3, -0.4};
    adam_step(p1, g, s1, {});
    adam_step(p2, g, s2, {});
    CHECK(p1 == p2);
    const std::vector<double> bad{std::nan(""), 0.0};
    CHECK_THROWS_AS(adam_step(p1, bad, s1, {}), NumericalError);
  }

  TEST_CASE("time embedding") {
    const Vector e0 = time_embed(0, 50, 16);
    for (int k = 0; k < 8; ++k) {
      CHECK(e0[k] == 0.0);
      CHECK(e0[8 + k] == 1.0);
    }
    CHECK((time_embed(50, 50, 16) - e0).norm() > 0.1);
    CHECK_THROWS_AS(time_embed(1, 50, 15), InvalidArgument);
  }

  TEST_CASE("checkpoint round trip") {
    Checkpoint c;
    c.kind = "test";
    c.config_hash = "abc";
    c.store.add("x", {3});
    c.store.add("y", {2, 2});
    Rng rng(1);
    for (double& v : c.store.values()) v = rng.normal();
    c.meta["n"] = 3;
    const auto path = temp_path("ckpt.bin");
    save_checkpoint(c, path);
    const Checkpoint d = load_checkpoint(path);
    CHECK(d.kind == c.kind);
    CHECK(d.config_hash == c.config_hash);
    CHECK(d.store == c.store);
    CHECK(d.meta == c.meta);

    Checkpoint empty;
    empty.kind = "empty";
    save_checkpoint(empty, path);
    CHECK(load_checkpoint(path).store.size() == 0);
  }

  TEST_CASE("checkpoint: corrupted magic and truncation") {
    Checkpoint c;
    c.kind = "test";
    c.store.add("x", {16});
    const auto path = temp_path("ckpt_bad.bin");
    save_checkpoint(c, path);
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.put('Z');
    }
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason() == CheckpointError::Reason::bad_magic);
    }
    save_checkpoint(c, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason() == CheckpointError::Reason::truncated);
    }
  }

  TEST_CASE("relative error floor") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-7));
  }
}

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DREAMPLAN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_line(const std::string& args) {
  const auto out = std::filesystem::temp_directory_path() / "dreamplan_test_cli_out.txt";
  const std::string cmd = std::string(DREAMPLAN_CLI) + " " + args + " >" + out.string() + " 2>/dev/null";
  [[maybe_unused]] const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return last;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("collect --task") == 1);
    CHECK(run("eval") == 1);
  }

  TEST_CASE("runtime errors exit with 2") {
    const auto cfg = std::filesystem::temp_directory_path() / "dreamplan_test_bad_config.json";
    std::ofstream(cfg) << R"({"wm":{"bogus":1}})";
    CHECK(run("--config " + cfg.string() + " gradcheck --instances 1") == 2);
    CHECK(last_line("--config " + cfg.string() + " gradcheck --instances 1").find(R"("result":"error")") !=
          std::string::npos);
  }

  TEST_CASE("gradcheck subcommand") {
    const auto out = std::filesystem::temp_directory_path() / "dreamplan_test_cli";
    std::filesystem::remove_all(out);
    CHECK(run("--out " + out.string() + " gradcheck --instances 2") == 0);
    CHECK(std::filesystem::exists(out / "gradcheck.json"));
    CHECK(last_line("--out " + out.string() + " gradcheck --instances 2").find(R"("result":"ok")") != std::string::npos);
  }
}

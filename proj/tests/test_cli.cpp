#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

const std::filesystem::path kDir = std::filesystem::temp_directory_path() / "evodt_test_cli";

int run(const std::string& args, const std::string& out = "out.txt") {
  const std::string cmd = std::string(EVODT_BIN) + " " + args + " > " + (kDir / out).string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct Fixture {
  Fixture() {
    std::filesystem::remove_all(kDir);
    std::filesystem::create_directories(kDir);
    write(kDir / "small.cfg",
          "size_of_population = 10\nbatch_size = 10\nnum_of_iterations = 2\neval_episodes = 2\n"
          "noise_table_size = 100000\n");
  }
  ~Fixture() { std::filesystem::remove_all(kDir); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "exit codes") {
  const std::string cfg = (kDir / "small.cfg").string();
  const std::string ckpt = (kDir / "ck").string();
  CHECK(run("train -q -c " + cfg + " --checkpoint-dir " + ckpt + " --log-path " + (kDir / "log.jsonl").string()) == 0);
  CHECK(std::filesystem::exists(kDir / "ck" / "latest.ckpt"));
  CHECK(run("eval --checkpoint " + (kDir / "ck" / "latest.ckpt").string() + " --episodes 2") == 0);
  CHECK(run("rtg-sweep --checkpoint " + (kDir / "ck" / "latest.ckpt").string() + " --episodes 2") == 0);
  CHECK(run("export --log " + (kDir / "log.jsonl").string() + " -o " + (kDir / "log.csv").string()) == 0);
  CHECK(std::filesystem::exists(kDir / "log.csv"));

  // Configuration problems.
  write(kDir / "bad.cfg", "no_such_key = 1\n");
  CHECK(run("train -q -c " + (kDir / "bad.cfg").string()) == 2);
  CHECK(run("train -q -c " + cfg + " --size-of-population 7") == 2);
  CHECK(run("train -q --not-a-flag") == 2);
  write(kDir / "junk.ckpt", "not a checkpoint");
  CHECK(run("eval --checkpoint " + (kDir / "junk.ckpt").string()) == 2);

  // Nobody listening.
  CHECK(run("worker --master 127.0.0.1:1 --connect-timeout 0.3") == 3);

  // Workers that never arrive.
  CHECK(run("train -q -c " + cfg + " --transport tcp --workers 1 --worker-timeout-s 0.3") == 3);
}

TEST_CASE_FIXTURE(Fixture, "a worker that dies mid-run") {
  write(kDir / "long.cfg",
        "size_of_population = 10\nbatch_size = 10\nnum_of_iterations = 1000000\neval_episodes = 1\n"
        "noise_table_size = 100000\n");
  int master_rc = -1;
  std::thread master([&] {
    master_rc = run("train -c " + (kDir / "long.cfg").string() +
                        " --transport tcp --workers 1 --listen-addr 127.0.0.1:0 --worker-timeout-s 0.5",
                    "master.txt");
  });
  const std::regex listening("listening on port ([0-9]+)");
  std::string port;
  for (int i = 0; i < 200 && port.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    std::ifstream in(kDir / "master.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::smatch m;
    if (std::regex_search(text, m, listening)) port = m[1];
  }
  REQUIRE_FALSE(port.empty());
  // SIGTERM after a second of work.
  std::system(("timeout 1 " + std::string(EVODT_BIN) + " worker --master 127.0.0.1:" + port + " > /dev/null 2>&1").c_str());
  master.join();
  CHECK(master_rc == 4);
}

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "helpers.hpp"

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(REMIX_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("verify --no-such-flag") == 2);
    CHECK(run("pretrain --depth deep") == 2);
    CHECK(run("pretrain --unknown-key 3") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("verify passes on a fresh initialisation") {
    const auto dir = remix::testing::scratch_dir("cli_verify");
    CHECK(run("verify --trials 10 --image-size 32 --depth 2 --model-dim 32 --heads 2 --text-dim 32 --control-n 1 "
              "--root " +
              dir.string()) == 0);
}

TEST_CASE("missing stages fail with exit 1 and REMIX_RUN_DIR sets the root") {
    const auto dir = remix::testing::scratch_dir("cli_env");
    CHECK(run("train-ipcn --root " + dir.string()) == 1);
    const std::string env = "REMIX_RUN_DIR=" + dir.string() + " ";
    const int status = std::system((env + REMIX_CLI + " synth-data --image-size 32 --train-identities 2 "
                                               "--test-identities 1 --scenes 2 > /dev/null 2>&1")
                                       .c_str());
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(std::filesystem::exists(dir / "data"));
}

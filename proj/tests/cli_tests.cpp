#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>

#include <json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli_path() {
    const char* path = std::getenv("RMLAB_CLI");
    REQUIRE_MESSAGE(path != nullptr, "RMLAB_CLI must point at the rmlab binary");
    return path;
}

struct CmdResult {
    int code = -1;
    std::string output;
};

CmdResult run(const std::string& args) {
    std::string cmd = std::string(cli_path()) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult result;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) result.output.append(buf, n);
    int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

fs::path sandbox(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "rmlab_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "missing file: ", path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kSmallConfig = R"({
  "world": {"dim_x": 6, "dim_y": 5, "train_clusters": 2, "valid_clusters": 2,
            "train_prompts": 60, "valid_prompts": 20, "train_generators": 6,
            "valid_generators": 4, "gold_hidden": 8},
  "sizes": {"train": 40, "valid": 12},
  "hidden_widths": [8, 6],
  "train": {"epochs": 2, "batch_size": 8, "eval_every": 5},
  "rloo": {"steps": 12, "sets": 6, "candidates": 4, "prompts_per_step": 4, "k": 2}
})";

// One world shared by the tests that only read it.
const fs::path& shared_world() {
    static fs::path dir;
    static std::once_flag once;
    std::call_once(once, [] {
        dir = sandbox("world");
        write_file(dir / "cfg.json", kSmallConfig);
        CmdResult r = run("gen-world --config " + (dir / "cfg.json").string() + " --out " +
                          (dir / "w").string() + " --seed 7");
        REQUIRE_MESSAGE(r.code == 0, r.output);
    });
    return dir;
}

std::string world_arg() { return (shared_world() / "w").string(); }
std::string config_arg() { return (shared_world() / "cfg.json").string(); }

}  // namespace

TEST_CASE("gen-world is deterministic and guards non-empty directories") {
    fs::path dir = sandbox("genworld");
    write_file(dir / "cfg.json", kSmallConfig);
    std::string base = "gen-world --config " + (dir / "cfg.json").string() + " --seed 7 --out ";

    CmdResult first = run(base + (dir / "a").string());
    REQUIRE_MESSAGE(first.code == 0, first.output);
    CHECK(fs::exists(dir / "a" / "world.json"));
    CHECK(fs::exists(dir / "a" / "datasets.bin"));

    CmdResult second = run(base + (dir / "b").string());
    REQUIRE(second.code == 0);
    CHECK(read_file(dir / "a" / "world.json") == read_file(dir / "b" / "world.json"));
    CHECK(read_file(dir / "a" / "datasets.bin") == read_file(dir / "b" / "datasets.bin"));

    CmdResult refused = run(base + (dir / "a").string());
    CHECK(refused.code == 2);
    CmdResult forced = run(base + (dir / "a").string() + " --force");
    CHECK(forced.code == 0);

    CmdResult bad = run("gen-world --out " + (dir / "c").string() +
                        " --config " + (dir / "missing.json").string());
    CHECK(bad.code == 4);
}

TEST_CASE("gen-world rejects degenerate world settings") {
    fs::path dir = sandbox("genbad");
    write_file(dir / "bad.json", R"({"world": {"dim_x": 0}})");
    CmdResult r = run("gen-world --config " + (dir / "bad.json").string() + " --out " +
                      (dir / "w").string());
    CHECK(r.code == 2);
    CHECK(r.output.find("config error") != std::string::npos);
}

TEST_CASE("train writes one directory per loss and seed") {
    fs::path dir = sandbox("train_grid");
    CmdResult r = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() + " --loss bt --seeds 4 --epochs 1 --eval-every 0");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    for (int seed = 0; seed < 4; ++seed) {
        fs::path run_dir = dir / "out" / "bt" / ("seed" + std::to_string(seed));
        CAPTURE(run_dir.string());
        CHECK(fs::exists(run_dir / "metrics.csv"));
        CHECK(fs::exists(run_dir / "rm.ckpt"));
        CHECK(fs::exists(run_dir / "report.json"));
    }
    CHECK(fs::exists(dir / "out" / "config.json"));
}

TEST_CASE("bt and zero-lambda regularized training produce identical metrics") {
    fs::path dir = sandbox("lambda0");
    CmdResult r = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() +
                      " --loss bt --loss bt-bsr --lambda 0 --seed 0 --seed 1");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    for (int seed = 0; seed < 2; ++seed) {
        std::string leaf = "seed" + std::to_string(seed);
        CAPTURE(leaf);
        CHECK(read_file(dir / "out" / "bt" / leaf / "metrics.csv") ==
              read_file(dir / "out" / "bt-bsr" / leaf / "metrics.csv"));
        CHECK(read_file(dir / "out" / "bt" / leaf / "rm.ckpt") ==
              read_file(dir / "out" / "bt-bsr" / leaf / "rm.ckpt"));
    }
}

TEST_CASE("train rejects an unknown loss name") {
    fs::path dir = sandbox("badloss");
    CmdResult r = run("train --world " + world_arg() + " --out " + (dir / "out").string() +
                      " --loss sigmoid-squared");
    CHECK(r.code == 2);
    CHECK(r.output.find("unknown loss kind") != std::string::npos);
}

TEST_CASE("eval in gold mode reports perfect agreement") {
    fs::path dir = sandbox("evalgold");
    CmdResult r = run("eval --world " + world_arg() + " --gold --out " +
                      (dir / "gold.json").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    json report = json::parse(read_file(dir / "gold.json"));
    CHECK(report.at("acc_id").get<double>() == 1.0);
    CHECK(report.at("tau_prompt").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report.at("tau_mutual").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eval on a trained checkpoint is deterministic") {
    fs::path dir = sandbox("evalckpt");
    CmdResult t = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() + " --loss bt --seed 0");
    REQUIRE_MESSAGE(t.code == 0, t.output);
    std::string ckpt = (dir / "out" / "bt" / "seed0" / "rm.ckpt").string();

    CmdResult a = run("eval --world " + world_arg() + " --checkpoint " + ckpt + " --out " +
                      (dir / "a.json").string());
    REQUIRE_MESSAGE(a.code == 0, a.output);
    CmdResult b = run("eval --world " + world_arg() + " --checkpoint " + ckpt + " --out " +
                      (dir / "b.json").string());
    REQUIRE(b.code == 0);
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));

    json report = json::parse(read_file(dir / "a.json"));
    CHECK(report.at("eval").at("acc_id").get<double>() >= 0.0);

    CmdResult missing = run("eval --world " + world_arg() + " --checkpoint " +
                            (dir / "nope.ckpt").string());
    CHECK(missing.code == 4);

    CmdResult both = run("eval --world " + world_arg() + " --gold --checkpoint " + ckpt);
    CHECK(both.code == 2);
}

TEST_CASE("rloo with a huge KL weight pins the policy to the reference") {
    fs::path dir = sandbox("rloopin");
    CmdResult t = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() + " --loss bt --seed 0 --epochs 1 --eval-every 0");
    REQUIRE_MESSAGE(t.code == 0, t.output);
    std::string ckpt = (dir / "out" / "bt" / "seed0" / "rm.ckpt").string();

    CmdResult r = run("rloo --config " + config_arg() + " --world " + world_arg() + " --rm " +
                      ckpt + " --out " + (dir / "rl").string() +
                      " --label bt --beta 1000 --lr 1e-4 --steps 50 --seed 0");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(dir / "rl" / "rloo_metrics.csv"));
    CHECK(fs::exists(dir / "rl" / "policy.ckpt"));

    json report = json::parse(read_file(dir / "rl" / "rloo_report.json"));
    CHECK(report.at("final_kl").get<double>() < 1e-2);
    CHECK(report.at("final_kl").get<double>() >= 0.0);
    CHECK(report.at("diverged").get<bool>() == false);

    CmdResult missing = run("rloo --world " + world_arg() + " --rm " +
                            (dir / "nope.ckpt").string() + " --out " + (dir / "rl2").string());
    CHECK(missing.code == 4);
}

TEST_CASE("rloo runs are seed deterministic") {
    fs::path dir = sandbox("rloodet");
    CmdResult t = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() + " --loss bt --seed 0 --epochs 1 --eval-every 0");
    REQUIRE_MESSAGE(t.code == 0, t.output);
    std::string ckpt = (dir / "out" / "bt" / "seed0" / "rm.ckpt").string();
    std::string base = "rloo --config " + config_arg() + " --world " + world_arg() + " --rm " +
                       ckpt + " --label bt --seed 3 --out ";

    CmdResult a = run(base + (dir / "a").string());
    REQUIRE_MESSAGE(a.code == 0, a.output);
    CmdResult b = run(base + (dir / "b").string());
    REQUIRE(b.code == 0);
    CHECK(read_file(dir / "a" / "rloo_metrics.csv") == read_file(dir / "b" / "rloo_metrics.csv"));
    CHECK(read_file(dir / "a" / "policy.ckpt") == read_file(dir / "b" / "policy.ckpt"));
    CHECK(read_file(dir / "a" / "rloo_report.json") == read_file(dir / "b" / "rloo_report.json"));
}

TEST_CASE("report aggregates runs and renders charts") {
    fs::path dir = sandbox("report");
    CmdResult t = run("train --config " + config_arg() + " --world " + world_arg() + " --out " +
                      (dir / "out").string() + " --loss bt --loss bt-bsr --seed 0 --seed 1");
    REQUIRE_MESSAGE(t.code == 0, t.output);

    CmdResult r = run("report --dir " + (dir / "out").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("label") != std::string::npos);
    CHECK(r.output.find("bt-bsr") != std::string::npos);

    json summary = json::parse(read_file(dir / "out" / "summary.json"));
    REQUIRE(summary.at("rows").size() == 2);
    CHECK(summary.at("rows").at(0).at("label").get<std::string>() == "bt");
    CHECK(summary.at("rows").at(0).at("metrics").at("acc_id").at("count").get<int>() == 2);

    std::size_t svg_count = 0;
    for (const auto& entry : fs::directory_iterator(dir / "out" / "charts"))
        if (entry.path().extension() == ".svg") ++svg_count;
    CHECK(svg_count == 20);

    CmdResult again = run("report --dir " + (dir / "out").string() + " --no-charts");
    REQUIRE(again.code == 0);

    CmdResult empty = run("report --dir " + (dir / "empty").string());
    CHECK(empty.code == 4);
}

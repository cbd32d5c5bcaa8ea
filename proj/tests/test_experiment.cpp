#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/experiment.hpp"

using namespace rmlab;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    GoldWorld world;
    DatasetBundle bundle;

    Fixture() {
        WorldConfig c;
        c.dim_x = 6;
        c.dim_y = 5;
        c.train_clusters = 2;
        c.valid_clusters = 2;
        c.train_prompts = 40;
        c.valid_prompts = 12;
        c.train_generators = 5;
        c.valid_generators = 4;
        c.gold_hidden = 8;
        world = generate_world(c, 71);
        SizeConfig sizes;
        sizes.train = 24;
        sizes.valid = 8;
        bundle = build_datasets(world, sizes, 5);
    }

    TrainConfig small_config() const {
        TrainConfig c;
        c.batch_size = 8;
        c.epochs = 2;
        c.eval_every = 4;
        return c;
    }
};

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("rmlab_exp_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunReport sample_report(const std::string& label, std::uint64_t seed) {
    RunReport r;
    r.label = label;
    r.loss.kind = LossKind::bt_bsr;
    r.loss.lambda = 0.25;
    r.seed = seed;
    r.input_dim = 11;
    r.hidden_widths = {8, 6};
    r.steps = 10;
    r.final_train_loss = 0.5 + static_cast<double>(seed);
    r.max_decomp_rel_err = 1e-11;
    r.head_norm = 1.5;
    r.has_eval = true;
    r.final.acc_id = 0.75;
    r.final.tau_prompt = 0.5;
    r.final.tau_response = 0.25;
    r.final.tau_mutual = 0.125;
    r.final.hnorm_id_mean = 1.0;
    r.final.hnorm_id_std = 0.1;
    r.final.hnorm_prompt_mean = 1.1;
    r.final.hnorm_prompt_std = 0.2;
    r.final.hnorm_response_mean = 1.2;
    r.final.hnorm_response_std = 0.3;
    r.final.hnorm_mutual_mean = 1.3;
    r.final.hnorm_mutual_std = 0.4;
    r.final.hdist_mean = 0.9;
    r.final.hdist_std = 0.05;
    r.final.hdist_skew = -0.2;
    r.final.erank_train = 5.5;
    r.final.erank_eval = 6.0;
    return r;
}

}  // namespace

TEST_CASE("default experiment config round trips through json") {
    ExperimentConfig base = default_experiment_config();
    REQUIRE(base.losses.size() == 5);
    CHECK(base.losses[0].label == "bt");
    CHECK(base.losses[1].label == "bt-bsr");
    CHECK(base.losses[4].label == "bt-dr");
    CHECK(base.seeds == std::vector<std::uint64_t>{0, 1, 2, 3});

    std::string text = experiment_config_to_json(base);
    ExperimentConfig back = experiment_config_from_json(text);
    CHECK(experiment_config_to_json(back) == text);
}

TEST_CASE("partial config merges onto defaults") {
    ExperimentConfig c = experiment_config_from_json(
        R"({"master_seed": 9, "train": {"epochs": 7}, "world": {"dim_x": 5},
            "rloo": {"beta": 0.5, "sets": 12}})");
    CHECK(c.master_seed == 9);
    CHECK(c.train.epochs == 7);
    CHECK(c.world.dim_x == 5);
    CHECK(c.rloo.beta == 0.5);
    CHECK(c.rloo_sets == 12);

    ExperimentConfig defaults = default_experiment_config();
    CHECK(c.world.dim_y == defaults.world.dim_y);
    CHECK(c.train.learning_rate == defaults.train.learning_rate);
    CHECK(c.rloo.k == defaults.rloo.k);
    CHECK(c.seeds == defaults.seeds);
    CHECK(c.losses.size() == defaults.losses.size());
}

TEST_CASE("config parsing rejects unknown keys and malformed input") {
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"bogus": 1})"), config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"train": {"bogus": 1}})"),
                    config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"world": {"bogus": 1}})"),
                    config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"losses": [{"zap": 1}]})"),
                    config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json("{not json"), config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json("[1, 2]"), config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"train": {"epochs": "three"}})"),
                    config_error);
    CHECK_THROWS_AS((void)experiment_config_from_json(R"({"losses": [{"kind": "nope"}]})"),
                    config_error);
}

TEST_CASE("loss entries parse with per-entry defaults") {
    ExperimentConfig c = experiment_config_from_json(
        R"({"losses": [{"kind": "bt-hinge", "margin": 2.5},
                       {"kind": "bt-bsr", "label": "bsr-big", "lambda": 0.1}]})");
    REQUIRE(c.losses.size() == 2);
    CHECK(c.losses[0].label == "bt-hinge");
    CHECK(c.losses[0].spec.kind == LossKind::bt_hinge);
    CHECK(c.losses[0].spec.margin == 2.5);
    CHECK(c.losses[0].spec.lambda == LossSpec{}.lambda);
    CHECK(c.losses[1].label == "bsr-big");
    CHECK(c.losses[1].spec.lambda == 0.1);
}

TEST_CASE("experiment validation rejects inconsistent settings") {
    ExperimentConfig good = default_experiment_config();
    CHECK_NOTHROW(validate(good));

    ExperimentConfig c = good;
    c.losses[1].label = "bt";
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.losses[0].label = "a/b";
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.seeds = {1, 1};
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.seeds.clear();
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.losses.clear();
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.hidden_widths = {8, 0};
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.rloo.k = 9;
    c.rloo_candidates = 8;
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.rloo.prompts_per_step = 33;
    c.rloo_sets = 32;
    CHECK_THROWS_AS(validate(c), config_error);

    c = good;
    c.out_dir.clear();
    CHECK_THROWS_AS(validate(c), config_error);
}

TEST_CASE("stage seeds are distinct per purpose and per run seed") {
    CHECK(bundle_seed_for(5) != candidate_seed_for(5));
    CHECK(init_seed_for(5) != policy_seed_for(5));
    CHECK(init_seed_for(5) != bundle_seed_for(5));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 8; ++s) {
        seen.insert(init_seed_for(s));
        seen.insert(policy_seed_for(s));
    }
    CHECK(seen.size() == 16);
}

TEST_CASE("world directory round trips") {
    Fixture f;
    fs::path dir = fresh_dir("worlddir");
    save_world_dir(f.world, f.bundle, dir);
    CHECK(fs::exists(dir / "world.json"));
    CHECK(fs::exists(dir / "datasets.bin"));

    WorldDir wd = load_world_dir(dir);
    CHECK(world_to_json(wd.world) == world_to_json(f.world));
    CHECK(bundle_to_bytes(wd.bundle, f.world.config.dim_y) ==
          bundle_to_bytes(f.bundle, f.world.config.dim_y));

    fs::remove(dir / "datasets.bin");
    CHECK_THROWS_AS((void)load_world_dir(dir), missing_artifact_error);
    fs::remove_all(dir);
}

TEST_CASE("run report round trips through json") {
    RunReport r = sample_report("bsr", 3);
    RunReport back = run_report_from_json(run_report_to_json(r));
    CHECK(back.label == r.label);
    CHECK(back.loss.kind == r.loss.kind);
    CHECK(back.loss.lambda == r.loss.lambda);
    CHECK(back.seed == r.seed);
    CHECK(back.input_dim == r.input_dim);
    CHECK(back.hidden_widths == r.hidden_widths);
    CHECK(back.steps == r.steps);
    CHECK(back.diverged == r.diverged);
    CHECK(back.final_train_loss == r.final_train_loss);
    CHECK(back.max_decomp_rel_err == r.max_decomp_rel_err);
    CHECK(back.head_norm == r.head_norm);
    REQUIRE(back.has_eval);
    CHECK(back.final.acc_id == r.final.acc_id);
    CHECK(back.final.hnorm_mutual_std == r.final.hnorm_mutual_std);
    CHECK(back.final.hdist_skew == r.final.hdist_skew);
    CHECK(back.final.erank_eval == r.final.erank_eval);

    RunReport plain = sample_report("bt", 0);
    plain.has_eval = false;
    RunReport plain_back = run_report_from_json(run_report_to_json(plain));
    CHECK_FALSE(plain_back.has_eval);

    CHECK_THROWS_AS((void)run_report_from_json("{}"), format_error);
    CHECK_THROWS_AS((void)run_report_from_json("oops"), format_error);
}

TEST_CASE("rloo report round trips through json") {
    RlooReport r;
    r.label = "bt-bsr";
    r.seed = 2;
    r.beta = 0.05;
    r.steps = 40;
    r.diverged = false;
    r.final_proxy = 1.25;
    r.final_gold = 0.75;
    r.final_kl = 0.01;
    r.final_entropy = 1.5;
    r.max_abs_advantage_sum = 3e-13;
    RlooReport back = rloo_report_from_json(rloo_report_to_json(r));
    CHECK(back.label == r.label);
    CHECK(back.seed == r.seed);
    CHECK(back.beta == r.beta);
    CHECK(back.steps == r.steps);
    CHECK(back.final_proxy == r.final_proxy);
    CHECK(back.final_gold == r.final_gold);
    CHECK(back.final_kl == r.final_kl);
    CHECK(back.final_entropy == r.final_entropy);
    CHECK(back.max_abs_advantage_sum == r.max_abs_advantage_sum);
    CHECK_THROWS_AS((void)rloo_report_from_json("{}"), format_error);
}

TEST_CASE("train_one_run writes the full artifact set") {
    Fixture f;
    fs::path dir = fresh_dir("onerun");
    LossEntry entry;
    entry.label = "bt";
    RunReport report = train_one_run(f.world, f.bundle, entry, 3, {8, 6}, f.small_config(), dir);

    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "rm.ckpt"));
    CHECK(fs::exists(dir / "rm.meta.json"));
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "run.log"));

    CHECK(report.label == "bt");
    CHECK(report.seed == 3);
    CHECK(report.steps == 6);  // ceil(24 / 8) * 2 epochs
    CHECK(report.input_dim == 11);
    CHECK_FALSE(report.diverged);
    REQUIRE(report.has_eval);
    CHECK(report.final.acc_id >= 0.0);

    RunReport from_disk =
        run_report_from_json(binio::read_text_file(dir / "report.json"));
    CHECK(run_report_to_json(from_disk) == run_report_to_json(report));

    RewardModelParams params = load_checkpoint(dir / "rm.ckpt");
    CHECK(head_norm(params) == report.head_norm);

    // Everything except run.log is byte-stable on re-run.
    fs::path dir2 = fresh_dir("onerun2");
    train_one_run(f.world, f.bundle, entry, 3, {8, 6}, f.small_config(), dir2);
    CHECK(binio::read_text_file(dir / "metrics.csv") ==
          binio::read_text_file(dir2 / "metrics.csv"));
    CHECK(binio::read_file(dir / "rm.ckpt") == binio::read_file(dir2 / "rm.ckpt"));
    CHECK(binio::read_text_file(dir / "report.json") ==
          binio::read_text_file(dir2 / "report.json"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("worker_count respects the environment cap") {
    unsetenv("RMLAB_THREADS");
    CHECK(worker_count(0) == 0);
    CHECK(worker_count(1) == 1);
    setenv("RMLAB_THREADS", "3", 1);
    CHECK(worker_count(10) == 3);
    CHECK(worker_count(2) == 2);
    setenv("RMLAB_THREADS", "0", 1);
    CHECK_THROWS_AS((void)worker_count(4), config_error);
    setenv("RMLAB_THREADS", "zebra", 1);
    CHECK_THROWS_AS((void)worker_count(4), config_error);
    unsetenv("RMLAB_THREADS");
}

TEST_CASE("train_grid fans out and is independent of worker count") {
    Fixture f;
    std::vector<LossEntry> losses(2);
    losses[0].label = "bt";
    losses[1].label = "bsr";
    losses[1].spec.kind = LossKind::bt_bsr;
    std::vector<std::uint64_t> seeds = {0, 1};

    fs::path a = fresh_dir("grid_a");
    setenv("RMLAB_THREADS", "1", 1);
    std::vector<RunReport> ra =
        train_grid(f.world, f.bundle, losses, seeds, {8, 6}, f.small_config(), a);

    fs::path b = fresh_dir("grid_b");
    setenv("RMLAB_THREADS", "3", 1);
    std::vector<RunReport> rb =
        train_grid(f.world, f.bundle, losses, seeds, {8, 6}, f.small_config(), b);
    unsetenv("RMLAB_THREADS");

    REQUIRE(ra.size() == 4);
    REQUIRE(rb.size() == 4);
    CHECK(ra[0].label == "bt");
    CHECK(ra[0].seed == 0);
    CHECK(ra[3].label == "bsr");
    CHECK(ra[3].seed == 1);
    for (const char* run : {"bt/seed0", "bt/seed1", "bsr/seed0", "bsr/seed1"}) {
        CAPTURE(run);
        CHECK(fs::exists(a / run / "report.json"));
        CHECK(binio::read_text_file(a / run / "metrics.csv") ==
              binio::read_text_file(b / run / "metrics.csv"));
    }
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(run_report_to_json(ra[i]) == run_report_to_json(rb[i]));

    std::vector<RunReport> collected = collect_run_reports(a);
    CHECK(collected.size() == 4);
    // Lexicographic directory order: bsr before bt.
    CHECK(collected[0].label == "bsr");
    CHECK(collected[3].label == "bt");

    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("collect_run_reports requires at least one report") {
    fs::path dir = fresh_dir("collect_empty");
    CHECK_THROWS_AS((void)collect_run_reports(dir), missing_artifact_error);
    CHECK_THROWS_AS((void)collect_run_reports(dir / "nope"), missing_artifact_error);
    CHECK(collect_rloo_reports(dir).empty());
    fs::remove_all(dir);
}

TEST_CASE("gold scorer evaluates to perfect accuracy and rank correlation") {
    Fixture f;
    EvalReport r = evaluate_gold(f.world, f.bundle);
    CHECK(r.acc_id == 1.0);
    CHECK(std::abs(r.tau_prompt - 1.0) < 1e-12);
    CHECK(std::abs(r.tau_response - 1.0) < 1e-12);
    CHECK(std::abs(r.tau_mutual - 1.0) < 1e-12);
}

TEST_CASE("evaluate_params matches the training diagnostics hook") {
    Fixture f;
    RewardModelParams params = init_reward_model(11, {8, 6}, init_seed_for(3));
    RunReport r = evaluate_params(f.world, f.bundle, params);
    REQUIRE(r.has_eval);
    DiagSnapshot direct = make_diag_hook(f.world, f.bundle)(params, 0);
    CHECK(r.final.acc_id == direct.acc_id);
    CHECK(r.final.tau_mutual == direct.tau_mutual);
    CHECK(r.final.hnorm_mutual_std == direct.hnorm_mutual_std);
    CHECK(r.final.erank_eval == direct.erank_eval);
    CHECK(r.head_norm == head_norm(params));
}

TEST_CASE("summary aggregates match hand-recomputed moments") {
    std::vector<RunReport> reports;
    RunReport a = sample_report("bsr", 0);
    a.final.acc_id = 0.6;
    a.head_norm = 1.0;
    RunReport b = sample_report("bsr", 1);
    b.final.acc_id = 0.8;
    b.head_norm = 3.0;
    b.diverged = true;
    reports.push_back(a);
    reports.push_back(b);

    std::vector<RlooReport> rloo;
    for (std::uint64_t seed : {0, 1}) {
        RlooReport r;
        r.label = "bt";
        r.seed = seed;
        r.final_gold = seed == 0 ? 1.0 : 2.0;
        rloo.push_back(r);
        r.label = "bsr";
        r.final_gold = 1.5;
        rloo.push_back(r);
    }

    SummaryTable table = build_summary(reports, rloo);
    REQUIRE(table.rows.size() == 1);
    const SummaryRow& row = table.rows[0];
    CHECK(row.label == "bsr");
    CHECK(row.seeds == std::vector<std::uint64_t>{0, 1});
    CHECK(row.diverged == 1);

    auto find = [&row](const std::string& name) {
        for (const auto& [metric, stat] : row.metrics)
            if (metric == name) return stat;
        FAIL("missing metric ", name);
        return AggregateStat{};
    };
    AggregateStat acc = find("acc_id");
    CHECK(acc.count == 2);
    CHECK(acc.mean == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(acc.stddev == doctest::Approx(0.1).epsilon(1e-12));
    AggregateStat head = find("head_norm");
    CHECK(head.mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(head.stddev == doctest::Approx(1.0).epsilon(1e-12));
    AggregateStat gap = find("erank_gap_abs");
    CHECK(gap.mean == doctest::Approx(0.5).epsilon(1e-12));

    REQUIRE(table.rloo_tallies.size() == 1);
    CHECK(table.rloo_tallies[0].label == "bsr");
    CHECK(table.rloo_tallies[0].wins == 1);
    CHECK(table.rloo_tallies[0].total == 2);

    std::string text = summary_to_text(table);
    CHECK(text.find("bsr") != std::string::npos);
    CHECK(text.find("tally: bsr final gold >= bt on 1/2 matched seeds") != std::string::npos);

    std::string json_text = summary_to_json(table);
    CHECK(json_text.find("\"schema\": \"rmlab-summary\"") != std::string::npos);
    CHECK(json_text.find("\"wins\": 1") != std::string::npos);
}

TEST_CASE("eval-labelled reports are excluded from training summaries") {
    Fixture f;
    fs::path dir = fresh_dir("collect_eval");
    LossEntry entry;
    entry.label = "bt";
    train_one_run(f.world, f.bundle, entry, 0, {8, 6}, f.small_config(), dir / "bt" / "seed0");
    RewardModelParams params = load_checkpoint(dir / "bt" / "seed0" / "rm.ckpt");
    fs::create_directories(dir / "probe");
    binio::write_text_file(dir / "probe" / "report.json",
                           run_report_to_json(evaluate_params(f.world, f.bundle, params)));

    std::vector<RunReport> collected = collect_run_reports(dir);
    CHECK(collected.size() == 1);
    CHECK(collected[0].label == "bt");
    fs::remove_all(dir);
}

TEST_CASE("line charts render deterministic svg") {
    ChartSeries s1{"bt & co", {0, 1, 2}, {0.5, 0.25, 0.75}};
    ChartSeries s2{"bsr", {0, 1, 2}, {0.1, std::nan(""), 0.3}};
    std::string svg = render_line_chart("tau<sub>", {s1, s2});
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("bt &amp; co") != std::string::npos);
    CHECK(svg.find("tau&lt;sub&gt;") != std::string::npos);
    CHECK(svg == render_line_chart("tau<sub>", {s1, s2}));

    std::string empty = render_line_chart("empty", {});
    CHECK(empty.find("<svg") == 0);
}

TEST_CASE("report charts cover every logged series") {
    Fixture f;
    fs::path dir = fresh_dir("charts");
    LossEntry entry;
    entry.label = "bt";
    train_one_run(f.world, f.bundle, entry, 0, {8, 6}, f.small_config(), dir / "bt" / "seed0");

    std::vector<fs::path> charts = write_report_charts(dir);
    // One chart per metrics.csv column after the step axis.
    CHECK(charts.size() == 20);
    for (const fs::path& p : charts) {
        CAPTURE(p.string());
        CHECK(p.parent_path().filename() == "charts");
        CHECK(binio::read_text_file(p).find("<polyline") != std::string::npos);
    }
    CHECK(fs::exists(dir / "charts" / "train_train_loss.svg"));
    CHECK(fs::exists(dir / "charts" / "train_head_norm.svg"));
    CHECK(fs::exists(dir / "charts" / "train_erank_eval.svg"));
    fs::remove_all(dir);
}

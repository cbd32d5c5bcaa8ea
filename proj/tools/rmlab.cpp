#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace rmlab;

namespace {

struct CommonFlags {
    std::string config_path;
};

ExperimentConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return default_experiment_config();
    return load_experiment_config(path);
}

void cmd_gen_world(const std::string& config_path, const std::string& out,
                   std::uint64_t seed, bool seed_given, bool force) {
    ExperimentConfig cfg = load_config_or_default(config_path);
    if (seed_given) cfg.master_seed = seed;
    validate(cfg.world);
    validate_sizes(cfg.sizes, cfg.world);

    fs::path dir(out);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw config_error("output directory exists and is not empty: " + out +
                           " (use --force to overwrite)");

    GoldWorld world = generate_world(cfg.world, cfg.master_seed);
    DatasetBundle bundle = build_datasets(world, cfg.sizes, bundle_seed_for(cfg.master_seed));
    save_world_dir(world, bundle, dir);
    std::cout << "world " << cfg.master_seed << " -> " << out << " (prompts "
              << world.prompts.size() << ", train pairs " << bundle.d_train.size() << ")\n";
}

int cmd_train(const CLI::App& sub, const std::string& config_path, const std::string& world_dir,
              const std::string& out, const std::vector<std::string>& loss_names,
              const std::vector<std::string>& labels, double lambda, double margin,
              double norm_eps, const std::string& bsr_variant, std::size_t seed_count,
              const std::vector<std::uint64_t>& seed_list,
              const std::vector<std::size_t>& hidden, double lr, std::size_t batch_size,
              std::size_t epochs, const std::string& optimizer, const std::string& schedule,
              double warmup, std::size_t eval_every) {
    ExperimentConfig cfg = load_config_or_default(config_path);

    if (!loss_names.empty()) {
        if (!labels.empty() && labels.size() != loss_names.size())
            throw config_error("--label count must match --loss count");
        cfg.losses.clear();
        for (std::size_t i = 0; i < loss_names.size(); ++i) {
            LossEntry entry;
            entry.spec.kind = loss_kind_from_string(loss_names[i]);
            entry.label = i < labels.size() ? labels[i] : loss_names[i];
            cfg.losses.push_back(std::move(entry));
        }
    } else if (!labels.empty()) {
        throw config_error("--label requires --loss");
    }
    if (sub.count("--lambda"))
        for (LossEntry& entry : cfg.losses) entry.spec.lambda = lambda;
    if (sub.count("--margin"))
        for (LossEntry& entry : cfg.losses) entry.spec.margin = margin;
    if (sub.count("--norm-eps"))
        for (LossEntry& entry : cfg.losses) entry.spec.norm_eps = norm_eps;
    if (sub.count("--bsr-variant"))
        for (LossEntry& entry : cfg.losses)
            entry.spec.bsr_variant = bsr_variant_from_string(bsr_variant);

    if (!seed_list.empty()) {
        cfg.seeds = seed_list;
    } else if (sub.count("--seeds")) {
        cfg.seeds.clear();
        for (std::uint64_t s = 0; s < seed_count; ++s) cfg.seeds.push_back(s);
    }

    if (sub.count("--hidden")) cfg.hidden_widths = hidden;
    if (sub.count("--lr")) cfg.train.learning_rate = lr;
    if (sub.count("--batch-size")) cfg.train.batch_size = batch_size;
    if (sub.count("--epochs")) cfg.train.epochs = epochs;
    if (sub.count("--optimizer")) cfg.train.optimizer = optimizer_from_string(optimizer);
    if (sub.count("--schedule")) cfg.train.schedule = schedule_from_string(schedule);
    if (sub.count("--warmup-fraction")) cfg.train.warmup_fraction = warmup;
    if (sub.count("--eval-every")) cfg.train.eval_every = eval_every;

    WorldDir wd = load_world_dir(world_dir);
    cfg.world = wd.world.config;
    cfg.master_seed = wd.world.seed;
    cfg.sizes = wd.bundle.sizes;
    cfg.out_dir = out;
    validate(cfg);

    fs::create_directories(out);
    binio::write_text_file(fs::path(out) / "config.json", experiment_config_to_json(cfg));

    std::vector<RunReport> reports = train_grid(wd.world, wd.bundle, cfg.losses, cfg.seeds,
                                                cfg.hidden_widths, cfg.train, out);
    bool any_diverged = false;
    for (const RunReport& r : reports) {
        any_diverged = any_diverged || r.diverged;
        char loss_buf[32];
        std::snprintf(loss_buf, sizeof loss_buf, "%.6g", r.final_train_loss);
        std::cout << r.label << " seed " << r.seed << ": steps " << r.steps << ", final loss "
                  << loss_buf << (r.diverged ? " [diverged]" : "") << "\n";
    }
    std::cout << "wrote " << reports.size() << " runs to " << out << "\n";
    return any_diverged ? 3 : 0;
}

void cmd_eval(const std::string& world_dir, const std::string& checkpoint, bool gold,
              const std::string& out) {
    WorldDir wd = load_world_dir(world_dir);
    std::string text;
    if (gold) {
        text = eval_report_to_json(evaluate_gold(wd.world, wd.bundle));
    } else {
        RewardModelParams params = load_checkpoint(checkpoint);
        text = run_report_to_json(evaluate_params(wd.world, wd.bundle, params));
    }
    std::cout << text;
    if (!out.empty()) binio::write_text_file(out, text);
}

int cmd_rloo(const CLI::App& sub, const std::string& config_path, const std::string& world_dir,
             const std::string& rm_path, const std::string& out, const std::string& label,
             double beta, std::size_t steps, double lr, std::size_t k, std::size_t sets,
             std::size_t candidates, std::size_t prompts_per_step, std::uint64_t seed,
             bool kl_in_reward) {
    ExperimentConfig cfg = load_config_or_default(config_path);
    if (sub.count("--beta")) cfg.rloo.beta = beta;
    if (sub.count("--steps")) cfg.rloo.steps = steps;
    if (sub.count("--lr")) cfg.rloo.learning_rate = lr;
    if (sub.count("--k")) cfg.rloo.k = k;
    if (sub.count("--sets")) cfg.rloo_sets = sets;
    if (sub.count("--candidates")) cfg.rloo_candidates = candidates;
    if (sub.count("--prompts-per-step")) cfg.rloo.prompts_per_step = prompts_per_step;
    if (sub.count("--kl-in-reward")) cfg.rloo.kl_in_reward = kl_in_reward;
    cfg.rloo.seed = seed;

    if (cfg.rloo.k > cfg.rloo_candidates) throw config_error("rloo.k exceeds rloo.candidates");
    if (cfg.rloo.prompts_per_step > cfg.rloo_sets)
        throw config_error("rloo.prompts_per_step exceeds rloo.sets");

    WorldDir wd = load_world_dir(world_dir);
    RewardModelParams rm = load_checkpoint(rm_path);
    std::vector<CandidateSet> cand = build_candidate_sets(
        wd.world, cfg.rloo_sets, cfg.rloo_candidates, candidate_seed_for(wd.world.seed));
    RlooReport report = rloo_one_run(wd.world, cand, rm, label, cfg.rloo, out);

    char gold_buf[32], kl_buf[32];
    std::snprintf(gold_buf, sizeof gold_buf, "%.6g", report.final_gold);
    std::snprintf(kl_buf, sizeof kl_buf, "%.6g", report.final_kl);
    std::cout << "rloo " << label << " seed " << seed << ": steps " << report.steps
              << ", final gold " << gold_buf << ", final kl " << kl_buf
              << (report.diverged ? " [diverged]" : "") << "\n";
    return report.diverged ? 3 : 0;
}

void cmd_report(const std::string& dir, bool no_charts) {
    std::vector<RunReport> runs = collect_run_reports(dir);
    std::vector<RlooReport> rloo_runs = collect_rloo_reports(dir);
    SummaryTable table = build_summary(runs, rloo_runs);
    std::cout << summary_to_text(table);
    binio::write_text_file(fs::path(dir) / "summary.json", summary_to_json(table));
    if (!no_charts) {
        std::vector<fs::path> charts = write_report_charts(dir);
        std::cout << "\nwrote summary.json and " << charts.size() << " charts to " << dir << "\n";
    } else {
        std::cout << "\nwrote summary.json to " << dir << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic preference worlds, reward-model training, and policy probes"};
    app.require_subcommand(1);
    int exit_code = 0;

    auto* gen = app.add_subcommand("gen-world", "generate a world directory with datasets");
    std::string gen_config, gen_out;
    std::uint64_t gen_seed = 0;
    bool gen_force = false;
    gen->add_option("--config", gen_config, "experiment config JSON");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "master seed (overrides config)");
    gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");
    gen->callback([&] {
        cmd_gen_world(gen_config, gen_out, gen_seed, gen->count("--seed") > 0, gen_force);
    });

    auto* train = app.add_subcommand("train", "train reward models over a loss/seed grid");
    std::string tr_config, tr_world, tr_out, tr_optimizer, tr_schedule, tr_bsr_variant;
    std::vector<std::string> tr_losses, tr_labels;
    std::vector<std::uint64_t> tr_seed_list;
    std::vector<std::size_t> tr_hidden;
    double tr_lambda = 0.0, tr_margin = 0.0, tr_norm_eps = 0.0, tr_lr = 0.0, tr_warmup = 0.0;
    std::size_t tr_seeds = 0, tr_batch = 0, tr_epochs = 0, tr_eval_every = 0;
    train->add_option("--config", tr_config, "experiment config JSON");
    train->add_option("--world", tr_world, "world directory")->required();
    train->add_option("--out", tr_out, "output directory")->required();
    train->add_option("--loss", tr_losses, "loss kind (repeatable; replaces config losses)");
    train->add_option("--label", tr_labels, "run label per --loss (repeatable)");
    train->add_option("--lambda", tr_lambda, "regularizer weight override");
    train->add_option("--margin", tr_margin, "hinge margin override");
    train->add_option("--norm-eps", tr_norm_eps, "normalized-loss epsilon override");
    train->add_option("--bsr-variant", tr_bsr_variant, "squared_mean or mean_of_squares");
    train->add_option("--seeds", tr_seeds, "run seeds 0..N-1");
    train->add_option("--seed", tr_seed_list, "explicit seed (repeatable)");
    train->add_option("--hidden", tr_hidden, "hidden layer widths");
    train->add_option("--lr", tr_lr, "peak learning rate");
    train->add_option("--batch-size", tr_batch, "batch size");
    train->add_option("--epochs", tr_epochs, "epochs");
    train->add_option("--optimizer", tr_optimizer, "sgd or adam");
    train->add_option("--schedule", tr_schedule, "constant or linear_decay");
    train->add_option("--warmup-fraction", tr_warmup, "warmup fraction");
    train->add_option("--eval-every", tr_eval_every, "diagnostics cadence in steps");
    train->callback([&] {
        exit_code = cmd_train(*train, tr_config, tr_world, tr_out, tr_losses, tr_labels,
                              tr_lambda, tr_margin, tr_norm_eps, tr_bsr_variant, tr_seeds,
                              tr_seed_list, tr_hidden, tr_lr, tr_batch, tr_epochs, tr_optimizer,
                              tr_schedule, tr_warmup, tr_eval_every);
    });

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or the gold scorer");
    std::string ev_world, ev_ckpt, ev_out;
    bool ev_gold = false;
    eval->add_option("--world", ev_world, "world directory")->required();
    eval->add_option("--checkpoint", ev_ckpt, "reward model checkpoint");
    eval->add_flag("--gold", ev_gold, "evaluate the gold scorer instead of a checkpoint");
    eval->add_option("--out", ev_out, "write report JSON here");
    eval->callback([&] {
        if (ev_gold == !ev_ckpt.empty())
            throw config_error("eval needs exactly one of --checkpoint or --gold");
        cmd_eval(ev_world, ev_ckpt, ev_gold, ev_out);
    });

    auto* rloo = app.add_subcommand("rloo", "best-of-K policy tuning against a frozen reward model");
    std::string rl_config, rl_world, rl_rm, rl_out, rl_label = "policy";
    double rl_beta = 0.0, rl_lr = 0.0;
    std::size_t rl_steps = 0, rl_k = 0, rl_sets = 0, rl_candidates = 0, rl_pps = 0;
    std::uint64_t rl_seed = 0;
    bool rl_kl_in_reward = true;
    rloo->add_option("--config", rl_config, "experiment config JSON");
    rloo->add_option("--world", rl_world, "world directory")->required();
    rloo->add_option("--rm", rl_rm, "frozen reward model checkpoint")->required();
    rloo->add_option("--out", rl_out, "output directory")->required();
    rloo->add_option("--label", rl_label, "run label");
    rloo->add_option("--beta", rl_beta, "KL penalty weight");
    rloo->add_option("--steps", rl_steps, "update steps");
    rloo->add_option("--lr", rl_lr, "learning rate");
    rloo->add_option("--k", rl_k, "samples per prompt");
    rloo->add_option("--sets", rl_sets, "candidate sets");
    rloo->add_option("--candidates", rl_candidates, "candidates per set");
    rloo->add_option("--prompts-per-step", rl_pps, "prompts sampled per update");
    rloo->add_option("--seed", rl_seed, "run seed");
    rloo->add_option("--kl-in-reward", rl_kl_in_reward,
                     "apply the KL penalty inside the per-sample reward");
    rloo->callback([&] {
        exit_code = cmd_rloo(*rloo, rl_config, rl_world, rl_rm, rl_out, rl_label, rl_beta,
                             rl_steps, rl_lr, rl_k, rl_sets, rl_candidates, rl_pps, rl_seed,
                             rl_kl_in_reward);
    });

    auto* report = app.add_subcommand("report", "aggregate run reports into a summary");
    std::string rp_dir;
    bool rp_no_charts = false;
    report->add_option("--dir", rp_dir, "directory holding run outputs")->required();
    report->add_flag("--no-charts", rp_no_charts, "skip chart rendering");
    report->callback([&] { cmd_report(rp_dir, rp_no_charts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const divergence_error& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const missing_artifact_error& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 4;
    } catch (const format_error& e) {
        std::cerr << "malformed artifact: " << e.what() << "\n";
        return 4;
    } catch (const degenerate_input_error& e) {
        std::cerr << "degenerate input: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}

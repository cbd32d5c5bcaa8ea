#include "rmlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"

namespace rmlab {
using binio::read_text_file;
using binio::write_text_file;

namespace {

using nlohmann::json;

std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string timestamp() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json loss_to_json(const LossSpec& spec) {
    return json{{"kind", to_string(spec.kind)},
                {"lambda", spec.lambda},
                {"margin", spec.margin},
                {"norm_eps", spec.norm_eps},
                {"bsr_variant", to_string(spec.bsr_variant)}};
}

LossSpec loss_from_json(const json& j) {
    LossSpec spec;
    spec.kind = loss_kind_from_string(j.at("kind").get<std::string>());
    spec.lambda = j.at("lambda").get<double>();
    spec.margin = j.at("margin").get<double>();
    spec.norm_eps = j.at("norm_eps").get<double>();
    spec.bsr_variant = bsr_variant_from_string(j.at("bsr_variant").get<std::string>());
    return spec;
}

json config_to_json_obj(const ExperimentConfig& c) {
    json j;
    j["world"] = json::parse(world_config_to_json(c.world));
    j["sizes"] = json{{"train", c.sizes.train}, {"valid", c.sizes.valid}};
    j["master_seed"] = c.master_seed;
    j["hidden_widths"] = c.hidden_widths;
    json losses = json::array();
    for (const LossEntry& e : c.losses) {
        json entry = loss_to_json(e.spec);
        entry["label"] = e.label;
        losses.push_back(std::move(entry));
    }
    j["losses"] = std::move(losses);
    j["seeds"] = c.seeds;
    j["train"] = json{{"learning_rate", c.train.learning_rate},
                      {"batch_size", c.train.batch_size},
                      {"epochs", c.train.epochs},
                      {"optimizer", to_string(c.train.optimizer)},
                      {"adam_beta1", c.train.adam_beta1},
                      {"adam_beta2", c.train.adam_beta2},
                      {"adam_eps", c.train.adam_eps},
                      {"warmup_fraction", c.train.warmup_fraction},
                      {"schedule", to_string(c.train.schedule)},
                      {"eval_every", c.train.eval_every}};
    j["rloo"] = json{{"k", c.rloo.k},
                     {"beta", c.rloo.beta},
                     {"learning_rate", c.rloo.learning_rate},
                     {"steps", c.rloo.steps},
                     {"prompts_per_step", c.rloo.prompts_per_step},
                     {"kl_in_reward", c.rloo.kl_in_reward},
                     {"sets", c.rloo_sets},
                     {"candidates", c.rloo_candidates},
                     {"losses", c.rloo_losses}};
    j["out_dir"] = c.out_dir;
    return j;
}

// A loss entry may be partial; missing fields take the LossSpec defaults and
// a missing label falls back to the kind name.
LossEntry loss_entry_from_json(const json& j) {
    static const std::set<std::string> known = {"label", "kind",     "lambda",
                                                "margin", "norm_eps", "bsr_variant"};
    if (!j.is_object()) throw config_error("loss entries must be objects");
    for (const auto& item : j.items()) {
        if (!known.count(item.key()))
            throw config_error("unknown config key: losses." + item.key());
    }
    LossSpec defaults;
    LossEntry entry;
    std::string kind = j.value("kind", std::string("bt"));
    entry.spec.kind = loss_kind_from_string(kind);
    entry.spec.lambda = j.value("lambda", defaults.lambda);
    entry.spec.margin = j.value("margin", defaults.margin);
    entry.spec.norm_eps = j.value("norm_eps", defaults.norm_eps);
    entry.spec.bsr_variant =
        bsr_variant_from_string(j.value("bsr_variant", to_string(defaults.bsr_variant)));
    entry.label = j.value("label", kind);
    return entry;
}

void check_keys(const json& user, const json& schema, const std::string& prefix) {
    for (const auto& item : user.items()) {
        if (!schema.contains(item.key()))
            throw config_error("unknown config key: " + prefix + item.key());
        const json& ref = schema.at(item.key());
        if (item.value().is_object() && ref.is_object())
            check_keys(item.value(), ref, prefix + item.key() + ".");
    }
}

ExperimentConfig config_from_json_obj(const json& j) {
    ExperimentConfig c;
    c.world = world_config_from_json(j.at("world").dump());
    c.sizes.train = j.at("sizes").at("train").get<std::size_t>();
    c.sizes.valid = j.at("sizes").at("valid").get<std::size_t>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    c.losses.clear();
    for (const json& entry : j.at("losses")) c.losses.push_back(loss_entry_from_json(entry));
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    const json& t = j.at("train");
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.optimizer = optimizer_from_string(t.at("optimizer").get<std::string>());
    c.train.adam_beta1 = t.at("adam_beta1").get<double>();
    c.train.adam_beta2 = t.at("adam_beta2").get<double>();
    c.train.adam_eps = t.at("adam_eps").get<double>();
    c.train.warmup_fraction = t.at("warmup_fraction").get<double>();
    c.train.schedule = schedule_from_string(t.at("schedule").get<std::string>());
    c.train.eval_every = t.at("eval_every").get<std::size_t>();
    const json& r = j.at("rloo");
    c.rloo.k = r.at("k").get<std::size_t>();
    c.rloo.beta = r.at("beta").get<double>();
    c.rloo.learning_rate = r.at("learning_rate").get<double>();
    c.rloo.steps = r.at("steps").get<std::size_t>();
    c.rloo.prompts_per_step = r.at("prompts_per_step").get<std::size_t>();
    c.rloo.kl_in_reward = r.at("kl_in_reward").get<bool>();
    c.rloo_sets = r.at("sets").get<std::size_t>();
    c.rloo_candidates = r.at("candidates").get<std::size_t>();
    c.rloo_losses = r.at("losses").get<std::vector<std::string>>();
    c.out_dir = j.at("out_dir").get<std::string>();
    return c;
}

json snapshot_to_json(const DiagSnapshot& s) {
    return json{{"acc_id", s.acc_id},
                {"tau_prompt", s.tau_prompt},
                {"tau_response", s.tau_response},
                {"tau_mutual", s.tau_mutual},
                {"hnorm_id_mean", s.hnorm_id_mean},
                {"hnorm_id_std", s.hnorm_id_std},
                {"hnorm_prompt_mean", s.hnorm_prompt_mean},
                {"hnorm_prompt_std", s.hnorm_prompt_std},
                {"hnorm_response_mean", s.hnorm_response_mean},
                {"hnorm_response_std", s.hnorm_response_std},
                {"hnorm_mutual_mean", s.hnorm_mutual_mean},
                {"hnorm_mutual_std", s.hnorm_mutual_std},
                {"hdist_mean", s.hdist_mean},
                {"hdist_std", s.hdist_std},
                {"hdist_skew", s.hdist_skew},
                {"erank_train", s.erank_train},
                {"erank_eval", s.erank_eval}};
}

DiagSnapshot snapshot_from_json(const json& j) {
    DiagSnapshot s;
    s.acc_id = j.at("acc_id").get<double>();
    s.tau_prompt = j.at("tau_prompt").get<double>();
    s.tau_response = j.at("tau_response").get<double>();
    s.tau_mutual = j.at("tau_mutual").get<double>();
    s.hnorm_id_mean = j.at("hnorm_id_mean").get<double>();
    s.hnorm_id_std = j.at("hnorm_id_std").get<double>();
    s.hnorm_prompt_mean = j.at("hnorm_prompt_mean").get<double>();
    s.hnorm_prompt_std = j.at("hnorm_prompt_std").get<double>();
    s.hnorm_response_mean = j.at("hnorm_response_mean").get<double>();
    s.hnorm_response_std = j.at("hnorm_response_std").get<double>();
    s.hnorm_mutual_mean = j.at("hnorm_mutual_mean").get<double>();
    s.hnorm_mutual_std = j.at("hnorm_mutual_std").get<double>();
    s.hdist_mean = j.at("hdist_mean").get<double>();
    s.hdist_std = j.at("hdist_std").get<double>();
    s.hdist_skew = j.at("hdist_skew").get<double>();
    s.erank_train = j.at("erank_train").get<double>();
    s.erank_eval = j.at("erank_eval").get<double>();
    return s;
}

AggregateStat aggregate(const std::vector<double>& values) {
    AggregateStat stat;
    stat.count = values.size();
    if (values.empty()) return stat;
    MomentStats m = moments(values);
    stat.mean = m.mean;
    stat.stddev = m.stddev;
    return stat;
}

std::string escape_xml(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char ch : text) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell += ch;
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    CsvTable table;
    std::string line;
    if (std::getline(in, line)) table.columns = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.rows.push_back(split_csv_line(line));
    }
    return table;
}

}  // namespace

ExperimentConfig default_experiment_config() {
    ExperimentConfig c;
    for (LossKind kind : {LossKind::bt, LossKind::bt_bsr, LossKind::bt_norm, LossKind::bt_hinge,
                          LossKind::bt_dr}) {
        LossEntry entry;
        entry.spec.kind = kind;
        // The toy rewards live on a much smaller scale than LLM logits, so the
        // batch-reward penalty needs a correspondingly larger weight here.
        if (kind == LossKind::bt_bsr) entry.spec.lambda = 0.15;
        entry.label = to_string(kind);
        c.losses.push_back(std::move(entry));
    }
    // Schedule chosen by sweeping the acceptance grid: long enough for the
    // generalization gaps between loss kinds to open up, gentle enough that
    // plain BT keeps its head norm near one.
    c.train.learning_rate = 2e-3;
    c.train.batch_size = 64;
    c.train.epochs = 22;
    return c;
}

void validate(const ExperimentConfig& config) {
    validate(config.world);
    validate_sizes(config.sizes, config.world);
    TrainConfig train = config.train;
    validate(train);
    validate(config.rloo);
    if (config.hidden_widths.empty()) throw config_error("hidden_widths must be non-empty");
    for (std::size_t w : config.hidden_widths)
        if (w == 0) throw config_error("hidden widths must be positive");
    if (config.losses.empty()) throw config_error("losses must be non-empty");
    std::set<std::string> labels;
    for (const LossEntry& entry : config.losses) {
        if (entry.label.empty()) throw config_error("loss labels must be non-empty");
        if (entry.label.find('/') != std::string::npos)
            throw config_error("loss label may not contain '/': " + entry.label);
        if (!labels.insert(entry.label).second)
            throw config_error("duplicate loss label: " + entry.label);
    }
    if (config.seeds.empty()) throw config_error("seeds must be non-empty");
    std::set<std::uint64_t> seeds(config.seeds.begin(), config.seeds.end());
    if (seeds.size() != config.seeds.size()) throw config_error("seeds must be distinct");
    if (config.rloo_sets == 0) throw config_error("rloo.sets must be positive");
    if (config.rloo_candidates < 2) throw config_error("rloo.candidates must be at least 2");
    if (config.rloo.k > config.rloo_candidates)
        throw config_error("rloo.k exceeds rloo.candidates");
    if (config.rloo.prompts_per_step > config.rloo_sets)
        throw config_error("rloo.prompts_per_step exceeds rloo.sets");
    if (config.out_dir.empty()) throw config_error("out_dir must be non-empty");
}

std::string experiment_config_to_json(const ExperimentConfig& config) {
    return config_to_json_obj(config).dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json user;
    try {
        user = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config parse failure: ") + e.what());
    }
    if (!user.is_object()) throw config_error("config root must be a JSON object");
    json merged = config_to_json_obj(default_experiment_config());
    check_keys(user, merged, "");
    merged.merge_patch(user);
    try {
        return config_from_json_obj(merged);
    } catch (const json::exception& e) {
        throw config_error(std::string("invalid config value: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    return experiment_config_from_json(read_text_file(path));
}

std::uint64_t bundle_seed_for(std::uint64_t world_seed) {
    return derive_stream_seed(world_seed, "datasets");
}

std::uint64_t candidate_seed_for(std::uint64_t world_seed) {
    return derive_stream_seed(world_seed, "candidates");
}

std::uint64_t init_seed_for(std::uint64_t run_seed) {
    return derive_stream_seed(run_seed, "rm-init");
}

std::uint64_t policy_seed_for(std::uint64_t run_seed) {
    return derive_stream_seed(run_seed, "policy-init");
}

void save_world_dir(const GoldWorld& world, const DatasetBundle& bundle,
                    const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_world(world, dir / "world.json");
    save_bundle(bundle, world.config.dim_y, dir / "datasets.bin");
}

WorldDir load_world_dir(const std::filesystem::path& dir) {
    WorldDir wd;
    wd.world = load_world(dir / "world.json");
    wd.bundle = load_bundle(dir / "datasets.bin");
    return wd;
}

std::string run_report_to_json(const RunReport& report) {
    json j;
    j["schema"] = "rmlab-run-report";
    j["version"] = 1;
    j["label"] = report.label;
    j["loss"] = loss_to_json(report.loss);
    j["seed"] = report.seed;
    j["input_dim"] = report.input_dim;
    j["hidden_widths"] = report.hidden_widths;
    j["steps"] = report.steps;
    j["diverged"] = report.diverged;
    j["final_train_loss"] = report.final_train_loss;
    j["max_decomp_rel_err"] = report.max_decomp_rel_err;
    j["head_norm"] = report.head_norm;
    j["eval"] = report.has_eval ? snapshot_to_json(report.final) : json(nullptr);
    return j.dump(2) + "\n";
}

RunReport run_report_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        if (j.value("schema", std::string()) != "rmlab-run-report")
            throw format_error("not a run report");
        RunReport r;
        r.label = j.at("label").get<std::string>();
        r.loss = loss_from_json(j.at("loss"));
        r.seed = j.at("seed").get<std::uint64_t>();
        r.input_dim = j.at("input_dim").get<std::size_t>();
        r.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
        r.steps = j.at("steps").get<std::size_t>();
        r.diverged = j.at("diverged").get<bool>();
        r.final_train_loss = j.at("final_train_loss").get<double>();
        r.max_decomp_rel_err = j.at("max_decomp_rel_err").get<double>();
        r.head_norm = j.at("head_norm").get<double>();
        if (!j.at("eval").is_null()) {
            r.has_eval = true;
            r.final = snapshot_from_json(j.at("eval"));
        }
        return r;
    } catch (const json::exception& e) {
        throw format_error(std::string("run report parse failure: ") + e.what());
    }
}

DiagHook make_diag_hook(const GoldWorld& world, const DatasetBundle& bundle) {
    auto id_inputs = std::make_shared<std::vector<std::vector<double>>>(
        concat_inputs(world, std::span(bundle.d_id)));
    auto prompt_inputs = std::make_shared<std::vector<std::vector<double>>>(
        concat_inputs(world, std::span(bundle.d_prompt_ood)));
    auto response_inputs = std::make_shared<std::vector<std::vector<double>>>(
        concat_inputs(world, std::span(bundle.d_response_ood)));
    auto mutual_inputs = std::make_shared<std::vector<std::vector<double>>>(
        concat_inputs(world, std::span(bundle.d_mutual_ood)));
    return [&world, &bundle, id_inputs, prompt_inputs, response_inputs,
            mutual_inputs](const RewardModelParams& params, std::size_t) {
        DiagSnapshot s;
        EvalReport er = eval_all(params, world, bundle);
        s.acc_id = er.acc_id;
        s.tau_prompt = er.tau_prompt;
        s.tau_response = er.tau_response;
        s.tau_mutual = er.tau_mutual;
        MomentStats m = norm_dispersion(params, *id_inputs).norms;
        s.hnorm_id_mean = m.mean;
        s.hnorm_id_std = m.stddev;
        m = norm_dispersion(params, *prompt_inputs).norms;
        s.hnorm_prompt_mean = m.mean;
        s.hnorm_prompt_std = m.stddev;
        m = norm_dispersion(params, *response_inputs).norms;
        s.hnorm_response_mean = m.mean;
        s.hnorm_response_std = m.stddev;
        m = norm_dispersion(params, *mutual_inputs).norms;
        s.hnorm_mutual_mean = m.mean;
        s.hnorm_mutual_std = m.stddev;
        MomentStats d = hidden_distance_stats(params, world, std::span(bundle.d_train)).distances;
        s.hdist_mean = d.mean;
        s.hdist_std = d.stddev;
        s.hdist_skew = d.skewness;
        ErankReport er2 = erank_gap(params, world, bundle);
        s.erank_train = er2.erank_train;
        s.erank_eval = er2.erank_eval;
        return s;
    };
}

RunReport train_one_run(const GoldWorld& world, const DatasetBundle& bundle,
                        const LossEntry& entry, std::uint64_t seed,
                        const std::vector<std::size_t>& hidden_widths,
                        const TrainConfig& base, const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    std::ofstream log(run_dir / "run.log");
    log << timestamp() << " train start label=" << entry.label << " seed=" << seed << "\n";

    TrainConfig config = base;
    config.loss = entry.spec;
    config.seed = seed;
    validate(config);

    std::size_t input_dim = world.config.dim_x + world.config.dim_y;
    RewardModelParams init = init_reward_model(input_dim, hidden_widths, init_seed_for(seed));
    TrainResult result = train_rm(init, world, bundle, config, make_diag_hook(world, bundle));

    write_metrics_csv(result.log, run_dir / "metrics.csv");
    save_checkpoint(result.params, run_dir / "rm.ckpt");
    json meta;
    meta["schema"] = "rmlab-rm-meta";
    meta["version"] = 1;
    meta["label"] = entry.label;
    meta["loss"] = loss_to_json(entry.spec);
    meta["seed"] = seed;
    meta["init_seed"] = init_seed_for(seed);
    meta["hidden_widths"] = hidden_widths;
    meta["steps"] = result.steps_completed;
    meta["diverged"] = result.diverged;
    write_text_file(run_dir / "rm.meta.json", meta.dump(2) + "\n");

    RunReport report;
    report.label = entry.label;
    report.loss = entry.spec;
    report.seed = seed;
    report.input_dim = input_dim;
    report.hidden_widths = hidden_widths;
    report.steps = result.steps_completed;
    report.diverged = result.diverged;
    if (!result.log.records.empty()) report.final_train_loss = result.log.records.back().train_loss;
    report.max_decomp_rel_err = result.log.max_decomp_rel_err;
    report.head_norm = head_norm(result.params);
    for (auto it = result.log.records.rbegin(); it != result.log.records.rend(); ++it) {
        if (it->has_snapshot) {
            report.has_eval = true;
            report.final = it->snapshot;
            break;
        }
    }
    write_text_file(run_dir / "report.json", run_report_to_json(report));

    log << timestamp() << " train end steps=" << result.steps_completed
        << " diverged=" << (result.diverged ? 1 : 0) << "\n";
    return report;
}

std::size_t worker_count(std::size_t jobs) {
    if (jobs == 0) return 0;
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("RMLAB_THREADS")) {
        char* end = nullptr;
        unsigned long value = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || value == 0)
            throw config_error("RMLAB_THREADS must be a positive integer");
        cap = static_cast<std::size_t>(value);
    }
    return std::min(jobs, cap);
}

std::vector<RunReport> train_grid(const GoldWorld& world, const DatasetBundle& bundle,
                                  const std::vector<LossEntry>& losses,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::vector<std::size_t>& hidden_widths,
                                  const TrainConfig& base,
                                  const std::filesystem::path& out_dir) {
    struct Job {
        const LossEntry* entry;
        std::uint64_t seed;
        std::filesystem::path dir;
    };
    std::vector<Job> jobs;
    for (const LossEntry& entry : losses)
        for (std::uint64_t seed : seeds)
            jobs.push_back({&entry, seed, out_dir / entry.label / ("seed" + std::to_string(seed))});

    std::vector<RunReport> reports(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) break;
            try {
                reports[i] = train_one_run(world, bundle, *jobs[i].entry, jobs[i].seed,
                                           hidden_widths, base, jobs[i].dir);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    std::size_t workers = worker_count(jobs.size());
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
    return reports;
}

RunReport evaluate_params(const GoldWorld& world, const DatasetBundle& bundle,
                          const RewardModelParams& params) {
    RunReport report;
    report.label = "eval";
    report.input_dim = params.input_dim;
    report.hidden_widths = params.hidden_widths;
    report.head_norm = head_norm(params);
    report.has_eval = true;
    report.final = make_diag_hook(world, bundle)(params, 0);
    return report;
}

EvalReport evaluate_gold(const GoldWorld& world, const DatasetBundle& bundle) {
    Scorer gold = make_gold_scorer(world);
    EvalReport report;
    report.acc_id = eval_accuracy(gold, world, std::span(bundle.d_id));
    report.tau_prompt = eval_tau(gold, world, std::span(bundle.d_prompt_ood));
    report.tau_response = eval_tau(gold, world, std::span(bundle.d_response_ood));
    report.tau_mutual = eval_tau(gold, world, std::span(bundle.d_mutual_ood));
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    json j;
    j["schema"] = "rmlab-eval-report";
    j["version"] = 1;
    j["acc_id"] = report.acc_id;
    j["tau_prompt"] = report.tau_prompt;
    j["tau_response"] = report.tau_response;
    j["tau_mutual"] = report.tau_mutual;
    return j.dump(2) + "\n";
}

std::string rloo_report_to_json(const RlooReport& report) {
    json j;
    j["schema"] = "rmlab-rloo-report";
    j["version"] = 1;
    j["label"] = report.label;
    j["seed"] = report.seed;
    j["beta"] = report.beta;
    j["steps"] = report.steps;
    j["diverged"] = report.diverged;
    j["final_proxy"] = report.final_proxy;
    j["final_gold"] = report.final_gold;
    j["final_kl"] = report.final_kl;
    j["final_entropy"] = report.final_entropy;
    j["max_abs_advantage_sum"] = report.max_abs_advantage_sum;
    return j.dump(2) + "\n";
}

RlooReport rloo_report_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        if (j.value("schema", std::string()) != "rmlab-rloo-report")
            throw format_error("not an rloo report");
        RlooReport r;
        r.label = j.at("label").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.beta = j.at("beta").get<double>();
        r.steps = j.at("steps").get<std::size_t>();
        r.diverged = j.at("diverged").get<bool>();
        r.final_proxy = j.at("final_proxy").get<double>();
        r.final_gold = j.at("final_gold").get<double>();
        r.final_kl = j.at("final_kl").get<double>();
        r.final_entropy = j.at("final_entropy").get<double>();
        r.max_abs_advantage_sum = j.at("max_abs_advantage_sum").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw format_error(std::string("rloo report parse failure: ") + e.what());
    }
}

RlooReport rloo_one_run(const GoldWorld& world, const std::vector<CandidateSet>& sets,
                        const RewardModelParams& rm_params, const std::string& label,
                        const RLOOConfig& config, const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    std::ofstream log(run_dir / "run.log");
    log << timestamp() << " rloo start label=" << label << " seed=" << config.seed << "\n";

    validate(config);
    std::size_t input_dim = world.config.dim_x + world.config.dim_y;
    PolicyParams init =
        init_reward_model(input_dim, rm_params.hidden_widths, policy_seed_for(config.seed));
    RLOOResult result = rloo_train(init, init, rm_params, world, sets, config);

    write_rloo_metrics_csv(result.log, run_dir / "rloo_metrics.csv");
    save_checkpoint(result.policy, run_dir / "policy.ckpt", "PLCY");

    RlooReport report;
    report.label = label;
    report.seed = config.seed;
    report.beta = config.beta;
    report.steps = result.steps_completed;
    report.diverged = result.diverged;
    if (!result.log.records.empty()) {
        const RLOOStepRecord& last = result.log.records.back();
        report.final_proxy = last.proxy_reward_mean;
        report.final_gold = last.gold_reward_mean;
        report.final_kl = last.kl;
        report.final_entropy = last.entropy;
    }
    report.max_abs_advantage_sum = result.log.max_abs_advantage_sum;
    write_text_file(run_dir / "rloo_report.json", rloo_report_to_json(report));

    log << timestamp() << " rloo end steps=" << result.steps_completed
        << " diverged=" << (result.diverged ? 1 : 0) << "\n";
    return report;
}

namespace {

std::vector<std::filesystem::path> find_files(const std::filesystem::path& out_dir,
                                              const std::string& filename) {
    if (!std::filesystem::exists(out_dir))
        throw missing_artifact_error("no such directory: " + out_dir.string());
    std::vector<std::filesystem::path> found;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir)) {
        if (entry.is_regular_file() && entry.path().filename() == filename)
            found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end(),
              [](const auto& a, const auto& b) { return a.generic_string() < b.generic_string(); });
    return found;
}

}  // namespace

std::vector<RunReport> collect_run_reports(const std::filesystem::path& out_dir) {
    std::vector<RunReport> reports;
    for (const auto& path : find_files(out_dir, "report.json")) {
        RunReport r = run_report_from_json(read_text_file(path));
        if (r.label != "eval") reports.push_back(std::move(r));
    }
    if (reports.empty())
        throw missing_artifact_error("no run reports under " + out_dir.string());
    return reports;
}

std::vector<RlooReport> collect_rloo_reports(const std::filesystem::path& out_dir) {
    std::vector<RlooReport> reports;
    for (const auto& path : find_files(out_dir, "rloo_report.json"))
        reports.push_back(rloo_report_from_json(read_text_file(path)));
    return reports;
}

SummaryTable build_summary(const std::vector<RunReport>& reports,
                           const std::vector<RlooReport>& rloo_runs) {
    SummaryTable table;
    std::map<std::string, std::vector<const RunReport*>> by_label;
    for (const RunReport& r : reports) by_label[r.label].push_back(&r);

    for (auto& [label, runs] : by_label) {
        std::sort(runs.begin(), runs.end(),
                  [](const RunReport* a, const RunReport* b) { return a->seed < b->seed; });
        SummaryRow row;
        row.label = label;
        row.loss = runs.front()->loss;
        for (const RunReport* r : runs) {
            row.seeds.push_back(r->seed);
            if (r->diverged) ++row.diverged;
        }
        auto gather = [&runs](auto&& get) {
            std::vector<double> values;
            for (const RunReport* r : runs)
                if (r->has_eval) values.push_back(get(*r));
            return values;
        };
        std::vector<double> head_norms, losses;
        for (const RunReport* r : runs) {
            head_norms.push_back(r->head_norm);
            losses.push_back(r->final_train_loss);
        }
        row.metrics = {
            {"acc_id", aggregate(gather([](const RunReport& r) { return r.final.acc_id; }))},
            {"tau_prompt",
             aggregate(gather([](const RunReport& r) { return r.final.tau_prompt; }))},
            {"tau_response",
             aggregate(gather([](const RunReport& r) { return r.final.tau_response; }))},
            {"tau_mutual",
             aggregate(gather([](const RunReport& r) { return r.final.tau_mutual; }))},
            {"head_norm", aggregate(head_norms)},
            {"hnorm_mutual_std",
             aggregate(gather([](const RunReport& r) { return r.final.hnorm_mutual_std; }))},
            {"hdist_std", aggregate(gather([](const RunReport& r) { return r.final.hdist_std; }))},
            {"erank_train",
             aggregate(gather([](const RunReport& r) { return r.final.erank_train; }))},
            {"erank_eval",
             aggregate(gather([](const RunReport& r) { return r.final.erank_eval; }))},
            {"erank_gap_abs", aggregate(gather([](const RunReport& r) {
                 return std::abs(r.final.erank_eval - r.final.erank_train);
             }))},
            {"final_train_loss", aggregate(losses)},
        };
        table.rows.push_back(std::move(row));
    }

    table.rloo_runs = rloo_runs;
    std::sort(table.rloo_runs.begin(), table.rloo_runs.end(),
              [](const RlooReport& a, const RlooReport& b) {
                  return a.label != b.label ? a.label < b.label : a.seed < b.seed;
              });

    std::map<std::uint64_t, double> baseline;
    for (const RlooReport& r : table.rloo_runs)
        if (r.label == "bt") baseline[r.seed] = r.final_gold;
    std::map<std::string, RlooTally> tallies;
    for (const RlooReport& r : table.rloo_runs) {
        if (r.label == "bt") continue;
        auto it = baseline.find(r.seed);
        if (it == baseline.end()) continue;
        RlooTally& tally = tallies[r.label];
        tally.label = r.label;
        ++tally.total;
        if (r.final_gold >= it->second) ++tally.wins;
    }
    for (auto& [label, tally] : tallies) table.rloo_tallies.push_back(tally);
    return table;
}

std::string summary_to_json(const SummaryTable& table) {
    json j;
    j["schema"] = "rmlab-summary";
    j["version"] = 1;
    json rows = json::array();
    for (const SummaryRow& row : table.rows) {
        json r;
        r["label"] = row.label;
        r["loss"] = loss_to_json(row.loss);
        r["seeds"] = row.seeds;
        r["diverged"] = row.diverged;
        json metrics;
        for (const auto& [name, stat] : row.metrics)
            metrics[name] = json{{"count", stat.count}, {"mean", stat.mean},
                                 {"stddev", stat.stddev}};
        r["metrics"] = std::move(metrics);
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    json runs = json::array();
    for (const RlooReport& r : table.rloo_runs) runs.push_back(json::parse(rloo_report_to_json(r)));
    json tallies = json::array();
    for (const RlooTally& t : table.rloo_tallies)
        tallies.push_back(json{{"label", t.label}, {"wins", t.wins}, {"total", t.total}});
    j["rloo"] = json{{"runs", std::move(runs)}, {"tallies", std::move(tallies)}};
    return j.dump(2) + "\n";
}

namespace {

std::string stat_cell(const AggregateStat& stat) {
    if (stat.count == 0) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f±%.4f", stat.mean, stat.stddev);
    return buf;
}

// Column width in display characters; UTF-8 continuation bytes don't count.
std::size_t display_width(const std::string& text) {
    std::size_t width = 0;
    for (unsigned char ch : text)
        if ((ch & 0xC0) != 0x80) ++width;
    return width;
}

void append_table(std::string& out, const std::vector<std::vector<std::string>>& cells) {
    if (cells.empty()) return;
    std::vector<std::size_t> widths(cells.front().size(), 0);
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i)
            widths[i] = std::max(widths[i], display_width(row[i]));
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out += row[i];
            if (i + 1 < row.size()) out.append(widths[i] - display_width(row[i]) + 2, ' ');
        }
        out += "\n";
    }
}

}  // namespace

std::string summary_to_text(const SummaryTable& table) {
    std::string out;
    static const char* const kMain[] = {"acc_id", "tau_prompt", "tau_response", "tau_mutual",
                                        "head_norm", "erank_gap_abs"};
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header = {"label", "seeds", "div"};
    for (const char* name : kMain) header.push_back(name);
    cells.push_back(header);
    for (const SummaryRow& row : table.rows) {
        std::vector<std::string> line = {row.label, std::to_string(row.seeds.size()),
                                         std::to_string(row.diverged)};
        for (const char* name : kMain) {
            auto it = std::find_if(row.metrics.begin(), row.metrics.end(),
                                   [&](const auto& m) { return m.first == name; });
            line.push_back(it != row.metrics.end() ? stat_cell(it->second) : "-");
        }
        cells.push_back(std::move(line));
    }
    append_table(out, cells);

    static const char* const kExtra[] = {"hnorm_mutual_std", "hdist_std", "erank_train",
                                         "erank_eval", "final_train_loss"};
    out += "\ndispersion and spectrum:\n";
    cells.clear();
    header = {"label"};
    for (const char* name : kExtra) header.push_back(name);
    cells.push_back(header);
    for (const SummaryRow& row : table.rows) {
        std::vector<std::string> line = {row.label};
        for (const char* name : kExtra) {
            auto it = std::find_if(row.metrics.begin(), row.metrics.end(),
                                   [&](const auto& m) { return m.first == name; });
            line.push_back(it != row.metrics.end() ? stat_cell(it->second) : "-");
        }
        cells.push_back(std::move(line));
    }
    append_table(out, cells);

    if (!table.rloo_runs.empty()) {
        out += "\nrloo runs:\n";
        cells.clear();
        cells.push_back({"label", "seed", "beta", "steps", "final_gold", "final_kl",
                         "final_entropy", "diverged"});
        for (const RlooReport& r : table.rloo_runs) {
            char gold[32], kl[32], ent[32], beta[32];
            std::snprintf(gold, sizeof gold, "%.4f", r.final_gold);
            std::snprintf(kl, sizeof kl, "%.4f", r.final_kl);
            std::snprintf(ent, sizeof ent, "%.4f", r.final_entropy);
            std::snprintf(beta, sizeof beta, "%g", r.beta);
            cells.push_back({r.label, std::to_string(r.seed), beta, std::to_string(r.steps), gold,
                             kl, ent, r.diverged ? "yes" : "no"});
        }
        append_table(out, cells);
        for (const RlooTally& t : table.rloo_tallies) {
            out += "tally: " + t.label + " final gold >= bt on " + std::to_string(t.wins) + "/" +
                   std::to_string(t.total) + " matched seeds\n";
        }
    }
    return out;
}

std::string render_line_chart(const std::string& title,
                              const std::vector<ChartSeries>& series) {
    static const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);
    const double width = 720.0, plot_h = 360.0;
    const double left = 64.0, right = 16.0, top = 32.0, bottom = 36.0;
    const double px = width - left - right;

    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    bool any = false;
    for (const ChartSeries& s : series) {
        for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
            if (!any) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.xs[i]);
                xmax = std::max(xmax, s.xs[i]);
                ymin = std::min(ymin, s.ys[i]);
                ymax = std::max(ymax, s.ys[i]);
            }
        }
    }
    if (!any) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (xmax == xmin) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if (ymax == ymin) {
        ymin -= 1.0;
        ymax += 1.0;
    }

    const std::size_t legend_cols = 3;
    const std::size_t legend_rows = series.empty() ? 0 : (series.size() + legend_cols - 1) / legend_cols;
    const double legend_h = static_cast<double>(legend_rows) * 18.0 + (legend_rows ? 8.0 : 0.0);
    const double height = top + plot_h + bottom + legend_h;
    const double py = plot_h;

    auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * px; };
    auto sy = [&](double y) { return top + py - (y - ymin) / (ymax - ymin) * py; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(width) + "\" height=\"" +
           fmt2(height) + "\" viewBox=\"0 0 " + fmt2(width) + " " + fmt2(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt2(width / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
           escape_xml(title) + "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        double fx = xmin + (xmax - xmin) * i / 4.0;
        double fy = ymin + (ymax - ymin) * i / 4.0;
        double gx = sx(fx), gy = sy(fy);
        svg += "<line x1=\"" + fmt2(gx) + "\" y1=\"" + fmt2(top) + "\" x2=\"" + fmt2(gx) +
               "\" y2=\"" + fmt2(top + py) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg += "<line x1=\"" + fmt2(left) + "\" y1=\"" + fmt2(gy) + "\" x2=\"" +
               fmt2(left + px) + "\" y2=\"" + fmt2(gy) +
               "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        char xl[40], yl[40];
        std::snprintf(xl, sizeof xl, "%.4g", fx);
        std::snprintf(yl, sizeof yl, "%.4g", fy);
        svg += "<text x=\"" + fmt2(gx) + "\" y=\"" + fmt2(top + py + 16.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + xl +
               "</text>\n";
        svg += "<text x=\"" + fmt2(left - 6.0) + "\" y=\"" + fmt2(gy + 3.0) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + yl +
               "</text>\n";
    }
    svg += "<rect x=\"" + fmt2(left) + "\" y=\"" + fmt2(top) + "\" width=\"" + fmt2(px) +
           "\" height=\"" + fmt2(py) + "\" fill=\"none\" stroke=\"#333333\"/>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const ChartSeries& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        std::string points;
        for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
            if (!points.empty()) points += " ";
            points += fmt2(sx(s.xs[i])) + "," + fmt2(sy(s.ys[i]));
        }
        if (points.empty()) continue;
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    }

    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % kPaletteSize];
        double lx = left + static_cast<double>(si % legend_cols) * (px / legend_cols);
        double ly = top + py + bottom + static_cast<double>(si / legend_cols) * 18.0 + 4.0;
        svg += "<line x1=\"" + fmt2(lx) + "\" y1=\"" + fmt2(ly) + "\" x2=\"" + fmt2(lx + 18.0) +
               "\" y2=\"" + fmt2(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + fmt2(lx + 24.0) + "\" y=\"" + fmt2(ly + 4.0) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + escape_xml(series[si].name) +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::vector<std::filesystem::path> write_report_charts(const std::filesystem::path& out_dir) {
    struct Source {
        std::string run;
        CsvTable table;
    };
    auto load_sources = [&out_dir](const std::string& filename) {
        std::vector<Source> sources;
        for (const auto& path : find_files(out_dir, filename)) {
            Source s;
            s.run = std::filesystem::relative(path.parent_path(), out_dir).generic_string();
            s.table = read_csv(path);
            sources.push_back(std::move(s));
        }
        return sources;
    };

    const std::filesystem::path chart_dir = out_dir / "charts";
    std::filesystem::create_directories(chart_dir);
    std::vector<std::filesystem::path> written;

    auto emit = [&](const std::vector<Source>& sources, const std::string& prefix) {
        if (sources.empty()) return;
        const std::vector<std::string>& columns = sources.front().table.columns;
        for (std::size_t col = 1; col < columns.size(); ++col) {
            std::vector<ChartSeries> series;
            for (const Source& src : sources) {
                if (src.table.columns != columns) continue;
                ChartSeries s;
                s.name = src.run;
                for (const auto& row : src.table.rows) {
                    if (col >= row.size() || row[col].empty() || row[0].empty()) continue;
                    s.xs.push_back(std::stod(row[0]));
                    s.ys.push_back(std::stod(row[col]));
                }
                if (!s.xs.empty()) series.push_back(std::move(s));
            }
            if (series.empty()) continue;
            std::filesystem::path file = chart_dir / (prefix + columns[col] + ".svg");
            write_text_file(file, render_line_chart(columns[col] + " vs " + columns[0], series));
            written.push_back(file);
        }
    };

    emit(load_sources("metrics.csv"), "train_");
    emit(load_sources("rloo_metrics.csv"), "rloo_");
    std::sort(written.begin(), written.end(), [](const auto& a, const auto& b) {
        return a.generic_string() < b.generic_string();
    });
    return written;
}

}  // namespace rmlab

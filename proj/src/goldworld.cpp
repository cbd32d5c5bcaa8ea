#include "rmlab/goldworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"

namespace rmlab {

namespace binio {

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw missing_artifact_error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw format_error("short write: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw missing_artifact_error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw format_error("short write: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_artifact_error("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_artifact_error("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace binio

const PromptVector& GoldWorld::prompt_by_id(std::uint32_t id) const {
    if (id >= prompts.size()) throw config_error("unknown prompt id " + std::to_string(id));
    return prompts[id];
}

const ResponseGenerator& GoldWorld::generator_by_id(std::uint32_t id) const {
    auto it = generator_index.find(id);
    if (it == generator_index.end()) {
        throw config_error("unknown generator id " + std::to_string(id));
    }
    return generators[it->second];
}

std::vector<std::uint32_t> GoldWorld::pool_ids(Pool pool) const {
    std::vector<std::uint32_t> ids;
    for (const auto& g : generators) {
        if (g.pool == pool) ids.push_back(g.id);
    }
    return ids;
}

std::size_t GoldWorld::train_prompt_count() const { return config.train_prompts; }
std::size_t GoldWorld::valid_prompt_count() const { return config.valid_prompts; }

void validate(const WorldConfig& c) {
    if (c.dim_x == 0 || c.dim_y == 0) throw config_error("dimensions must be positive");
    if (c.train_clusters == 0 || c.valid_clusters == 0) {
        throw config_error("cluster counts must be positive");
    }
    if (c.train_prompts == 0 || c.valid_prompts == 0) {
        throw config_error("prompt counts must be positive");
    }
    if (c.train_generators == 0 || c.valid_generators == 0) {
        throw config_error("generator pools must be non-empty");
    }
    if (!c.train_generator_ids.empty() &&
        c.train_generator_ids.size() != c.train_generators) {
        throw config_error("train generator id list length does not match count");
    }
    if (!c.valid_generator_ids.empty() &&
        c.valid_generator_ids.size() != c.valid_generators) {
        throw config_error("valid generator id list length does not match count");
    }
    std::set<std::uint32_t> train_ids(c.train_generator_ids.begin(), c.train_generator_ids.end());
    if (train_ids.size() != c.train_generator_ids.size()) {
        throw config_error("duplicate train generator ids");
    }
    std::set<std::uint32_t> valid_ids(c.valid_generator_ids.begin(), c.valid_generator_ids.end());
    if (valid_ids.size() != c.valid_generator_ids.size()) {
        throw config_error("duplicate valid generator ids");
    }
    if (!c.train_generator_ids.empty() && !c.valid_generator_ids.empty()) {
        for (auto id : c.valid_generator_ids) {
            if (train_ids.count(id)) {
                throw config_error("generator pools overlap on id " + std::to_string(id));
            }
        }
    }
    if (c.noise_scale_min < 0.0 || c.noise_scale_max < c.noise_scale_min) {
        throw config_error("noise scale range is inverted");
    }
    if (c.gold_hidden == 0) throw config_error("gold hidden width must be positive");
    if (c.label_temperature < 0.0) throw config_error("label temperature must be non-negative");
}

void validate_sizes(const SizeConfig& sizes, const WorldConfig& config) {
    if (sizes.train == 0 || sizes.valid == 0) throw config_error("dataset sizes must be positive");
    if (sizes.train > config.train_prompts) {
        throw config_error("requested train size exceeds train prompt count");
    }
    if (sizes.valid > config.valid_prompts) {
        throw config_error("requested valid size exceeds valid prompt count");
    }
}

namespace {

std::vector<double> draw_normal_vec(Rng& rng, std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

std::vector<double> draw_on_sphere(Rng& rng, std::size_t n, double radius) {
    std::vector<double> v = draw_normal_vec(rng, n, 1.0);
    double norm = norm2(v);
    while (norm == 0.0) {
        v = draw_normal_vec(rng, n, 1.0);
        norm = norm2(v);
    }
    for (double& x : v) x = radius * x / norm;
    return v;
}

std::vector<std::uint32_t> resolve_ids(const std::vector<std::uint32_t>& explicit_ids,
                                       std::size_t count, std::uint32_t first) {
    if (!explicit_ids.empty()) return explicit_ids;
    std::vector<std::uint32_t> ids(count);
    for (std::size_t i = 0; i < count; ++i) ids[i] = first + static_cast<std::uint32_t>(i);
    return ids;
}

}  // namespace

GoldWorld generate_world(const WorldConfig& config, std::uint64_t seed) {
    validate(config);
    GoldWorld world;
    world.config = config;
    world.seed = seed;

    Rng rng_c = stream(seed, "clusters");
    std::vector<std::vector<double>> train_centers, valid_centers;
    for (std::size_t k = 0; k < config.train_clusters; ++k) {
        train_centers.push_back(draw_normal_vec(rng_c, config.dim_x, config.cluster_center_scale));
    }
    std::vector<double> shift = draw_on_sphere(rng_c, config.dim_x, config.valid_center_shift);
    for (std::size_t k = 0; k < config.valid_clusters; ++k) {
        auto center = draw_normal_vec(rng_c, config.dim_x, config.cluster_center_scale);
        axpy(1.0, shift, center);
        valid_centers.push_back(std::move(center));
    }

    Rng rng_p = stream(seed, "prompts");
    world.prompts.reserve(config.train_prompts + config.valid_prompts);
    std::uint32_t next_id = 0;
    for (std::size_t i = 0; i < config.train_prompts; ++i) {
        PromptVector p;
        p.id = next_id++;
        p.cluster = static_cast<std::uint32_t>(i % config.train_clusters);
        p.split = Split::train;
        p.x = train_centers[p.cluster];
        axpy(1.0, draw_normal_vec(rng_p, config.dim_x, config.prompt_spread), p.x);
        world.prompts.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < config.valid_prompts; ++i) {
        PromptVector p;
        p.id = next_id++;
        p.cluster = static_cast<std::uint32_t>(i % config.valid_clusters);
        p.split = Split::valid;
        p.x = valid_centers[p.cluster];
        axpy(1.0, draw_normal_vec(rng_p, config.dim_x, config.prompt_spread), p.x);
        world.prompts.push_back(std::move(p));
    }

    auto train_ids = resolve_ids(config.train_generator_ids, config.train_generators, 0);
    auto valid_ids = resolve_ids(config.valid_generator_ids, config.valid_generators,
                                 static_cast<std::uint32_t>(config.train_generators));

    Rng rng_g = stream(seed, "generators");
    double map_scale = config.generator_map_scale / std::sqrt(static_cast<double>(config.dim_x));
    auto make_generator = [&](std::uint32_t id, Pool pool) {
        ResponseGenerator g;
        g.id = id;
        g.pool = pool;
        g.map = Matrix(config.dim_y, config.dim_x);
        for (double& v : g.map.data) v = map_scale * rng_g.normal();
        g.bias = draw_normal_vec(rng_g, config.dim_y, config.generator_bias_scale);
        double radius = config.style_radius *
                        (pool == Pool::valid ? config.valid_style_factor : 1.0);
        g.style = draw_on_sphere(rng_g, config.dim_y, radius);
        g.noise_scale = rng_g.uniform(config.noise_scale_min, config.noise_scale_max);
        return g;
    };
    for (auto id : train_ids) world.generators.push_back(make_generator(id, Pool::train));
    for (auto id : valid_ids) world.generators.push_back(make_generator(id, Pool::valid));
    for (std::size_t i = 0; i < world.generators.size(); ++i) {
        world.generator_index[world.generators[i].id] = i;
    }

    Rng rng_gold = stream(seed, "gold");
    std::size_t in_dim = config.dim_x + config.dim_y;
    world.gold.w1 = Matrix(config.gold_hidden, in_dim);
    double w1_scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : world.gold.w1.data) v = w1_scale * rng_gold.normal();
    world.gold.b1 = draw_normal_vec(rng_gold, config.gold_hidden, 0.25);
    double w2_scale = 1.0 / std::sqrt(static_cast<double>(config.gold_hidden));
    world.gold.w2 = draw_normal_vec(rng_gold, config.gold_hidden, w2_scale);

    return world;
}

std::vector<double> sample_response(const GoldWorld& world, std::uint32_t gen_id,
                                    std::span<const double> x, Rng& rng) {
    const ResponseGenerator& g = world.generator_by_id(gen_id);
    if (x.size() != world.config.dim_x) throw config_error("prompt dimension mismatch");
    std::vector<double> y(world.config.dim_y);
    matvec(g.map, x, y);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = std::tanh(y[i] + g.bias[i]) + g.style[i] + g.noise_scale * rng.normal();
    }
    return y;
}

double gold_score(const GoldWorld& world, std::span<const double> x,
                  std::span<const double> y) {
    if (x.size() != world.config.dim_x || y.size() != world.config.dim_y) {
        throw config_error("gold_score dimension mismatch");
    }
    std::vector<double> z(x.size() + y.size());
    std::copy(x.begin(), x.end(), z.begin());
    std::copy(y.begin(), y.end(), z.begin() + static_cast<std::ptrdiff_t>(x.size()));
    std::vector<double> h(world.gold.b1.size());
    matvec(world.gold.w1, z, h);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i] + world.gold.b1[i]);
    return dot(world.gold.w2, h);
}

namespace {

struct DrawnGroup {
    std::array<std::uint32_t, 4> gen_ids{};
    std::array<double, 4> gold{};
    std::array<std::vector<double>, 4> responses;
};

DrawnGroup draw_group(const GoldWorld& world, const PromptVector& prompt,
                      const std::vector<std::uint32_t>& pool, Rng& rng) {
    DrawnGroup g;
    if (pool.size() >= 4) {
        auto picks = rng.sample_without_replacement(pool.size(), 4);
        for (int i = 0; i < 4; ++i) g.gen_ids[i] = pool[picks[i]];
    } else {
        for (int i = 0; i < 4; ++i) g.gen_ids[i] = pool[rng.below(pool.size())];
    }
    for (int i = 0; i < 4; ++i) {
        g.responses[i] = sample_response(world, g.gen_ids[i], prompt.x, rng);
        g.gold[i] = gold_score(world, prompt.x, g.responses[i]);
    }
    // Exact gold-score ties would make the preference label undefined, so the
    // offending response is redrawn. Ties essentially never happen with
    // continuous noise; a persistent tie means the gold model is degenerate.
    for (int attempt = 0; attempt < 100; ++attempt) {
        bool tie = false;
        for (int i = 0; i < 4 && !tie; ++i) {
            for (int j = i + 1; j < 4 && !tie; ++j) {
                if (g.gold[i] == g.gold[j]) {
                    g.responses[j] = sample_response(world, g.gen_ids[j], prompt.x, rng);
                    g.gold[j] = gold_score(world, prompt.x, g.responses[j]);
                    tie = true;
                }
            }
        }
        if (!tie) return g;
    }
    throw degenerate_input_error("persistent exact gold-score ties while drawing responses");
}

PreferenceTriplet label_pair(const GoldWorld& world, const PromptVector& prompt,
                             const DrawnGroup& g, int a, int b, Rng& rng) {
    int w = a, l = b;
    if (world.config.label_temperature > 0.0) {
        double p_first = sigmoid((g.gold[a] - g.gold[b]) / world.config.label_temperature);
        if (rng.uniform01() >= p_first) std::swap(w, l);
    } else if (g.gold[b] > g.gold[a]) {
        std::swap(w, l);
    }
    PreferenceTriplet t;
    t.prompt_id = prompt.id;
    t.gen_w = g.gen_ids[w];
    t.gen_l = g.gen_ids[l];
    t.gold_w = g.gold[w];
    t.gold_l = g.gold[l];
    t.y_w = g.responses[w];
    t.y_l = g.responses[l];
    return t;
}

RankedGroup to_ranked_group(const PromptVector& prompt, DrawnGroup&& g) {
    RankedGroup out;
    out.prompt_id = prompt.id;
    out.gen_ids = g.gen_ids;
    out.gold = g.gold;
    out.responses = std::move(g.responses);
    return out;
}

}  // namespace

DatasetBundle build_datasets(const GoldWorld& world, const SizeConfig& sizes,
                             std::uint64_t seed) {
    validate_sizes(sizes, world.config);
    DatasetBundle bundle;
    bundle.world_seed = world.seed;
    bundle.bundle_seed = seed;
    bundle.sizes = sizes;

    auto train_pool = world.pool_ids(Pool::train);
    auto valid_pool = world.pool_ids(Pool::valid);
    std::size_t n_train_prompts = world.config.train_prompts;

    Rng rng = stream(seed, "bundle");

    // Train prompts: one four-response group each; two random responses form
    // a train pair, the remaining two form a held-out in-distribution pair.
    for (std::size_t i = 0; i < sizes.train; ++i) {
        const PromptVector& prompt = world.prompts[i];
        DrawnGroup g = draw_group(world, prompt, train_pool, rng);
        auto picks = rng.sample_without_replacement(4, 2);
        std::array<bool, 4> taken{};
        taken[picks[0]] = taken[picks[1]] = true;
        int rest[2];
        int r = 0;
        for (int k = 0; k < 4; ++k) {
            if (!taken[k]) rest[r++] = k;
        }
        bundle.d_train.push_back(
            label_pair(world, prompt, g, static_cast<int>(picks[0]), static_cast<int>(picks[1]), rng));
        bundle.d_id.push_back(label_pair(world, prompt, g, rest[0], rest[1], rng));
    }

    for (std::size_t i = 0; i < sizes.valid; ++i) {
        const PromptVector& prompt = world.prompts[n_train_prompts + i];
        bundle.d_prompt_ood.push_back(
            to_ranked_group(prompt, draw_group(world, prompt, train_pool, rng)));
    }
    for (std::size_t i = 0; i < sizes.train; ++i) {
        const PromptVector& prompt = world.prompts[i];
        bundle.d_response_ood.push_back(
            to_ranked_group(prompt, draw_group(world, prompt, valid_pool, rng)));
    }
    for (std::size_t i = 0; i < sizes.valid; ++i) {
        const PromptVector& prompt = world.prompts[n_train_prompts + i];
        bundle.d_mutual_ood.push_back(
            to_ranked_group(prompt, draw_group(world, prompt, valid_pool, rng)));
    }
    return bundle;
}

namespace {

using nlohmann::json;

json config_to_json(const WorldConfig& c) {
    return json{{"dim_x", c.dim_x},
                {"dim_y", c.dim_y},
                {"train_clusters", c.train_clusters},
                {"valid_clusters", c.valid_clusters},
                {"train_prompts", c.train_prompts},
                {"valid_prompts", c.valid_prompts},
                {"train_generators", c.train_generators},
                {"valid_generators", c.valid_generators},
                {"train_generator_ids", c.train_generator_ids},
                {"valid_generator_ids", c.valid_generator_ids},
                {"cluster_center_scale", c.cluster_center_scale},
                {"valid_center_shift", c.valid_center_shift},
                {"prompt_spread", c.prompt_spread},
                {"generator_map_scale", c.generator_map_scale},
                {"generator_bias_scale", c.generator_bias_scale},
                {"style_radius", c.style_radius},
                {"valid_style_factor", c.valid_style_factor},
                {"noise_scale_min", c.noise_scale_min},
                {"noise_scale_max", c.noise_scale_max},
                {"gold_hidden", c.gold_hidden},
                {"label_temperature", c.label_temperature}};
}

WorldConfig config_from_json(const json& j) {
    WorldConfig c;
    c.dim_x = j.at("dim_x").get<std::size_t>();
    c.dim_y = j.at("dim_y").get<std::size_t>();
    c.train_clusters = j.at("train_clusters").get<std::size_t>();
    c.valid_clusters = j.at("valid_clusters").get<std::size_t>();
    c.train_prompts = j.at("train_prompts").get<std::size_t>();
    c.valid_prompts = j.at("valid_prompts").get<std::size_t>();
    c.train_generators = j.at("train_generators").get<std::size_t>();
    c.valid_generators = j.at("valid_generators").get<std::size_t>();
    c.train_generator_ids = j.at("train_generator_ids").get<std::vector<std::uint32_t>>();
    c.valid_generator_ids = j.at("valid_generator_ids").get<std::vector<std::uint32_t>>();
    c.cluster_center_scale = j.at("cluster_center_scale").get<double>();
    c.valid_center_shift = j.at("valid_center_shift").get<double>();
    c.prompt_spread = j.at("prompt_spread").get<double>();
    c.generator_map_scale = j.at("generator_map_scale").get<double>();
    c.generator_bias_scale = j.at("generator_bias_scale").get<double>();
    c.style_radius = j.at("style_radius").get<double>();
    c.valid_style_factor = j.at("valid_style_factor").get<double>();
    c.noise_scale_min = j.at("noise_scale_min").get<double>();
    c.noise_scale_max = j.at("noise_scale_max").get<double>();
    c.gold_hidden = j.at("gold_hidden").get<std::size_t>();
    c.label_temperature = j.at("label_temperature").get<double>();
    return c;
}

}  // namespace

std::string world_to_json(const GoldWorld& world) {
    json j;
    j["format"] = "rmlab-world";
    j["version"] = 1;
    j["seed"] = world.seed;
    j["config"] = config_to_json(world.config);
    json gens = json::array();
    for (const auto& g : world.generators) {
        gens.push_back(json{{"id", g.id},
                            {"pool", g.pool == Pool::train ? "train" : "valid"},
                            {"map", g.map.data},
                            {"bias", g.bias},
                            {"style", g.style},
                            {"noise_scale", g.noise_scale}});
    }
    j["generators"] = gens;
    j["gold"] = json{{"hidden", world.config.gold_hidden},
                     {"w1", world.gold.w1.data},
                     {"b1", world.gold.b1},
                     {"w2", world.gold.w2}};
    return j.dump(2) + "\n";
}

GoldWorld world_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("world json parse failure: ") + e.what());
    }
    if (j.value("format", "") != "rmlab-world") throw format_error("not a world file");
    if (j.value("version", 0) != 1) throw format_error("unsupported world file version");

    WorldConfig config = config_from_json(j.at("config"));
    std::uint64_t seed = j.at("seed").get<std::uint64_t>();

    // Prompts are regenerated from the seed (generation is deterministic);
    // generator and gold parameters are taken from the stored arrays.
    GoldWorld world = generate_world(config, seed);

    const json& gens = j.at("generators");
    if (gens.size() != world.generators.size()) {
        throw format_error("generator count mismatch in world file");
    }
    for (std::size_t i = 0; i < world.generators.size(); ++i) {
        const json& g = gens[i];
        ResponseGenerator& dst = world.generators[i];
        dst.id = g.at("id").get<std::uint32_t>();
        dst.pool = g.at("pool").get<std::string>() == "train" ? Pool::train : Pool::valid;
        dst.map.data = g.at("map").get<std::vector<double>>();
        if (dst.map.data.size() != config.dim_y * config.dim_x) {
            throw format_error("generator map size mismatch");
        }
        dst.bias = g.at("bias").get<std::vector<double>>();
        dst.style = g.at("style").get<std::vector<double>>();
        dst.noise_scale = g.at("noise_scale").get<double>();
    }
    world.generator_index.clear();
    for (std::size_t i = 0; i < world.generators.size(); ++i) {
        world.generator_index[world.generators[i].id] = i;
    }

    const json& gold = j.at("gold");
    world.gold.w1.data = gold.at("w1").get<std::vector<double>>();
    if (world.gold.w1.data.size() != config.gold_hidden * (config.dim_x + config.dim_y)) {
        throw format_error("gold w1 size mismatch");
    }
    world.gold.b1 = gold.at("b1").get<std::vector<double>>();
    world.gold.w2 = gold.at("w2").get<std::vector<double>>();
    return world;
}

std::string world_config_to_json(const WorldConfig& config) {
    return config_to_json(config).dump(2) + "\n";
}

WorldConfig world_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("world config parse failure: ") + e.what());
    }
    return config_from_json(j);
}

void save_world(const GoldWorld& world, const std::filesystem::path& path) {
    binio::write_text_file(path, world_to_json(world));
}

GoldWorld load_world(const std::filesystem::path& path) {
    return world_from_json(binio::read_text_file(path));
}

namespace {

constexpr std::uint32_t kTripletSection = 0;
constexpr std::uint32_t kGroupSection = 1;

void put_triplets(std::vector<std::uint8_t>& buf, const std::vector<PreferenceTriplet>& v,
                  std::size_t dim_y) {
    std::vector<std::uint8_t> body;
    for (const auto& t : v) {
        binio::put_u32(body, t.prompt_id);
        binio::put_u32(body, t.gen_w);
        binio::put_u32(body, t.gen_l);
        binio::put_f64(body, t.gold_w);
        binio::put_f64(body, t.gold_l);
        for (double x : t.y_w) binio::put_f64(body, x);
        for (double x : t.y_l) binio::put_f64(body, x);
    }
    binio::put_u32(buf, kTripletSection);
    binio::put_u64(buf, v.size());
    binio::put_u64(buf, body.size());
    buf.insert(buf.end(), body.begin(), body.end());
    (void)dim_y;
}

void put_groups(std::vector<std::uint8_t>& buf, const std::vector<RankedGroup>& v) {
    std::vector<std::uint8_t> body;
    for (const auto& g : v) {
        binio::put_u32(body, g.prompt_id);
        for (auto id : g.gen_ids) binio::put_u32(body, id);
        for (double s : g.gold) binio::put_f64(body, s);
        for (const auto& y : g.responses) {
            for (double x : y) binio::put_f64(body, x);
        }
    }
    binio::put_u32(buf, kGroupSection);
    binio::put_u64(buf, v.size());
    binio::put_u64(buf, body.size());
    buf.insert(buf.end(), body.begin(), body.end());
}

std::vector<PreferenceTriplet> get_triplets(binio::Reader& r, std::size_t dim_y) {
    if (r.get_u32() != kTripletSection) throw format_error("expected triplet section");
    std::uint64_t count = r.get_u64();
    std::uint64_t length = r.get_u64();
    std::size_t start = r.position();
    std::vector<PreferenceTriplet> v(count);
    for (auto& t : v) {
        t.prompt_id = r.get_u32();
        t.gen_w = r.get_u32();
        t.gen_l = r.get_u32();
        t.gold_w = r.get_f64();
        t.gold_l = r.get_f64();
        t.y_w.resize(dim_y);
        for (double& x : t.y_w) x = r.get_f64();
        t.y_l.resize(dim_y);
        for (double& x : t.y_l) x = r.get_f64();
    }
    if (r.position() - start != length) throw format_error("triplet section length mismatch");
    return v;
}

std::vector<RankedGroup> get_groups(binio::Reader& r, std::size_t dim_y) {
    if (r.get_u32() != kGroupSection) throw format_error("expected group section");
    std::uint64_t count = r.get_u64();
    std::uint64_t length = r.get_u64();
    std::size_t start = r.position();
    std::vector<RankedGroup> v(count);
    for (auto& g : v) {
        g.prompt_id = r.get_u32();
        for (auto& id : g.gen_ids) id = r.get_u32();
        for (auto& s : g.gold) s = r.get_f64();
        for (auto& y : g.responses) {
            y.resize(dim_y);
            for (double& x : y) x = r.get_f64();
        }
    }
    if (r.position() - start != length) throw format_error("group section length mismatch");
    return v;
}

}  // namespace

std::vector<std::uint8_t> bundle_to_bytes(const DatasetBundle& bundle, std::size_t dim_y) {
    std::vector<std::uint8_t> buf;
    binio::put_magic(buf, "RMLB");
    binio::put_u32(buf, 1);
    binio::put_u64(buf, bundle.world_seed);
    binio::put_u64(buf, bundle.bundle_seed);
    binio::put_u64(buf, bundle.sizes.train);
    binio::put_u64(buf, bundle.sizes.valid);
    binio::put_u64(buf, dim_y);
    put_triplets(buf, bundle.d_train, dim_y);
    put_triplets(buf, bundle.d_id, dim_y);
    put_groups(buf, bundle.d_prompt_ood);
    put_groups(buf, bundle.d_response_ood);
    put_groups(buf, bundle.d_mutual_ood);
    return buf;
}

DatasetBundle bundle_from_bytes(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    r.expect_magic("RMLB");
    std::uint32_t version = r.get_u32();
    if (version != 1) throw format_error("unsupported bundle version");
    DatasetBundle bundle;
    bundle.world_seed = r.get_u64();
    bundle.bundle_seed = r.get_u64();
    bundle.sizes.train = r.get_u64();
    bundle.sizes.valid = r.get_u64();
    std::size_t dim_y = r.get_u64();
    bundle.d_train = get_triplets(r, dim_y);
    bundle.d_id = get_triplets(r, dim_y);
    bundle.d_prompt_ood = get_groups(r, dim_y);
    bundle.d_response_ood = get_groups(r, dim_y);
    bundle.d_mutual_ood = get_groups(r, dim_y);
    if (!r.done()) throw format_error("trailing bytes in bundle file");
    return bundle;
}

void save_bundle(const DatasetBundle& bundle, std::size_t dim_y,
                 const std::filesystem::path& path) {
    auto bytes = bundle_to_bytes(bundle, dim_y);
    binio::write_file(path, bytes);
}

DatasetBundle load_bundle(const std::filesystem::path& path) {
    auto bytes = binio::read_file(path);
    return bundle_from_bytes(bytes);
}

}  // namespace rmlab

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "rmlab/errors.hpp"
#include "rmlab/goldworld.hpp"
#include "rmlab/numkit.hpp"
#include "rmlab/rng.hpp"

using namespace rmlab;

namespace {

WorldConfig small_config() {
    WorldConfig c;
    c.dim_x = 6;
    c.dim_y = 5;
    c.train_clusters = 3;
    c.valid_clusters = 2;
    c.train_prompts = 40;
    c.valid_prompts = 12;
    c.train_generators = 6;
    c.valid_generators = 4;
    c.gold_hidden = 8;
    return c;
}

}  // namespace

TEST_CASE("world generation is deterministic per (config, seed)") {
    WorldConfig c = small_config();
    GoldWorld a = generate_world(c, 9001);
    GoldWorld b = generate_world(c, 9001);
    CHECK(world_to_json(a) == world_to_json(b));
    GoldWorld other = generate_world(c, 9002);
    CHECK(world_to_json(a) != world_to_json(other));
}

TEST_CASE("prompt splits and generator pools are disjoint") {
    GoldWorld w = generate_world(small_config(), 5);
    REQUIRE(w.prompts.size() == 52);
    for (std::size_t i = 0; i < w.prompts.size(); ++i) {
        CHECK(w.prompts[i].id == i);
        CHECK(w.prompts[i].split == (i < 40 ? Split::train : Split::valid));
    }
    auto train_pool = w.pool_ids(Pool::train);
    auto valid_pool = w.pool_ids(Pool::valid);
    CHECK(train_pool.size() == 6);
    CHECK(valid_pool.size() == 4);
    std::set<std::uint32_t> train_set(train_pool.begin(), train_pool.end());
    for (auto id : valid_pool) CHECK(train_set.count(id) == 0);
}

TEST_CASE("validation style vectors sit at the enlarged radius") {
    WorldConfig c = small_config();
    c.style_radius = 1.5;
    c.valid_style_factor = 2.0;
    GoldWorld w = generate_world(c, 7);
    for (const auto& g : w.generators) {
        double r = norm2(g.style);
        double expected = g.pool == Pool::train ? 1.5 : 3.0;
        CHECK(r == doctest::Approx(expected).epsilon(1e-12));
        CHECK(g.noise_scale >= c.noise_scale_min);
        CHECK(g.noise_scale <= c.noise_scale_max);
    }
}

TEST_CASE("config validation rejects degenerate settings") {
    WorldConfig c = small_config();
    c.train_generators = 0;
    CHECK_THROWS_AS(validate(c), config_error);

    c = small_config();
    c.valid_clusters = 0;
    CHECK_THROWS_AS(validate(c), config_error);

    c = small_config();
    c.train_generator_ids = {1, 2, 3, 4, 5, 6};
    c.valid_generator_ids = {6, 7, 8, 9};
    CHECK_THROWS_AS(validate(c), config_error);

    c = small_config();
    c.train_generator_ids = {1, 2};
    CHECK_THROWS_AS(validate(c), config_error);

    c = small_config();
    c.noise_scale_min = 0.3;
    c.noise_scale_max = 0.1;
    CHECK_THROWS_AS(validate(c), config_error);
}

TEST_CASE("explicit generator ids are honored") {
    WorldConfig c = small_config();
    c.train_generator_ids = {10, 20, 30, 40, 50, 60};
    c.valid_generator_ids = {100, 200, 300, 400};
    GoldWorld w = generate_world(c, 3);
    CHECK(w.generator_by_id(30).pool == Pool::train);
    CHECK(w.generator_by_id(300).pool == Pool::valid);
    CHECK_THROWS_AS(w.generator_by_id(999), config_error);
}

TEST_CASE("large prompt counts pass validation") {
    WorldConfig c;
    c.train_prompts = 51200;
    c.valid_prompts = 12800;
    validate(c);
    SizeConfig sizes;
    sizes.train = 51200;
    sizes.valid = 12800;
    validate_sizes(sizes, c);

    SizeConfig too_big;
    too_big.train = 51201;
    too_big.valid = 1;
    CHECK_THROWS_AS(validate_sizes(too_big, c), config_error);
}

TEST_CASE("sample_response is deterministic under a replayed stream") {
    GoldWorld w = generate_world(small_config(), 11);
    Rng a(123), b(123);
    auto y1 = sample_response(w, 0, w.prompts[0].x, a);
    auto y2 = sample_response(w, 0, w.prompts[0].x, b);
    CHECK(y1 == y2);
    auto y3 = sample_response(w, 0, w.prompts[0].x, a);
    CHECK(y1 != y3);

    std::vector<double> bad_x(3, 0.0);
    CHECK_THROWS_AS(sample_response(w, 0, bad_x, a), config_error);
}

TEST_CASE("gold_score is frozen and dimension checked") {
    GoldWorld w = generate_world(small_config(), 11);
    Rng r(5);
    auto y = sample_response(w, 1, w.prompts[2].x, r);
    double s1 = gold_score(w, w.prompts[2].x, y);
    double s2 = gold_score(w, w.prompts[2].x, y);
    CHECK(s1 == s2);
    CHECK(std::isfinite(s1));
    std::vector<double> bad_y(2, 0.0);
    CHECK_THROWS_AS(gold_score(w, w.prompts[2].x, bad_y), config_error);
}

TEST_CASE("dataset bundle has the contracted shape and membership") {
    GoldWorld w = generate_world(small_config(), 21);
    SizeConfig sizes;
    sizes.train = 25;
    sizes.valid = 8;
    DatasetBundle b = build_datasets(w, sizes, 77);

    CHECK(b.d_train.size() == 25);
    CHECK(b.d_id.size() == 25);
    CHECK(b.d_prompt_ood.size() == 8);
    CHECK(b.d_response_ood.size() == 25);
    CHECK(b.d_mutual_ood.size() == 8);

    auto train_pool = w.pool_ids(Pool::train);
    auto valid_pool = w.pool_ids(Pool::valid);
    std::set<std::uint32_t> train_gens(train_pool.begin(), train_pool.end());
    std::set<std::uint32_t> valid_gens(valid_pool.begin(), valid_pool.end());

    for (const auto& t : b.d_train) {
        CHECK(w.prompt_by_id(t.prompt_id).split == Split::train);
        CHECK(train_gens.count(t.gen_w) == 1);
        CHECK(train_gens.count(t.gen_l) == 1);
        CHECK(t.gold_w > t.gold_l);
        CHECK(t.gold_w == gold_score(w, w.prompt_by_id(t.prompt_id).x, t.y_w));
        CHECK(t.gold_l == gold_score(w, w.prompt_by_id(t.prompt_id).x, t.y_l));
    }
    for (const auto& t : b.d_id) {
        CHECK(w.prompt_by_id(t.prompt_id).split == Split::train);
        CHECK(train_gens.count(t.gen_w) == 1);
        CHECK(t.gold_w > t.gold_l);
    }
    for (const auto& g : b.d_prompt_ood) {
        CHECK(w.prompt_by_id(g.prompt_id).split == Split::valid);
        for (auto id : g.gen_ids) CHECK(train_gens.count(id) == 1);
    }
    for (const auto& g : b.d_response_ood) {
        CHECK(w.prompt_by_id(g.prompt_id).split == Split::train);
        for (auto id : g.gen_ids) CHECK(valid_gens.count(id) == 1);
    }
    for (const auto& g : b.d_mutual_ood) {
        CHECK(w.prompt_by_id(g.prompt_id).split == Split::valid);
        for (auto id : g.gen_ids) CHECK(valid_gens.count(id) == 1);
        for (int i = 0; i < 4; ++i) {
            for (int j = i + 1; j < 4; ++j) CHECK(g.gold[i] != g.gold[j]);
        }
    }

    // The train pair and the held-out pair of one prompt never share a response.
    for (std::size_t i = 0; i < b.d_train.size(); ++i) {
        CHECK(b.d_train[i].prompt_id == b.d_id[i].prompt_id);
        CHECK(b.d_train[i].y_w != b.d_id[i].y_w);
        CHECK(b.d_train[i].y_w != b.d_id[i].y_l);
        CHECK(b.d_train[i].y_l != b.d_id[i].y_w);
        CHECK(b.d_train[i].y_l != b.d_id[i].y_l);
    }
}

TEST_CASE("bundle building is deterministic and seed sensitive") {
    GoldWorld w = generate_world(small_config(), 21);
    SizeConfig sizes;
    sizes.train = 10;
    sizes.valid = 4;
    auto b1 = bundle_to_bytes(build_datasets(w, sizes, 1), w.config.dim_y);
    auto b2 = bundle_to_bytes(build_datasets(w, sizes, 1), w.config.dim_y);
    auto b3 = bundle_to_bytes(build_datasets(w, sizes, 2), w.config.dim_y);
    CHECK(b1 == b2);
    CHECK(b1 != b3);
}

TEST_CASE("noisy labels at high temperature flip a fair share of pairs") {
    WorldConfig c = small_config();
    c.label_temperature = 1e6;
    c.train_prompts = 400;
    GoldWorld w = generate_world(c, 31);
    SizeConfig sizes;
    sizes.train = 400;
    sizes.valid = 4;
    DatasetBundle b = build_datasets(w, sizes, 13);
    int flipped = 0;
    for (const auto& t : b.d_train) {
        if (t.gold_w < t.gold_l) flipped++;
    }
    // At essentially infinite temperature the label is a coin flip.
    CHECK(flipped > 120);
    CHECK(flipped < 280);
}

TEST_CASE("world json round-trips byte-identically") {
    GoldWorld w = generate_world(small_config(), 99);
    std::string first = world_to_json(w);
    GoldWorld loaded = world_from_json(first);
    std::string second = world_to_json(loaded);
    CHECK(first == second);

    // Loaded world scores identically.
    Rng r(3);
    auto y = sample_response(w, 2, w.prompts[5].x, r);
    CHECK(gold_score(w, w.prompts[5].x, y) == gold_score(loaded, w.prompts[5].x, y));
    CHECK(loaded.prompts.size() == w.prompts.size());
    for (std::size_t i = 0; i < w.prompts.size(); ++i) {
        CHECK(loaded.prompts[i].x == w.prompts[i].x);
    }
}

TEST_CASE("bundle binary round-trips exactly") {
    GoldWorld w = generate_world(small_config(), 55);
    SizeConfig sizes;
    sizes.train = 12;
    sizes.valid = 5;
    DatasetBundle b = build_datasets(w, sizes, 8);
    auto bytes = bundle_to_bytes(b, w.config.dim_y);
    DatasetBundle back = bundle_from_bytes(bytes);
    auto bytes2 = bundle_to_bytes(back, w.config.dim_y);
    CHECK(bytes == bytes2);
    CHECK(back.d_train.size() == b.d_train.size());
    CHECK(back.d_train[3].y_w == b.d_train[3].y_w);
    CHECK(back.d_mutual_ood[2].gold == b.d_mutual_ood[2].gold);

    // Corruption is rejected.
    auto corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(bundle_from_bytes(corrupt), format_error);
    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(bundle_from_bytes(truncated), format_error);
}

TEST_CASE("world and bundle files survive a disk round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "rmlab_gw_test";
    fs::create_directories(dir);
    GoldWorld w = generate_world(small_config(), 14);
    SizeConfig sizes;
    sizes.train = 6;
    sizes.valid = 3;
    DatasetBundle b = build_datasets(w, sizes, 5);

    save_world(w, dir / "world.json");
    save_bundle(b, w.config.dim_y, dir / "datasets.bin");
    GoldWorld w2 = load_world(dir / "world.json");
    DatasetBundle b2 = load_bundle(dir / "datasets.bin");
    CHECK(world_to_json(w) == world_to_json(w2));
    CHECK(bundle_to_bytes(b, w.config.dim_y) == bundle_to_bytes(b2, w.config.dim_y));

    CHECK_THROWS_AS(load_world(dir / "missing.json"), missing_artifact_error);
    fs::remove_all(dir);
}

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rmlab/numkit.hpp"
#include "rmlab/rng.hpp"

namespace rmlab {

enum class Split : std::uint8_t { train = 0, valid = 1 };
enum class Pool : std::uint8_t { train = 0, valid = 1 };

// Synthetic world configuration. Train and validation prompts come from
// disjoint cluster sets; train and validation response generators form
// disjoint pools with validation styles drawn at a larger radius, so the four
// evaluation regimes (in-distribution, unseen-prompt, unseen-response, both)
// are genuinely different distributions.
struct WorldConfig {
    std::size_t dim_x = 16;
    std::size_t dim_y = 16;

    std::size_t train_clusters = 8;
    std::size_t valid_clusters = 4;
    std::size_t train_prompts = 2000;
    std::size_t valid_prompts = 400;

    std::size_t train_generators = 17;
    std::size_t valid_generators = 4;
    // Optional explicit generator ids. Empty means sequential: train pool
    // gets 0..train_generators-1, valid pool continues from there.
    std::vector<std::uint32_t> train_generator_ids;
    std::vector<std::uint32_t> valid_generator_ids;

    double cluster_center_scale = 2.0;
    double valid_center_shift = 3.0;
    double prompt_spread = 1.0;

    double generator_map_scale = 1.0;
    double generator_bias_scale = 0.5;
    double style_radius = 1.0;
    double valid_style_factor = 1.0;
    double noise_scale_min = 0.1;
    double noise_scale_max = 0.3;

    std::size_t gold_hidden = 32;

    // 0 = deterministic argmax labels; > 0 = preference labels sampled from a
    // logistic model of the gold score gap at this temperature.
    double label_temperature = 0.0;
};

struct PromptVector {
    std::uint32_t id = 0;
    std::uint32_t cluster = 0;
    Split split = Split::train;
    std::vector<double> x;
};

// Response channel: y = tanh(A x + b) + style + noise_scale * eps.
struct ResponseGenerator {
    std::uint32_t id = 0;
    Pool pool = Pool::train;
    Matrix map;                 // dim_y x dim_x
    std::vector<double> bias;   // dim_y
    std::vector<double> style;  // dim_y
    double noise_scale = 0.1;
};

// Frozen two-layer tanh network scoring concat(x, y).
struct GoldRewardModel {
    Matrix w1;               // hidden x (dim_x + dim_y)
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // hidden
};

struct GoldWorld {
    WorldConfig config;
    std::uint64_t seed = 0;
    std::vector<PromptVector> prompts;  // train block first, then valid block
    std::vector<ResponseGenerator> generators;
    GoldRewardModel gold;

    std::unordered_map<std::uint32_t, std::size_t> generator_index;

    const PromptVector& prompt_by_id(std::uint32_t id) const;
    const ResponseGenerator& generator_by_id(std::uint32_t id) const;
    std::vector<std::uint32_t> pool_ids(Pool pool) const;
    std::size_t train_prompt_count() const;
    std::size_t valid_prompt_count() const;
};

// A labeled preference pair over one prompt.
struct PreferenceTriplet {
    std::uint32_t prompt_id = 0;
    std::uint32_t gen_w = 0;
    std::uint32_t gen_l = 0;
    double gold_w = 0.0;
    double gold_l = 0.0;
    std::vector<double> y_w;
    std::vector<double> y_l;
};

// Four responses to one prompt with pairwise-distinct gold scores.
struct RankedGroup {
    std::uint32_t prompt_id = 0;
    std::array<std::uint32_t, 4> gen_ids{};
    std::array<double, 4> gold{};
    std::array<std::vector<double>, 4> responses;
};

struct SizeConfig {
    std::size_t train = 1000;
    std::size_t valid = 400;
};

struct DatasetBundle {
    std::uint64_t world_seed = 0;
    std::uint64_t bundle_seed = 0;
    SizeConfig sizes;
    std::vector<PreferenceTriplet> d_train;
    std::vector<PreferenceTriplet> d_id;
    std::vector<RankedGroup> d_prompt_ood;
    std::vector<RankedGroup> d_response_ood;
    std::vector<RankedGroup> d_mutual_ood;
};

// Throws config_error on degenerate or contradictory settings.
void validate(const WorldConfig& config);

// Throws config_error when the requested sizes exceed the world's prompts.
void validate_sizes(const SizeConfig& sizes, const WorldConfig& config);

// Deterministic: identical (config, seed) yields a bit-identical world.
GoldWorld generate_world(const WorldConfig& config, std::uint64_t seed);

// Draw one response from the given generator. Consumes dim_y normal draws.
std::vector<double> sample_response(const GoldWorld& world, std::uint32_t gen_id,
                                    std::span<const double> x, Rng& rng);

// Frozen gold score of a (prompt, response) pair.
double gold_score(const GoldWorld& world, std::span<const double> x,
                  std::span<const double> y);

// Build the five datasets. Deterministic in (world, sizes, seed).
DatasetBundle build_datasets(const GoldWorld& world, const SizeConfig& sizes,
                             std::uint64_t seed);

std::string world_to_json(const GoldWorld& world);
GoldWorld world_from_json(const std::string& text);
std::string world_config_to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const std::string& text);
void save_world(const GoldWorld& world, const std::filesystem::path& path);
GoldWorld load_world(const std::filesystem::path& path);

std::vector<std::uint8_t> bundle_to_bytes(const DatasetBundle& bundle, std::size_t dim_y);
DatasetBundle bundle_from_bytes(std::span<const std::uint8_t> bytes);
void save_bundle(const DatasetBundle& bundle, std::size_t dim_y,
                 const std::filesystem::path& path);
DatasetBundle load_bundle(const std::filesystem::path& path);

}  // namespace rmlab

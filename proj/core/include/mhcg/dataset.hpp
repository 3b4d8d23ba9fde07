#pragma once

// Synthetic category world: prototype-mixture observations, templated
// captions with one lexicon token per annotated category, and the
// category-balanced two-sided split.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"

namespace mhcg {

struct Category {
  std::string name;
  int super_category = 0;
  double weight = 1.0;      // relative popularity inside its super-category
  std::vector<int> lexicon;  // token ids naming this category
};

struct WorldSpec {
  int vocab = 24;
  int length = 4;
  int obs = 16;
  int super_categories = 4;
  std::vector<Category> categories;
  Matrix prototypes;                     // C x D_o
  int common_category = 0;
  double obs_noise = 0.3;
  std::vector<double> count_probs{0.3, 0.4, 0.3};    // P(1), P(2), P(3) categories per image
  std::vector<double> super_weights;                // chance a super-category is drawn
  std::vector<std::vector<int>> fillers;             // per caption position, tokens used when no category fills it
  int images = 2400;
  std::uint64_t seed = 0;
};

struct WorldDefaults {
  int categories = 12;
  int super_categories = 4;
  int vocab = 24;
  int length = 4;
  int obs = 16;
  int images = 2400;
  double obs_noise = 0.3;
  double prototype_scale = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const WorldDefaults&) const = default;
};

/// Categories spread evenly over super-categories (category 0, the common
/// one, lives in super-category 0), one lexicon token per category, the
/// remaining tokens split into per-position fillers.
WorldSpec make_world_spec(const WorldDefaults& defaults);

/// Throws ConfigError when the spec breaks an invariant: one common category,
/// disjoint lexicons inside the vocabulary, length >= super-categories, ...
void validate(const WorldSpec& spec);

enum class SplitTag { unassigned, a, b, others };
const char* to_string(SplitTag tag);

struct ImageRecord {
  Observation observation;
  std::vector<int> categories;  // sorted, nonempty
  Caption caption;
  SplitTag split = SplitTag::unassigned;
};

/// Position s holds the lexicon token of the category drawn from
/// super-category s, otherwise a filler chosen by the number of categories.
Caption caption_template(const WorldSpec& spec, const std::vector<int>& categories);

/// Observation = mean of the category prototypes + N(0, obs_noise^2).
Observation render_observation(const WorldSpec& spec, const std::vector<int>& categories, Rng& rng);

/// Draws 1-3 categories from distinct super-categories.
std::vector<int> sample_categories(const WorldSpec& spec, Rng& rng);

struct BalanceReport {
  std::size_t images_a = 0;
  std::size_t images_b = 0;
  std::size_t categories_a = 0;
  std::size_t categories_b = 0;
};

struct CategoryPartition {
  int common = 0;
  std::vector<int> a_only;
  std::vector<int> b_only;
  BalanceReport balance;  // category-level image counts (common counted on both sides)

  SplitTag side_of(int category) const;  // unassigned for the common category
};

struct SplitResult {
  CategoryPartition partition;
  std::vector<std::size_t> a_images;
  std::vector<std::size_t> b_images;
  std::vector<std::size_t> others;
  BalanceReport balance;  // routed image counts
};

/// Per-category image counts.
std::vector<std::size_t> category_counts(const WorldSpec& spec, const std::vector<ImageRecord>& records);

/// Within each super-category, categories sorted by image count (descending)
/// go one by one to the side with fewer images; ties go to the side with fewer
/// categories, then to side a.
CategoryPartition split_categories(const WorldSpec& spec, const std::vector<std::size_t>& counts);

/// a if every category is in common or a-only, b symmetric, otherwise others.
/// Common-only images satisfy both and alternate by record-index parity.
SplitResult route_images(std::vector<ImageRecord>& records, const CategoryPartition& partition);

struct DataSets {
  std::vector<std::size_t> pretrain_a;
  std::vector<std::size_t> pretrain_b;
  std::vector<std::size_t> pool;       // game data drawn from others
  std::vector<std::size_t> eval;       // held out from a, b and others
  std::vector<std::size_t> topline;    // every non-eval image
};

struct World {
  WorldSpec spec;
  std::vector<ImageRecord> records;
  SplitResult split;
  DataSets sets;
};

/// Generates records, splits categories, routes images and carves the data sets.
World generate_world(const WorldSpec& spec, std::size_t pool_size, double eval_fraction);

// JSON-lines dataset: world.json (spec header), records.jsonl, split.json.
void write_world(const World& world, const std::filesystem::path& dir);
std::string world_spec_to_json(const WorldSpec& spec);
WorldSpec world_spec_from_json(const std::string& text);

}  // namespace mhcg

#include "mhcg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "mhcg/errors.hpp"

namespace mhcg {

using nlohmann::json;

namespace {

std::size_t draw_weighted(const std::vector<double>& weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Floating-point leftovers land on the last positive weight.
  for (std::size_t i = weights.size(); i > 0; --i)
    if (weights[i - 1] > 0.0) return i - 1;
  return 0;
}

bool subset_of(const std::vector<int>& cats, int common, const std::vector<SplitTag>& side, SplitTag want) {
  return std::all_of(cats.begin(), cats.end(),
                     [&](int c) { return c == common || side[static_cast<std::size_t>(c)] == want; });
}

}  // namespace

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::a: return "a";
    case SplitTag::b: return "b";
    case SplitTag::others: return "others";
    case SplitTag::unassigned: break;
  }
  return "unassigned";
}

WorldSpec make_world_spec(const WorldDefaults& d) {
  if (d.categories < 2 || d.super_categories < 1 || d.categories % d.super_categories != 0)
    throw ConfigError("world: categories must be a positive multiple of super-categories");
  if (d.vocab - d.categories < d.length)
    throw ConfigError("world: vocabulary must leave at least one filler token per caption position");
  Rng rng(d.seed);
  WorldSpec spec;
  spec.vocab = d.vocab;
  spec.length = d.length;
  spec.obs = d.obs;
  spec.super_categories = d.super_categories;
  spec.obs_noise = d.obs_noise;
  spec.images = d.images;
  spec.seed = d.seed;
  spec.common_category = 0;
  const int per_super = d.categories / d.super_categories;
  for (int c = 0; c < d.categories; ++c) {
    Category cat;
    cat.super_category = c / per_super;
    cat.name = c == 0 ? "person" : "category" + std::to_string(c);
    cat.weight = c == 0 ? 3.0 : 0.5 + rng.uniform();
    cat.lexicon = {c};
    spec.categories.push_back(std::move(cat));
  }
  spec.super_weights.assign(static_cast<std::size_t>(d.super_categories), 1.0);
  spec.super_weights[0] = 1.5;
  spec.prototypes = Matrix(d.categories, d.obs);
  for (Eigen::Index i = 0; i < spec.prototypes.size(); ++i) spec.prototypes.data()[i] = d.prototype_scale * rng.normal();
  spec.fillers.assign(static_cast<std::size_t>(d.length), {});
  for (int t = d.categories; t < d.vocab; ++t)
    spec.fillers[static_cast<std::size_t>((t - d.categories) % d.length)].push_back(t);
  validate(spec);
  return spec;
}

void validate(const WorldSpec& spec) {
  const auto C = static_cast<int>(spec.categories.size());
  if (C < 1) throw ConfigError("world: no categories");
  if (spec.common_category < 0 || spec.common_category >= C) throw ConfigError("world: common category out of range");
  if (spec.length < spec.super_categories)
    throw ConfigError("world: caption length must cover one position per super-category");
  if (spec.prototypes.rows() != C || spec.prototypes.cols() != spec.obs)
    throw ConfigError("world: prototype matrix must be categories x obs");
  if (static_cast<int>(spec.super_weights.size()) != spec.super_categories)
    throw ConfigError("world: one weight per super-category required");
  if (spec.count_probs.empty() || static_cast<int>(spec.count_probs.size()) > spec.super_categories)
    throw ConfigError("world: category-count distribution longer than the number of super-categories");
  if (static_cast<int>(spec.fillers.size()) != spec.length) throw ConfigError("world: one filler list per position");
  std::vector<int> owner(static_cast<std::size_t>(spec.vocab), -1);
  for (int c = 0; c < C; ++c) {
    const auto& cat = spec.categories[static_cast<std::size_t>(c)];
    if (cat.super_category < 0 || cat.super_category >= spec.super_categories)
      throw ConfigError("world: category " + cat.name + " has no valid super-category");
    if (cat.lexicon.empty()) throw ConfigError("world: category " + cat.name + " has an empty lexicon");
    if (!(cat.weight > 0.0)) throw ConfigError("world: category weights must be positive");
    for (int t : cat.lexicon) {
      if (t < 0 || t >= spec.vocab) throw ConfigError("world: lexicon token outside the vocabulary");
      if (owner[static_cast<std::size_t>(t)] != -1) throw ConfigError("world: lexicon tokens shared between categories");
      owner[static_cast<std::size_t>(t)] = c;
    }
  }
  for (const auto& slot : spec.fillers) {
    if (slot.empty()) throw ConfigError("world: every position needs a filler token");
    for (int t : slot) {
      if (t < 0 || t >= spec.vocab) throw ConfigError("world: filler token outside the vocabulary");
      if (owner[static_cast<std::size_t>(t)] >= 0) throw ConfigError("world: filler token is also a lexicon token");
    }
  }
}

Caption caption_template(const WorldSpec& spec, const std::vector<int>& categories) {
  const auto n = categories.size();
  std::vector<int> tokens(static_cast<std::size_t>(spec.length), -1);
  for (int c : categories) {
    const auto& cat = spec.categories[static_cast<std::size_t>(c)];
    tokens[static_cast<std::size_t>(cat.super_category)] = cat.lexicon.front();
  }
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    if (tokens[pos] >= 0) continue;
    const auto& fill = spec.fillers[pos];
    tokens[pos] = fill[(n - 1) % fill.size()];
  }
  return Caption(std::move(tokens));
}

Observation render_observation(const WorldSpec& spec, const std::vector<int>& categories, Rng& rng) {
  Observation o = Observation::Zero(spec.obs);
  for (int c : categories) o += spec.prototypes.row(c).transpose();
  o /= static_cast<double>(categories.size());
  if (spec.obs_noise > 0.0)
    for (Eigen::Index i = 0; i < o.size(); ++i) o[i] += spec.obs_noise * rng.normal();
  return o;
}

std::vector<int> sample_categories(const WorldSpec& spec, Rng& rng) {
  const std::size_t n = draw_weighted(spec.count_probs, rng) + 1;
  std::vector<double> super_w = spec.super_weights;
  std::vector<int> cats;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = static_cast<int>(draw_weighted(super_w, rng));
    super_w[static_cast<std::size_t>(s)] = 0.0;
    std::vector<double> w;
    std::vector<int> ids;
    for (std::size_t c = 0; c < spec.categories.size(); ++c) {
      if (spec.categories[c].super_category != s) continue;
      w.push_back(spec.categories[c].weight);
      ids.push_back(static_cast<int>(c));
    }
    cats.push_back(ids[draw_weighted(w, rng)]);
  }
  std::sort(cats.begin(), cats.end());
  return cats;
}

SplitTag CategoryPartition::side_of(int category) const {
  if (category == common) return SplitTag::unassigned;
  if (std::find(a_only.begin(), a_only.end(), category) != a_only.end()) return SplitTag::a;
  if (std::find(b_only.begin(), b_only.end(), category) != b_only.end()) return SplitTag::b;
  return SplitTag::others;
}

std::vector<std::size_t> category_counts(const WorldSpec& spec, const std::vector<ImageRecord>& records) {
  std::vector<std::size_t> counts(spec.categories.size(), 0);
  for (const auto& r : records)
    for (int c : r.categories) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

CategoryPartition split_categories(const WorldSpec& spec, const std::vector<std::size_t>& counts) {
  if (counts.size() != spec.categories.size()) throw InputError("split_categories: one count per category required");
  CategoryPartition part;
  part.common = spec.common_category;
  const std::size_t common_count = counts[static_cast<std::size_t>(part.common)];
  part.balance.images_a = part.balance.images_b = common_count;
  part.balance.categories_a = part.balance.categories_b = 1;
  for (int s = 0; s < spec.super_categories; ++s) {
    std::vector<int> members;
    for (std::size_t c = 0; c < spec.categories.size(); ++c)
      if (spec.categories[c].super_category == s && static_cast<int>(c) != part.common)
        members.push_back(static_cast<int>(c));
    std::stable_sort(members.begin(), members.end(), [&](int x, int y) {
      return counts[static_cast<std::size_t>(x)] > counts[static_cast<std::size_t>(y)];
    });
    for (int c : members) {
      auto& bal = part.balance;
      bool to_a = true;
      if (bal.images_a != bal.images_b)
        to_a = bal.images_a < bal.images_b;
      else if (bal.categories_a != bal.categories_b)
        to_a = bal.categories_a < bal.categories_b;
      const std::size_t n = counts[static_cast<std::size_t>(c)];
      if (to_a) {
        part.a_only.push_back(c);
        bal.images_a += n;
        ++bal.categories_a;
      } else {
        part.b_only.push_back(c);
        bal.images_b += n;
        ++bal.categories_b;
      }
    }
  }
  return part;
}

SplitResult route_images(std::vector<ImageRecord>& records, const CategoryPartition& partition) {
  int max_cat = partition.common;
  for (int c : partition.a_only) max_cat = std::max(max_cat, c);
  for (int c : partition.b_only) max_cat = std::max(max_cat, c);
  std::vector<SplitTag> side(static_cast<std::size_t>(max_cat) + 1, SplitTag::others);
  for (int c : partition.a_only) side[static_cast<std::size_t>(c)] = SplitTag::a;
  for (int c : partition.b_only) side[static_cast<std::size_t>(c)] = SplitTag::b;

  SplitResult out;
  out.partition = partition;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    for (int c : r.categories)
      if (c < 0 || c > max_cat) throw InputError("route_images: record uses a category outside the partition");
    const bool in_a = subset_of(r.categories, partition.common, side, SplitTag::a);
    const bool in_b = subset_of(r.categories, partition.common, side, SplitTag::b);
    if (in_a && in_b)
      r.split = i % 2 == 0 ? SplitTag::a : SplitTag::b;
    else if (in_a)
      r.split = SplitTag::a;
    else if (in_b)
      r.split = SplitTag::b;
    else
      r.split = SplitTag::others;
    switch (r.split) {
      case SplitTag::a: out.a_images.push_back(i); break;
      case SplitTag::b: out.b_images.push_back(i); break;
      default: out.others.push_back(i); break;
    }
  }
  out.balance.images_a = out.a_images.size();
  out.balance.images_b = out.b_images.size();
  out.balance.categories_a = partition.a_only.size() + 1;
  out.balance.categories_b = partition.b_only.size() + 1;
  return out;
}

World generate_world(const WorldSpec& spec, std::size_t pool_size, double eval_fraction) {
  validate(spec);
  if (spec.images < 1) throw ConfigError("world: at least one image required");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) throw ConfigError("world: eval fraction must be in [0, 1)");
  World world;
  world.spec = spec;
  Rng rng(spec.seed);
  Rng content = rng.fork(1);
  for (int i = 0; i < spec.images; ++i) {
    ImageRecord r;
    r.categories = sample_categories(spec, content);
    r.observation = render_observation(spec, r.categories, content);
    r.caption = caption_template(spec, r.categories);
    world.records.push_back(std::move(r));
  }
  world.split = route_images(world.records, split_categories(spec, category_counts(spec, world.records)));

  Rng carve = rng.fork(2);
  auto shuffled = [&](std::vector<std::size_t> v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[carve.index(i)]);
    return v;
  };
  auto held_out = [&](const std::vector<std::size_t>& v) {
    return static_cast<std::size_t>(eval_fraction * static_cast<double>(v.size()) + 0.5);
  };
  auto& sets = world.sets;
  for (auto [source, train] : {std::pair{&world.split.a_images, &sets.pretrain_a},
                               std::pair{&world.split.b_images, &sets.pretrain_b}}) {
    const auto v = shuffled(*source);
    const std::size_t n_eval = held_out(v);
    sets.eval.insert(sets.eval.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_eval));
    train->assign(v.begin() + static_cast<std::ptrdiff_t>(n_eval), v.end());
  }
  const auto others = shuffled(world.split.others);
  const std::size_t n_eval = held_out(others);
  if (n_eval + pool_size > others.size())
    throw ConfigError("world: pool of " + std::to_string(pool_size) + " images exceeds the " +
                      std::to_string(others.size() - n_eval) + " available mixed images");
  sets.eval.insert(sets.eval.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(n_eval));
  sets.pool.assign(others.begin() + static_cast<std::ptrdiff_t>(n_eval),
                   others.begin() + static_cast<std::ptrdiff_t>(n_eval + pool_size));
  sets.topline = sets.pretrain_a;
  sets.topline.insert(sets.topline.end(), sets.pretrain_b.begin(), sets.pretrain_b.end());
  sets.topline.insert(sets.topline.end(), others.begin() + static_cast<std::ptrdiff_t>(n_eval), others.end());
  for (auto* v : {&sets.pretrain_a, &sets.pretrain_b, &sets.pool, &sets.eval, &sets.topline})
    std::sort(v->begin(), v->end());
  return world;
}

// --- serialization --------------------------------------------------------

std::string world_spec_to_json(const WorldSpec& spec) {
  json j;
  j["vocab"] = spec.vocab;
  j["length"] = spec.length;
  j["obs"] = spec.obs;
  j["super_categories"] = spec.super_categories;
  j["common_category"] = spec.common_category;
  j["obs_noise"] = spec.obs_noise;
  j["count_probs"] = spec.count_probs;
  j["super_weights"] = spec.super_weights;
  j["fillers"] = spec.fillers;
  j["images"] = spec.images;
  j["seed"] = spec.seed;
  j["categories"] = json::array();
  for (std::size_t c = 0; c < spec.categories.size(); ++c) {
    const auto& cat = spec.categories[c];
    std::vector<double> proto;
    for (Eigen::Index k = 0; k < spec.prototypes.cols(); ++k)
      proto.push_back(spec.prototypes(static_cast<Eigen::Index>(c), k));
    j["categories"].push_back({{"name", cat.name},
                               {"super_category", cat.super_category},
                               {"weight", cat.weight},
                               {"lexicon", cat.lexicon},
                               {"prototype", proto}});
  }
  return j.dump();
}

WorldSpec world_spec_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    WorldSpec spec;
    spec.vocab = j.at("vocab").get<int>();
    spec.length = j.at("length").get<int>();
    spec.obs = j.at("obs").get<int>();
    spec.super_categories = j.at("super_categories").get<int>();
    spec.common_category = j.at("common_category").get<int>();
    spec.obs_noise = j.at("obs_noise").get<double>();
    spec.count_probs = j.at("count_probs").get<std::vector<double>>();
    spec.super_weights = j.at("super_weights").get<std::vector<double>>();
    spec.fillers = j.at("fillers").get<std::vector<std::vector<int>>>();
    spec.images = j.at("images").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    const auto& cats = j.at("categories");
    spec.prototypes = Matrix(static_cast<Eigen::Index>(cats.size()), spec.obs);
    for (std::size_t c = 0; c < cats.size(); ++c) {
      Category cat;
      cat.name = cats[c].at("name").get<std::string>();
      cat.super_category = cats[c].at("super_category").get<int>();
      cat.weight = cats[c].at("weight").get<double>();
      cat.lexicon = cats[c].at("lexicon").get<std::vector<int>>();
      const auto proto = cats[c].at("prototype").get<std::vector<double>>();
      if (static_cast<int>(proto.size()) != spec.obs) throw ConfigError("world json: prototype length != obs");
      for (int k = 0; k < spec.obs; ++k) spec.prototypes(static_cast<Eigen::Index>(c), k) = proto[static_cast<std::size_t>(k)];
      spec.categories.push_back(std::move(cat));
    }
    validate(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("world json: ") + e.what());
  }
}

void write_world(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "world.json", std::ios::binary);
    out << world_spec_to_json(world.spec) << '\n';
  }
  {
    std::ofstream out(dir / "records.jsonl", std::ios::binary);
    for (std::size_t i = 0; i < world.records.size(); ++i) {
      const auto& r = world.records[i];
      json j;
      j["index"] = i;
      j["observation"] = std::vector<double>(r.observation.data(), r.observation.data() + r.observation.size());
      j["categories"] = r.categories;
      j["caption"] = std::vector<int>(r.caption.tokens().begin(), r.caption.tokens().end());
      j["split"] = to_string(r.split);
      out << j.dump() << '\n';
    }
  }
  {
    const auto& p = world.split.partition;
    json j;
    j["common"] = p.common;
    j["a_only"] = p.a_only;
    j["b_only"] = p.b_only;
    j["category_balance"] = {{"images_a", p.balance.images_a},
                             {"images_b", p.balance.images_b},
                             {"categories_a", p.balance.categories_a},
                             {"categories_b", p.balance.categories_b}};
    j["image_balance"] = {{"images_a", world.split.balance.images_a},
                          {"images_b", world.split.balance.images_b},
                          {"others", world.split.others.size()}};
    j["a_images"] = world.split.a_images;
    j["b_images"] = world.split.b_images;
    j["others"] = world.split.others;
    j["sets"] = {{"pretrain_a", world.sets.pretrain_a},
                 {"pretrain_b", world.sets.pretrain_b},
                 {"pool", world.sets.pool},
                 {"eval", world.sets.eval},
                 {"topline", world.sets.topline}};
    std::ofstream out(dir / "split.json", std::ios::binary);
    out << j.dump(1) << '\n';
  }
}

}  // namespace mhcg

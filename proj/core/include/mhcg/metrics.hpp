#pragma once

// Caption-quality measures: joint caption log-likelihood under both agents'
// text encoders, multi-label category precision/recall/F1 from category
// tokens found in captions, and BLEU@4.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"

namespace mhcg {

/// log p(z^A | c; phi^A) + log p(z^B | c; phi^B)
double joint_caption_loglik(const TextEncoderParams& phi_a, const TextEncoderParams& phi_b, const Latent& z_a,
                            const Latent& z_b, const Caption& c);

/// Per category i: images where the category is both predicted and annotated
/// (correct), predicted, and annotated (ground truth).
struct CategoryCounts {
  std::vector<std::int64_t> correct;
  std::vector<std::int64_t> predicted;
  std::vector<std::int64_t> truth;

  explicit CategoryCounts(std::size_t categories = 0)
      : correct(categories, 0), predicted(categories, 0), truth(categories, 0) {}
  std::size_t categories() const { return truth.size(); }

  /// Each (image, category) pair counts at most once.
  void add(const std::vector<int>& predicted_set, const std::vector<int>& truth_set);
};

struct CategoryMetrics {
  double op = 0.0;
  double orc = 0.0;
  double of1 = 0.0;
  double cp = 0.0;
  double cr = 0.0;
  double cf1 = 0.0;
};

double f1(double precision, double recall);

/// OP = sum Mc / sum Mp, OR = sum Mc / sum Mg, CP/CR = category means of the
/// per-category ratios; a zero denominator contributes 0.
CategoryMetrics category_metrics(const CategoryCounts& counts);

/// Restricted to a subset of categories (C becomes the subset size).
CategoryMetrics category_metrics(const CategoryCounts& counts, const std::vector<int>& subset);

/// F1 of each category's own precision and recall.
std::vector<double> per_category_f1(const CategoryCounts& counts);

/// Sorted categories whose lexicon has a token in `caption`.
std::vector<int> match_categories(const Caption& caption, const std::vector<std::vector<int>>& lexicon);

/// Modified 1-4-gram precisions, geometric mean, brevity penalty against the
/// reference length closest to the candidate; zero counts smoothed to 1e-9.
double bleu4(const Caption& candidate, const std::vector<Caption>& references);

// --- CSV dumps -------------------------------------------------------------

struct MetricRow {
  std::string agent;
  std::string method;
  std::string slice;
  std::string metric;
  double value = 0.0;
};

/// Shortest text that parses back to the same double.
std::string format_double(double x);

/// Header `agent,method,slice,metric,value`.
void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

struct Cf1Row {
  std::string method;
  std::string agent;
  std::vector<double> f1;  // one per category
};

/// Header `method,agent,<category names...>`.
void write_cf1_matrix(const std::vector<Cf1Row>& rows, const std::vector<std::string>& category_names,
                      const std::filesystem::path& path);

}  // namespace mhcg

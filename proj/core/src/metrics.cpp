#include "mhcg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "mhcg/errors.hpp"

namespace mhcg {

double joint_caption_loglik(const TextEncoderParams& phi_a, const TextEncoderParams& phi_b, const Latent& z_a,
                            const Latent& z_b, const Caption& c) {
  return text_encoder_logpdf(phi_a, z_a, c) + text_encoder_logpdf(phi_b, z_b, c);
}

void CategoryCounts::add(const std::vector<int>& predicted_set, const std::vector<int>& truth_set) {
  std::vector<int> p = predicted_set, t = truth_set;
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  const auto C = static_cast<int>(categories());
  for (int i : p) {
    if (i < 0 || i >= C) throw InputError("CategoryCounts: predicted category out of range");
    ++predicted[static_cast<std::size_t>(i)];
  }
  for (int i : t) {
    if (i < 0 || i >= C) throw InputError("CategoryCounts: annotated category out of range");
    ++truth[static_cast<std::size_t>(i)];
    if (std::binary_search(p.begin(), p.end(), i)) ++correct[static_cast<std::size_t>(i)];
  }
}

double f1(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void check(const CategoryCounts& counts) {
  const auto C = counts.categories();
  if (C == 0) throw InputError("category metrics need at least one category");
  if (counts.correct.size() != C || counts.predicted.size() != C)
    throw InputError("category counts have inconsistent lengths");
  for (std::size_t i = 0; i < C; ++i) {
    if (counts.correct[i] < 0 || counts.predicted[i] < 0 || counts.truth[i] < 0)
      throw InputError("category counts must be non-negative");
    if (counts.correct[i] > std::min(counts.predicted[i], counts.truth[i]))
      throw InputError("correct count exceeds predicted or annotated count");
  }
}

}  // namespace

CategoryMetrics category_metrics(const CategoryCounts& counts, const std::vector<int>& subset) {
  check(counts);
  if (subset.empty()) throw InputError("category metrics need at least one category");
  double mc = 0.0, mp = 0.0, mg = 0.0, cp = 0.0, cr = 0.0;
  for (int i : subset) {
    if (i < 0 || static_cast<std::size_t>(i) >= counts.categories()) throw InputError("category subset out of range");
    const auto u = static_cast<std::size_t>(i);
    const auto c = static_cast<double>(counts.correct[u]);
    const auto p = static_cast<double>(counts.predicted[u]);
    const auto g = static_cast<double>(counts.truth[u]);
    mc += c;
    mp += p;
    mg += g;
    cp += ratio(c, p);
    cr += ratio(c, g);
  }
  const auto C = static_cast<double>(subset.size());
  CategoryMetrics m;
  m.op = ratio(mc, mp);
  m.orc = ratio(mc, mg);
  m.of1 = f1(m.op, m.orc);
  m.cp = cp / C;
  m.cr = cr / C;
  m.cf1 = f1(m.cp, m.cr);
  return m;
}

CategoryMetrics category_metrics(const CategoryCounts& counts) {
  std::vector<int> all(counts.categories());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return category_metrics(counts, all);
}

std::vector<double> per_category_f1(const CategoryCounts& counts) {
  check(counts);
  std::vector<double> out;
  for (std::size_t i = 0; i < counts.categories(); ++i) {
    const auto c = static_cast<double>(counts.correct[i]);
    out.push_back(f1(ratio(c, static_cast<double>(counts.predicted[i])), ratio(c, static_cast<double>(counts.truth[i]))));
  }
  return out;
}

std::vector<int> match_categories(const Caption& caption, const std::vector<std::vector<int>>& lexicon) {
  std::vector<int> out;
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    const auto& words = lexicon[i];
    const bool hit = std::any_of(caption.tokens().begin(), caption.tokens().end(), [&](int t) {
      return std::find(words.begin(), words.end(), t) != words.end();
    });
    if (hit) out.push_back(static_cast<int>(i));
  }
  return out;
}

double bleu4(const Caption& candidate, const std::vector<Caption>& references) {
  if (references.empty()) throw InputError("bleu4: at least one reference required");
  constexpr double kSmooth = 1e-9;
  const auto cand = candidate.tokens();
  double log_precision = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<int>, int> cand_counts;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[std::vector<int>(cand.begin() + i, cand.begin() + i + n)];
    std::map<std::vector<int>, int> max_ref;
    for (const auto& ref : references) {
      std::map<std::vector<int>, int> counts;
      const auto r = ref.tokens();
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++counts[std::vector<int>(r.begin() + i, r.begin() + i + n)];
      for (const auto& [gram, k] : counts) max_ref[gram] = std::max(max_ref[gram], k);
    }
    double clipped = 0.0, total = 0.0;
    for (const auto& [gram, k] : cand_counts) {
      total += k;
      const auto it = max_ref.find(gram);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    const double p = total > 0.0 && clipped > 0.0 ? clipped / total : kSmooth;
    log_precision += 0.25 * std::log(p);
  }
  const auto c = static_cast<double>(cand.size());
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c >= r ? 1.0 : (c > 0.0 ? std::exp(1.0 - r / c) : 0.0);
  return bp * std::exp(log_precision);
}

std::string format_double(double x) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "agent,method,slice,metric,value\n";
  for (const auto& r : rows)
    out << r.agent << ',' << r.method << ',' << r.slice << ',' << r.metric << ',' << format_double(r.value) << '\n';
}

void write_cf1_matrix(const std::vector<Cf1Row>& rows, const std::vector<std::string>& category_names,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "method,agent";
  for (const auto& n : category_names) out << ',' << n;
  out << '\n';
  for (const auto& r : rows) {
    if (r.f1.size() != category_names.size()) throw InputError("cf1 row length does not match category count");
    out << r.method << ',' << r.agent;
    for (double v : r.f1) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace mhcg

#include "vcshot/episode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "vcshot/parallel.hpp"
#include "vcshot/random.hpp"

namespace vcshot {

std::string to_string(ClassifierKind kind) {
  return kind == ClassifierKind::kNearestNeighbor ? "nn" : "likelihood";
}

std::string to_string(DictionaryScope scope) { return scope == DictionaryScope::kPerTrial ? "per-trial" : "pool"; }

ClassifierKind parse_classifier(const std::string& name) {
  if (name == "nn") return ClassifierKind::kNearestNeighbor;
  if (name == "likelihood" || name == "lh") return ClassifierKind::kLikelihood;
  throw InvalidArgument("unknown classifier '" + name + "' (expected nn or likelihood)");
}

DictionaryScope parse_dictionary_scope(const std::string& name) {
  if (name == "per-trial") return DictionaryScope::kPerTrial;
  if (name == "pool") return DictionaryScope::kPool;
  throw InvalidArgument("unknown dictionary scope '" + name + "' (expected per-trial or pool)");
}

void validate_spec(const EpisodeSpec& spec) {
  if (spec.ways == 0) throw InvalidArgument("ways must be positive");
  if (spec.shots == 0) throw InvalidArgument("shots must be positive");
  if (spec.queries == 0) throw InvalidArgument("queries must be positive");
  if (spec.trials == 0) throw InvalidArgument("trials must be positive");
  if (spec.num_vcs == 0) throw InvalidArgument("num_vcs must be positive");
  if (!(spec.coverage_target > 0.0 && spec.coverage_target <= 1.0)) {
    throw InvalidArgument("coverage target must lie in (0, 1]");
  }
  if (!(spec.threshold_step > 0.0 && spec.threshold_step <= 2.0)) {
    throw InvalidArgument("threshold step must lie in (0, 2]");
  }
  if (!(spec.sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (!(spec.epsilon > 0.0 && spec.epsilon < 0.5)) throw InvalidArgument("epsilon must lie in (0, 0.5)");
  if (spec.em_max_iters == 0) throw InvalidArgument("EM max iterations must be positive");
  if (!(spec.em_rel_tol > 0.0)) throw InvalidArgument("EM relative tolerance must be positive");
}

std::vector<std::uint32_t> eligible_categories(const FeatureStore& store, const EpisodeSpec& spec) {
  std::map<std::uint32_t, std::size_t> counts;
  for (const auto& g : store.grids) ++counts[g.category_id];
  std::vector<std::uint32_t> out;
  for (const auto& [category, n] : counts) {
    if (n >= spec.shots + spec.queries) out.push_back(category);
  }
  return out;
}

Episode sample_episode(const FeatureStore& store, const EpisodeSpec& spec, std::uint64_t seed) {
  const auto eligible = eligible_categories(store, spec);
  if (eligible.size() < spec.ways) {
    throw InsufficientData("need " + std::to_string(spec.ways) + " categories with at least " +
                           std::to_string(spec.shots + spec.queries) + " images each, store has " +
                           std::to_string(eligible.size()));
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < store.grids.size(); ++i) by_category[store.grids[i].category_id].push_back(i);

  Rng rng(seed);
  Episode ep;
  for (std::size_t pick : rng.sample_without_replacement(eligible.size(), spec.ways)) {
    ep.categories.push_back(eligible[pick]);
  }
  for (std::uint32_t category : ep.categories) {
    const auto& images = by_category.at(category);
    const auto drawn = rng.sample_without_replacement(images.size(), spec.shots + spec.queries);
    for (std::size_t k = 0; k < drawn.size(); ++k) {
      if (k < spec.shots) {
        ep.support.push_back(images[drawn[k]]);
        ep.support_labels.push_back(category);
      } else {
        ep.queries.push_back(images[drawn[k]]);
        ep.query_labels.push_back(category);
      }
    }
  }
  return ep;
}

namespace {

FitConfig fit_config(const EpisodeSpec& spec, std::uint64_t seed) {
  FitConfig config;
  config.num_vcs = spec.num_vcs;
  config.seed = seed;
  config.max_iters = spec.em_max_iters;
  config.rel_tol = spec.em_rel_tol;
  config.kappa_max = spec.kappa_max;
  return config;
}

bool any_bit(const VcEncoding& e) {
  return std::any_of(e.bits.begin(), e.bits.end(), [](std::uint8_t b) { return b != 0; });
}

}  // namespace

VcDictionary fit_pool_dictionary(const FeatureStore& store, const EpisodeSpec& spec) {
  validate_spec(spec);
  const auto eligible = eligible_categories(store, spec);
  std::vector<std::size_t> grids;
  for (std::size_t i = 0; i < store.grids.size(); ++i) {
    if (std::binary_search(eligible.begin(), eligible.end(), store.grids[i].category_id)) grids.push_back(i);
  }
  const auto pooled = collect_vectors(store, grids);
  return fit_vmfm(pooled.vectors, fit_config(spec, split_seed(spec.seed, ~std::uint64_t{0})));
}

TrialResult run_episode(const FeatureStore& store, const EpisodeSpec& spec, std::uint64_t seed,
                        const VcDictionary* shared) {
  validate_spec(spec);
  TrialResult result;
  result.episode = sample_episode(store, spec, seed);
  const Episode& ep = result.episode;

  if (shared != nullptr) {
    result.dictionary = *shared;
  } else {
    // Only support images take part in VC learning.
    const auto pooled = collect_vectors(store, ep.support);
    result.dictionary = fit_vmfm(pooled.vectors, fit_config(spec, split_seed(seed, 1)));
  }
  const VcDictionary& dict = result.dictionary;

  std::vector<DistanceTensor> support_distances;
  support_distances.reserve(ep.support.size());
  for (std::size_t gi : ep.support) support_distances.push_back(compute_distances(store.grids[gi], dict));
  result.threshold = search_threshold(support_distances, {spec.coverage_target, spec.threshold_step});

  std::vector<std::uint32_t> labels = ep.support_labels;
  if (spec.shuffle_labels) {
    Rng shuffler(split_seed(seed, 2));
    shuffler.shuffle(std::span<std::uint32_t>(labels));
  }
  std::vector<LabeledEncoding> support;
  support.reserve(ep.support.size());
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    support.push_back({encode(support_distances[i], result.threshold), labels[i]});
  }

  std::optional<LikelihoodModel> model;
  std::vector<LabeledEncoding> usable;
  const NeighborhoodSpec nbhd{spec.radius};
  if (spec.classifier == ClassifierKind::kLikelihood) {
    model = fit_likelihood(support, spec.sigma, spec.epsilon);
  } else {
    // An all-zero support encoding has no defined similarity; it cannot win.
    for (const auto& s : support) {
      if (any_bit(s.encoding)) usable.push_back(s);
    }
  }

  result.predictions.resize(ep.queries.size(), kNoPrediction);
  for (std::size_t q = 0; q < ep.queries.size(); ++q) {
    const auto query = encode(compute_distances(store.grids[ep.queries[q]], dict), result.threshold);
    if (model) {
      result.predictions[q] = classify_lh(query, *model);
    } else if (any_bit(query) && !usable.empty()) {
      result.predictions[q] = classify_nn(query, usable, nbhd);
    }
    if (result.predictions[q] == ep.query_labels[q]) ++result.correct;
  }
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(ep.queries.size());
  return result;
}

AccuracySummary summarize_accuracies(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw InvalidArgument("summarize_accuracies: no trials");
  const double n = static_cast<double>(accuracies.size());
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  AccuracySummary out;
  out.mean = sum / n;
  if (accuracies.size() > 1) {
    double sq = 0.0;
    for (double a : accuracies) sq += (a - out.mean) * (a - out.mean);
    const double sample_std = std::sqrt(sq / (n - 1.0));
    out.ci95_halfwidth = 1.96 * sample_std / std::sqrt(n);
  }
  return out;
}

std::uint64_t trial_seed(const EpisodeSpec& spec, std::size_t trial) { return split_seed(spec.seed, trial); }

EpisodeReport run_benchmark(const FeatureStore& store, const EpisodeSpec& spec) {
  validate_spec(spec);
  // Fail fast before spawning trials.
  if (eligible_categories(store, spec).size() < spec.ways) sample_episode(store, spec, spec.seed);

  std::optional<VcDictionary> pool;
  if (spec.dictionary_scope == DictionaryScope::kPool) pool = fit_pool_dictionary(store, spec);

  EpisodeReport report;
  report.spec = spec;
  report.accuracies.resize(spec.trials);
  report.thresholds.resize(spec.trials);
  parallel_for(spec.trials, [&](std::size_t t) {
    const auto r = run_episode(store, spec, trial_seed(spec, t), pool ? &*pool : nullptr);
    report.accuracies[t] = r.accuracy;
    report.thresholds[t] = r.threshold;
  });
  const auto summary = summarize_accuracies(report.accuracies);
  report.mean_accuracy = summary.mean;
  report.ci95_halfwidth = summary.ci95_halfwidth;
  return report;
}

void write_trial_trace_csv(std::ostream& out, const FeatureStore& store, const EpisodeSpec& spec,
                           std::size_t trial, std::size_t query_index) {
  validate_spec(spec);
  std::optional<VcDictionary> pool;
  if (spec.dictionary_scope == DictionaryScope::kPool) pool = fit_pool_dictionary(store, spec);
  const std::uint64_t seed = trial_seed(spec, trial);
  const TrialResult r = run_episode(store, spec, seed, pool ? &*pool : nullptr);
  if (query_index >= r.episode.queries.size()) throw InvalidArgument("trace: query index out of range");

  std::vector<std::uint32_t> labels = r.episode.support_labels;
  if (spec.shuffle_labels) {
    Rng shuffler(split_seed(seed, 2));
    shuffler.shuffle(std::span<std::uint32_t>(labels));
  }
  std::vector<LabeledEncoding> support;
  for (std::size_t i = 0; i < r.episode.support.size(); ++i) {
    support.push_back(
        {encode(compute_distances(store.grids[r.episode.support[i]], r.dictionary), r.threshold), labels[i]});
  }
  const auto model = fit_likelihood(support, spec.sigma, spec.epsilon);
  const auto query =
      encode(compute_distances(store.grids[r.episode.queries[query_index]], r.dictionary), r.threshold);
  write_likelihood_trace_csv(out, query, model);
}

std::string report_json(const EpisodeReport& report) {
  const auto& s = report.spec;
  nlohmann::ordered_json spec = {
      {"ways", s.ways},
      {"shots", s.shots},
      {"queries", s.queries},
      {"trials", s.trials},
      {"seed", s.seed},
      {"num_vcs", s.num_vcs},
      {"coverage_target", s.coverage_target},
      {"threshold_step", s.threshold_step},
      {"sigma", s.sigma},
      {"epsilon", s.epsilon},
      {"radius", s.radius},
      {"classifier", to_string(s.classifier)},
      {"dictionary_scope", to_string(s.dictionary_scope)},
      {"shuffle_labels", s.shuffle_labels},
      {"em_max_iters", s.em_max_iters},
      {"em_rel_tol", s.em_rel_tol},
      {"kappa_max", s.kappa_max},
  };
  nlohmann::ordered_json trials = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < report.accuracies.size(); ++t) {
    trials.push_back({{"accuracy", report.accuracies[t]}, {"threshold", report.thresholds[t]}});
  }
  nlohmann::ordered_json doc = {
      {"spec", spec},
      {"per_trial", trials},
      {"mean_accuracy", report.mean_accuracy},
      {"ci95_halfwidth", report.ci95_halfwidth},
  };
  return doc.dump(2) + "\n";
}

std::string report_csv(const EpisodeReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "trial,accuracy,threshold\n";
  for (std::size_t t = 0; t < report.accuracies.size(); ++t) {
    os << t << ',' << report.accuracies[t] << ',' << report.thresholds[t] << '\n';
  }
  return os.str();
}

}  // namespace vcshot

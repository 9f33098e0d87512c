#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vcshot/classifiers.hpp"
#include "vcshot/encoding.hpp"
#include "vcshot/feature_store.hpp"
#include "vcshot/vmf.hpp"

namespace vcshot {

enum class ClassifierKind { kNearestNeighbor, kLikelihood };

// Where the VC dictionary comes from.
enum class DictionaryScope {
  kPerTrial,  // refit on the pooled support vectors of every trial
  kPool,      // fit once on every image of the eligible categories
};

std::string to_string(ClassifierKind kind);
std::string to_string(DictionaryScope scope);
ClassifierKind parse_classifier(const std::string& name);
DictionaryScope parse_dictionary_scope(const std::string& name);

struct EpisodeSpec {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 15;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t num_vcs = 200;
  double coverage_target = 0.8;
  double threshold_step = 0.001;
  double sigma = kDefaultSigma;
  double epsilon = kDefaultEpsilon;
  std::uint32_t radius = 1;
  ClassifierKind classifier = ClassifierKind::kNearestNeighbor;
  DictionaryScope dictionary_scope = DictionaryScope::kPerTrial;
  // Permute support labels before fitting the classifier (chance control).
  bool shuffle_labels = false;
  std::size_t em_max_iters = 200;
  double em_rel_tol = 1e-6;
  double kappa_max = kDefaultKappaMax;
};

// Throws InvalidArgument on any out-of-range field.
void validate_spec(const EpisodeSpec& spec);

struct Episode {
  std::vector<std::uint32_t> categories;       // sampled, in draw order
  std::vector<std::size_t> support;            // grid indices
  std::vector<std::uint32_t> support_labels;   // true labels
  std::vector<std::size_t> queries;            // grid indices
  std::vector<std::uint32_t> query_labels;
};

// Sentinel prediction for a query that cannot be scored (empty encoding).
inline constexpr std::uint32_t kNoPrediction = std::numeric_limits<std::uint32_t>::max();

struct TrialResult {
  Episode episode;
  VcDictionary dictionary;
  double threshold = 0.0;
  std::vector<std::uint32_t> predictions;  // parallel to episode.queries
  std::size_t correct = 0;
  double accuracy = 0.0;
};

// Categories with at least shots + queries images, ascending.
std::vector<std::uint32_t> eligible_categories(const FeatureStore& store, const EpisodeSpec& spec);

// Draws N categories uniformly without replacement, then K support and Q
// query images per category, all disjoint.
Episode sample_episode(const FeatureStore& store, const EpisodeSpec& spec, std::uint64_t trial_seed);

// One trial. When `shared` is given it is used instead of fitting VCs on
// the support set.
TrialResult run_episode(const FeatureStore& store, const EpisodeSpec& spec, std::uint64_t trial_seed,
                        const VcDictionary* shared = nullptr);

// Dictionary fitted on every image of the eligible categories.
VcDictionary fit_pool_dictionary(const FeatureStore& store, const EpisodeSpec& spec);

struct AccuracySummary {
  double mean = 0.0;
  double ci95_halfwidth = 0.0;  // 1.96 * sample std / sqrt(n); 0 when n == 1
};

AccuracySummary summarize_accuracies(const std::vector<double>& accuracies);

struct EpisodeReport {
  EpisodeSpec spec;
  std::vector<double> accuracies;
  std::vector<double> thresholds;
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
};

std::uint64_t trial_seed(const EpisodeSpec& spec, std::size_t trial);

// spec.trials independent trials, seeded per trial index. Identical output
// for any worker count.
EpisodeReport run_benchmark(const FeatureStore& store, const EpisodeSpec& spec);

// Rebuilds trial `trial` of the benchmark, fits the likelihood model on
// its support set (whatever spec.classifier says) and writes the per-VC
// log-likelihood contributions of query `query_index` as CSV.
void write_trial_trace_csv(std::ostream& out, const FeatureStore& store, const EpisodeSpec& spec,
                           std::size_t trial, std::size_t query_index);

// {"spec": {...}, "per_trial": [{"accuracy", "threshold"}], "mean_accuracy",
//  "ci95_halfwidth"}
std::string report_json(const EpisodeReport& report);
// trial,accuracy,threshold
std::string report_csv(const EpisodeReport& report);

}  // namespace vcshot

#include "vcshot/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "vcshot/classifiers.hpp"
#include "vcshot/encoding.hpp"
#include "vcshot/episode.hpp"
#include "vcshot/feature_store.hpp"
#include "vcshot/vmf.hpp"

namespace vcshot::cli {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::kIo, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw StoreError(StoreErrc::kIo, "write to " + path.string() + " failed");
}

std::string safe_file_stem(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out.empty() ? "_" : out;
}

int cmd_validate(const std::string& store_path, std::ostream& out) {
  const FeatureStore store = load_store(store_path);
  out << "store: " << store_path << "\n";
  out << "layer: " << store.layer_name << "\n";
  out << "grids: " << store.grids.size() << "\n";
  out << "categories: " << store.categories.size() << "\n";

  std::map<std::uint32_t, std::size_t> per_category;
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::size_t> shapes;
  for (const auto& g : store.grids) {
    ++per_category[g.category_id];
    ++shapes[{g.height, g.width, g.channels}];
  }
  for (const auto& [id, name] : store.categories) {
    out << "  " << id << " " << name << ": " << per_category[id] << " grids\n";
  }
  out << "shapes (HxWxC):\n";
  for (const auto& [shape, n] : shapes) {
    out << "  " << std::get<0>(shape) << "x" << std::get<1>(shape) << "x" << std::get<2>(shape) << ": " << n
        << "\n";
  }
  return kOk;
}

int cmd_learn_vcs(const std::string& store_path, const std::string& out_path, const FitConfig& config,
                  std::ostream& out) {
  const FeatureStore store = load_store(store_path);
  const auto pooled = collect_vectors(store, std::function<bool(std::string_view)>{});
  const VcDictionary dict = fit_vmfm(pooled.vectors, config);
  save_dictionary(dict, out_path);

  // Purity of hard assignments against the grids' category labels.
  const auto assignment = assign_hard(pooled.vectors, dict);
  std::vector<std::map<std::uint32_t, std::size_t>> votes(dict.size());
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    ++votes[assignment[m]][store.grids[pooled.sources[m].grid_index].category_id];
  }
  std::size_t agree = 0;
  for (const auto& v : votes) {
    std::size_t best = 0;
    for (const auto& [category, n] : v) best = std::max(best, n);
    agree += best;
  }
  const double purity = assignment.empty() ? 0.0 : static_cast<double>(agree) / static_cast<double>(assignment.size());

  out.precision(12);
  out << "vectors: " << pooled.vectors.size() << " (excluded near-zero: " << pooled.excluded << ")\n";
  out << "vcs: " << dict.size() << "\n";
  out << "log_likelihood: " << dict.log_likelihood << "\n";
  out << "iterations: " << dict.iterations << "\n";
  out << "purity: " << purity << "\n";
  out << "wrote: " << out_path << "\n";
  return kOk;
}

struct EncodeOptions {
  std::string dict_path;
  std::optional<double> threshold;
  ThresholdSearch search;
  std::string out_dir;
  std::vector<std::string> image_ids;
};

int cmd_encode(const std::string& store_path, const EncodeOptions& opt, std::ostream& out) {
  const FeatureStore store = load_store(store_path);
  const VcDictionary dict = load_dictionary(opt.dict_path);

  std::vector<std::size_t> selected;
  const std::set<std::string> wanted(opt.image_ids.begin(), opt.image_ids.end());
  for (std::size_t i = 0; i < store.grids.size(); ++i) {
    if (wanted.empty() || wanted.contains(store.grids[i].image_id)) selected.push_back(i);
  }
  if (selected.size() < wanted.size()) throw InvalidArgument("encode: some --image-id values are not in the store");
  if (selected.empty()) throw InvalidArgument("encode: store has no grids");

  std::vector<DistanceTensor> distances;
  for (std::size_t gi : selected) distances.push_back(compute_distances(store.grids[gi], dict));
  const double threshold = opt.threshold ? *opt.threshold : search_threshold(distances, opt.search);

  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);
  out.precision(12);
  out << "threshold: " << threshold << "\n";
  out << "image_id,coverage,firerate\n";
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const auto& grid = store.grids[selected[k]];
    const VcEncoding enc = encode(distances[k], threshold);
    out << grid.image_id << "," << enc.coverage << "," << enc.firerate << "\n";
    if (!opt.out_dir.empty()) {
      save_encoding_bits(enc, std::filesystem::path(opt.out_dir) / (safe_file_stem(grid.image_id) + ".vcbe"));
    }
  }
  return kOk;
}

struct EvalOutputs {
  std::string json_path;
  std::string csv_path;
  std::string trace_path;
  std::size_t trace_query = 0;
};

int cmd_eval(const std::string& store_path, const EpisodeSpec& spec, const EvalOutputs& outputs, std::ostream& out) {
  validate_spec(spec);
  const FeatureStore store = load_store(store_path);
  const EpisodeReport report = run_benchmark(store, spec);
  const std::string json = report_json(report);
  if (outputs.json_path.empty()) {
    out << json;
  } else {
    write_text(outputs.json_path, json);
  }
  if (!outputs.csv_path.empty()) write_text(outputs.csv_path, report_csv(report));
  if (!outputs.trace_path.empty()) {
    std::ofstream trace(outputs.trace_path, std::ios::trunc);
    if (!trace) throw StoreError(StoreErrc::kIo, "cannot open " + outputs.trace_path);
    write_trial_trace_csv(trace, store, spec, 0, outputs.trace_query);
  }
  out.setf(std::ios::fixed);
  out.precision(2);
  out << to_string(spec.classifier) << " " << spec.ways << "-way " << spec.shots << "-shot: "
      << 100.0 * report.mean_accuracy << " ± " << 100.0 * report.ci95_halfwidth << " % over " << spec.trials
      << " trials\n";
  out.unsetf(std::ios::fixed);
  return kOk;
}

int cmd_inspect_vc(const std::string& store_path, const std::string& dict_path, std::size_t vc_index,
                   std::size_t top_k, const std::string& out_path, std::ostream& out) {
  const FeatureStore store = load_store(store_path);
  const VcDictionary dict = load_dictionary(dict_path);
  if (vc_index >= dict.size()) {
    throw InvalidArgument("inspect-vc: --vc-index " + std::to_string(vc_index) + " out of range (dictionary has " +
                          std::to_string(dict.size()) + " VCs)");
  }

  struct Hit {
    float distance;
    std::size_t grid;
    std::size_t position;
  };
  std::vector<Hit> hits;
  for (std::size_t gi = 0; gi < store.grids.size(); ++gi) {
    const auto d = compute_distances(store.grids[gi], dict);
    for (std::size_t p = 0; p < d.positions(); ++p) hits.push_back({d.at(p, vc_index), gi, p});
  }
  const std::size_t keep = std::min(top_k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    [](const Hit& a, const Hit& b) {
                      if (a.distance != b.distance) return a.distance < b.distance;
                      if (a.grid != b.grid) return a.grid < b.grid;
                      return a.position < b.position;
                    });

  std::ostringstream csv;
  csv.precision(9);
  csv << "rank,image_id,distance,row,col,x,y,rf_size,left,top\n";
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& h = hits[k];
    const FeatureGrid& g = store.grids[h.grid];
    const std::size_t row = h.position / g.width;
    const std::size_t col = h.position % g.width;
    const std::int64_t x = g.input_coord(col);
    const std::int64_t y = g.input_coord(row);
    const std::int64_t half = g.rf_size / 2;
    csv << k << "," << g.image_id << "," << h.distance << "," << row << "," << col << "," << x << "," << y << ","
        << g.rf_size << "," << std::max<std::int64_t>(0, x - half) << "," << std::max<std::int64_t>(0, y - half)
        << "\n";
  }
  if (out_path.empty()) {
    out << csv.str();
  } else {
    write_text(out_path, csv.str());
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot classification with visual concepts"};
  app.name("vcshot");
  app.require_subcommand(1);

  std::string store_path;
  std::string dict_path;
  std::string out_path;

  auto* validate = app.add_subcommand("validate", "Check a VCFS store and summarise it");
  validate->add_option("store", store_path, "VCFS feature store")->required();

  FitConfig fit;
  auto* learn = app.add_subcommand("learn-vcs", "Fit a vMF mixture to all feature vectors of a store");
  learn->add_option("store", store_path, "VCFS feature store")->required();
  learn->add_option("--num-vcs", fit.num_vcs, "Number of VCs")->capture_default_str()->check(CLI::PositiveNumber);
  learn->add_option("--seed", fit.seed, "Random seed")->capture_default_str();
  learn->add_option("--max-iters", fit.max_iters, "EM iteration cap")->capture_default_str()->check(CLI::PositiveNumber);
  learn->add_option("--rel-tol", fit.rel_tol, "EM relative tolerance")->capture_default_str()->check(CLI::PositiveNumber);
  learn->add_option("--kappa-max", fit.kappa_max, "Concentration cap")->capture_default_str()->check(CLI::PositiveNumber);
  learn->add_option("--out", out_path, "Output VCDC dictionary")->required();

  EncodeOptions enc;
  double threshold_flag = 0.0;
  auto* encode_cmd = app.add_subcommand("encode", "Encode grids as binary VC-Encodings");
  encode_cmd->add_option("store", store_path, "VCFS feature store")->required();
  encode_cmd->add_option("--dict", enc.dict_path, "VCDC dictionary")->required();
  auto* threshold_opt = encode_cmd->add_option("--threshold", threshold_flag, "Fixed threshold T in [0, 2]");
  encode_cmd->add_option("--coverage-target", enc.search.coverage_target, "Target mean coverage")->capture_default_str();
  encode_cmd->add_option("--step", enc.search.step, "Threshold grid step")->capture_default_str();
  encode_cmd->add_option("--out-dir", enc.out_dir, "Write one VCBE file per grid here");
  encode_cmd->add_option("--image-id", enc.image_ids, "Restrict to these images");

  EpisodeSpec spec;
  std::string classifier = "nn";
  std::string scope = "per-trial";
  EvalOutputs eval_out;
  auto* eval = app.add_subcommand("eval", "Run N-way K-shot episodes and report accuracy");
  eval->add_option("store", store_path, "VCFS feature store")->required();
  eval->add_option("--ways", spec.ways, "Categories per episode")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--shots", spec.shots, "Support images per category")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--queries", spec.queries, "Query images per category")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--trials", spec.trials, "Number of episodes")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  eval->add_option("--num-vcs", spec.num_vcs, "VCs per dictionary")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--coverage-target", spec.coverage_target, "Target mean coverage")->capture_default_str();
  eval->add_option("--step", spec.threshold_step, "Threshold grid step")->capture_default_str();
  eval->add_option("--sigma", spec.sigma, "Gaussian smoothing width")->capture_default_str();
  eval->add_option("--epsilon", spec.epsilon, "Probability clamp")->capture_default_str();
  eval->add_option("--radius", spec.radius, "Neighbourhood radius for nn")->capture_default_str();
  eval->add_option("--classifier", classifier, "nn | likelihood")->capture_default_str();
  eval->add_option("--dictionary-scope", scope, "per-trial | pool")->capture_default_str();
  eval->add_flag("--shuffle-labels", spec.shuffle_labels, "Permute support labels (chance control)");
  eval->add_option("--max-iters", spec.em_max_iters, "EM iteration cap")->capture_default_str();
  eval->add_option("--out", eval_out.json_path, "Write the JSON report here instead of stdout");
  eval->add_option("--csv", eval_out.csv_path, "Also write per-trial CSV");
  eval->add_option("--trace-csv", eval_out.trace_path, "Likelihood contribution maps for one query of trial 0");
  eval->add_option("--trace-query", eval_out.trace_query, "Query index for --trace-csv")->capture_default_str();

  std::size_t vc_index = 0;
  std::size_t top_k = 20;
  auto* inspect = app.add_subcommand("inspect-vc", "List the lattice cells closest to one VC");
  inspect->add_option("store", store_path, "VCFS feature store")->required();
  inspect->add_option("--dict", dict_path, "VCDC dictionary")->required();
  inspect->add_option("--vc-index", vc_index, "VC to inspect")->required();
  inspect->add_option("--top-k", top_k, "Number of cells")->capture_default_str();
  inspect->add_option("--out", out_path, "Write CSV here instead of stdout");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("vcshot");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageOrValidation;
  }

  try {
    if (validate->parsed()) return cmd_validate(store_path, out);
    if (learn->parsed()) return cmd_learn_vcs(store_path, out_path, fit, out);
    if (encode_cmd->parsed()) {
      if (*threshold_opt) enc.threshold = threshold_flag;
      return cmd_encode(store_path, enc, out);
    }
    if (eval->parsed()) {
      spec.classifier = parse_classifier(classifier);
      spec.dictionary_scope = parse_dictionary_scope(scope);
      return cmd_eval(store_path, spec, eval_out, out);
    }
    if (inspect->parsed()) return cmd_inspect_vc(store_path, dict_path, vc_index, top_k, out_path, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const NoThresholdFound& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsageOrValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageOrValidation;
  }
  return kUsageOrValidation;
}

}  // namespace vcshot::cli

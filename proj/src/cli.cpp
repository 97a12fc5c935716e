#include "dcvit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "dcvit/analysis.hpp"
#include "dcvit/config_io.hpp"
#include "dcvit/dataio.hpp"
#include "dcvit/error.hpp"

namespace dcvit {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json run_config_to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["synth"] = c.synth;
  j["model"] = c.model;
  j["train"] = c.train;
  j["kmeans"] = {{"k", c.kmeans.k}, {"max_iter", c.kmeans.max_iter}, {"tol", c.kmeans.tol},
                 {"seed", c.kmeans.seed}, {"init", c.kmeans_init}};
  j["clustered"] = c.clustered;
  j["split"] = {{"fractions", c.split_fractions}, {"seed", c.split_seed}};
  j["analysis"] = {{"threshold_mm", c.threshold_mm},
                   {"confidence", c.confidence},
                   {"heatmap_sample", c.heatmap_sample}};
  return j;
}

namespace {

ModelConfig preset_config(const std::string& name) {
  if (name == "full") return ModelConfig{};
  if (name == "tiny") return tiny_config();
  throw ConfigError("unknown preset '" + name + "' (expected full or tiny)");
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& input) {
  const json& doc = input.contains("config") ? input.at("config") : input;
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig c;
  read_opt(doc, "preset", c.preset);
  c.model = preset_config(c.preset);
  if (doc.contains("synth")) from_json(doc.at("synth"), c.synth);
  if (doc.contains("model")) from_json(doc.at("model"), c.model);
  if (doc.contains("train")) from_json(doc.at("train"), c.train);
  if (doc.contains("kmeans")) {
    const json& k = doc.at("kmeans");
    read_opt(k, "k", c.kmeans.k);
    read_opt(k, "max_iter", c.kmeans.max_iter);
    read_opt(k, "tol", c.kmeans.tol);
    read_opt(k, "seed", c.kmeans.seed);
    read_opt(k, "init", c.kmeans_init);
  }
  read_opt(doc, "clustered", c.clustered);
  if (doc.contains("split")) {
    read_opt(doc.at("split"), "fractions", c.split_fractions);
    read_opt(doc.at("split"), "seed", c.split_seed);
  }
  if (doc.contains("analysis")) {
    read_opt(doc.at("analysis"), "threshold_mm", c.threshold_mm);
    read_opt(doc.at("analysis"), "confidence", c.confidence);
    read_opt(doc.at("analysis"), "heatmap_sample", c.heatmap_sample);
  }
  return c;
}

KMeansOptions resolve_kmeans(const RunConfig& c) {
  if (c.kmeans_init != "grid" && c.kmeans_init != "plusplus") {
    throw ConfigError("kmeans init must be grid or plusplus");
  }
  KMeansOptions o = c.kmeans;
  const std::vector<Point2> targets = grid_targets(c.synth);
  if (c.kmeans_init == "grid" && targets.size() == o.k) {
    o.init = KMeansInit::kGivenCenters;
    o.initial_centers = targets;
  } else {
    o.init = KMeansInit::kPlusPlus;
  }
  return o;
}

namespace {

struct Flags {
  std::string in;
  std::string out;
  std::string checkpoint;
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::size_t k = 0;
  int epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  int trials = 0;
  std::string ds_block;
  std::string clustered;
  std::string head;
  std::size_t sample = 0;

  CLI::App* sub = nullptr;
  bool given(const char* name) const { return sub->get_option(name)->count() > 0; }
  bool has(const char* name) const {
    try {
      return given(name);
    } catch (const CLI::OptionNotFound&) {
      return false;
    }
  }
};

bool on_off(const std::string& v) { return v == "on"; }

RunConfig resolve_config(const Flags& f) {
  json doc = json::object();
  if (f.has("--config")) {
    std::ifstream is(f.config);
    if (!is) throw ConfigError("cannot open config file '" + f.config + "'");
    try {
      doc = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + f.config + "': " + e.what());
    }
    if (doc.contains("config")) doc = doc.at("config");
  }
  if (f.has("--preset")) doc["preset"] = f.preset;
  RunConfig c = run_config_from_json(doc);
  if (f.has("--seed")) {
    c.synth.seed = f.seed;
    c.kmeans.seed = f.seed;
    c.train.seed = f.seed;
    c.split_seed = f.seed;
  }
  if (f.has("--samples")) c.synth.n_samples = f.samples;
  if (f.has("--k")) {
    c.kmeans.k = f.k;
    c.model.num_classes = f.k;
  }
  if (f.has("--epochs")) c.train.epochs = f.epochs;
  if (f.has("--batch-size")) c.train.batch_size = f.batch_size;
  if (f.has("--lr")) c.train.learning_rate = f.lr;
  if (f.has("--trials")) c.train.trials = f.trials;
  if (f.has("--ds-block")) c.model.ds_block = on_off(f.ds_block);
  if (f.has("--head")) c.model.head_mode = parse_head_mode(f.head);
  if (f.has("--sample")) c.heatmap_sample = f.sample;
  if (f.has("--clustered")) c.clustered = on_off(f.clustered);
  c.train.loss = c.model.head_mode == HeadMode::kClassification ? LossKind::kCrossEntropy
                                                                 : LossKind::kMse;
  return c;
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args)
      : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = args;
    doc_["tool_version"] = kToolVersion;
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  void config(const RunConfig& c) { doc_["config"] = run_config_to_json(c); }
  void seeds(const json& s) { doc_["seeds"] = s; }
  void input(const fs::path& p) { doc_["inputs"].push_back(p.string()); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  void extra(const char* key, json value) { doc_[key] = std::move(value); }

  void write(const fs::path& path) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["duration_s"] = secs;
    write_file_atomic(path, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

fs::path with_suffix(const std::string& prefix, const std::string& suffix) {
  return fs::path(prefix + suffix);
}

void write_output(Manifest& m, const fs::path& path, const std::string& bytes) {
  write_file_atomic(path, bytes);
  m.output(path);
}

void require_distinct(const std::string& in, const std::string& out) {
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(in, out, ec)) {
    throw ConfigError("--out must differ from --in; inputs are never modified in place");
  }
}

std::string centroids_csv(const CentroidSet& set) {
  std::ostringstream os;
  os.precision(17);
  os << "cluster,x,y\n";
  for (std::size_t j = 0; j < set.k(); ++j)
    os << j << ',' << set.centroids[j].x << ',' << set.centroids[j].y << '\n';
  return os.str();
}

bool all_clustered(const Dataset& data) {
  return data.size() > 0 && std::all_of(data.labels.begin(), data.labels.end(),
                                        [](const GazeLabel& l) { return l.cluster_id.has_value(); });
}

std::size_t cluster_count(const Dataset& data) {
  std::uint32_t top = 0;
  for (const GazeLabel& l : data.labels)
    if (l.cluster_id) top = std::max(top, *l.cluster_id + 1);
  return top;
}

// ---------------------------------------------------------------------------
// Commands

int run_synth(const Flags& f, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig c = resolve_config(f);
  Manifest m("synth", args);
  m.config(c);
  m.seeds({{"synth", c.synth.seed}});
  const Dataset data = generate_synthetic(c.synth);
  write_output(m, f.out, encode_dataset(data));
  m.write(with_suffix(f.out, ".manifest.json"));
  out << "wrote " << data.size() << " samples (" << data.channels << " x " << data.timesteps
      << ") to " << f.out << '\n';
  return kExitOk;
}

int run_cluster(const Flags& f, const std::vector<std::string>& args, std::ostream& out) {
  require_distinct(f.in, f.out);
  const RunConfig c = resolve_config(f);
  Manifest m("cluster", args);
  m.config(c);
  m.seeds({{"kmeans", c.kmeans.seed}});
  m.input(f.in);
  const Dataset data = read_dataset(f.in);
  const KMeansOptions opts = resolve_kmeans(c);
  const std::vector<Point2> points = label_points(data);
  const CentroidSet set = kmeans_fit(points, opts);
  const Dataset relabeled = relabel(data, set);
  write_output(m, f.out, encode_dataset(relabeled));
  write_output(m, with_suffix(f.out, ".centroids.csv"), centroids_csv(set));
  m.extra("kmeans_result", {{"inertia", set.inertia}, {"iterations", set.iterations_run}});
  m.write(with_suffix(f.out, ".manifest.json"));
  out << "clustered " << data.size() << " labels into " << set.k() << " centroids in "
      << set.iterations_run << " iterations, inertia " << set.inertia << '\n';
  return kExitOk;
}

int run_train(const Flags& f, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig c = resolve_config(f);
  const bool clustered = c.clustered;
  Manifest m("train", args);
  m.input(f.in);
  const Dataset data = read_dataset(f.in);
  auto parts = split_dataset(data, c.split_fractions, c.split_seed);
  Splits splits{std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
  c.model.channels = data.channels;
  c.model.timesteps = data.timesteps;

  if (clustered) {
    const KMeansOptions opts = resolve_kmeans(c);
    const CentroidSet set = kmeans_fit(label_points(splits.train), opts);
    splits.train = relabel(splits.train, set);
    splits.val = relabel(splits.val, set);
    splits.test = relabel(splits.test, set);
    write_output(m, with_suffix(f.out, ".centroids.csv"), centroids_csv(set));
  }
  if (c.model.head_mode == HeadMode::kClassification) {
    if (!all_clustered(splits.train)) {
      throw DataError("classification head needs cluster ids: use --clustered on or a clustered dataset");
    }
    if (!clustered) c.model.num_classes = std::max(c.model.num_classes, cluster_count(data));
  }
  c.model.validate();
  m.config(c);
  m.seeds({{"train_base", c.train.seed}, {"split", c.split_seed}, {"kmeans", c.kmeans.seed}});

  const TrialSummary summary = multi_trial(c.model, splits, c.train, c.train.seed);

  std::size_t best = 0;
  auto best_val = [](const TrainRun& r) { return r.epochs.at(r.best_epoch - 1).val_rmse_mm; };
  for (std::size_t i = 1; i < summary.runs.size(); ++i)
    if (best_val(summary.runs[i]) < best_val(summary.runs[best])) best = i;
  const std::uint64_t best_seed = c.train.same_seed_trials ? c.train.seed : c.train.seed + best;
  Model model = build_model(c.model, best_seed);
  restore(model, summary.runs[best].best_state);
  write_checkpoint(with_suffix(f.out, ".ckpt"), model);
  m.output(with_suffix(f.out, ".ckpt"));

  std::ostringstream csv;
  for (std::size_t i = 0; i < summary.runs.size(); ++i) {
    csv << "# trial " << i << '\n' << metrics_csv(summary.runs[i]);
  }
  write_output(m, with_suffix(f.out, ".metrics.csv"), csv.str());

  json result = {{"test_rmse_mm", summary.test_rmse_mm},
                 {"mean_rmse_mm", summary.mean},
                 {"std_rmse_mm", summary.stddev},
                 {"best_trial", best},
                 {"parameters", count_parameters(model)},
                 {"splits", {splits.train.size(), splits.val.size(), splits.test.size()}}};
  json mean_dist = json::array();
  json best_epochs = json::array();
  for (const TrainRun& r : summary.runs) {
    mean_dist.push_back(r.test_mean_distance_mm);
    best_epochs.push_back(r.best_epoch);
  }
  result["test_mean_distance_mm"] = mean_dist;
  result["best_epochs"] = best_epochs;
  write_output(m, with_suffix(f.out, ".summary.json"), result.dump(2) + "\n");
  m.extra("result", result);
  m.write(with_suffix(f.out, ".manifest.json"));

  out.precision(6);
  out << "trials " << summary.runs.size() << ": test RMSE " << summary.mean << " +/- "
      << summary.stddev << " mm\n";
  return kExitOk;
}

Model load_model_for(const Flags& f, const Dataset& data) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Model model = read_checkpoint(f.checkpoint);
  if (model.config.channels != data.channels || model.config.timesteps != data.timesteps) {
    throw ShapeError("dataset geometry " + std::to_string(data.channels) + " x " +
                     std::to_string(data.timesteps) + " does not match the checkpoint");
  }
  return model;
}

std::vector<Point2> centroids_for(const Model& model, const Dataset& data) {
  if (model.config.head_mode != HeadMode::kClassification) return {};
  if (!all_clustered(data)) throw DataError("classification checkpoint needs a clustered dataset");
  return class_centroids(data, model.config.num_classes);
}

int run_eval(const Flags& f, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig c = resolve_config(f);
  Manifest m("eval", args);
  m.config(c);
  m.input(f.in);
  m.input(f.checkpoint);
  const Dataset data = read_dataset(f.in);
  const Model model = load_model_for(f, data);
  const std::vector<Point2> centroids = centroids_for(model, data);
  const std::vector<Point2> preds = predict_positions(model, data, centroids, c.train.eval_batch_size);
  const std::vector<Point2> labels = label_points(data);
  const RmseResult r = rmse_from_predictions(preds, labels, c.train.px_per_mm);

  std::ostringstream csv;
  csv.precision(9);
  csv << "index,pred_x,pred_y,label_x,label_y,distance_px\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    csv << i << ',' << preds[i].x << ',' << preds[i].y << ',' << labels[i].x << ',' << labels[i].y
        << ',' << r.distances_px[i] << '\n';
  }
  write_output(m, with_suffix(f.out, ".predictions.csv"), csv.str());
  const json result = {{"samples", data.size()},
                       {"rmse_px", r.rmse_px},
                       {"rmse_mm", r.rmse_mm},
                       {"mean_distance_mm", r.mean_distance_mm}};
  write_output(m, with_suffix(f.out, ".eval.json"), result.dump(2) + "\n");
  m.extra("result", result);
  m.write(with_suffix(f.out, ".manifest.json"));
  out << "RMSE " << r.rmse_mm << " mm (" << r.rmse_px << " px), mean distance "
      << r.mean_distance_mm << " mm over " << data.size() << " samples\n";
  return kExitOk;
}

int run_analyze(const Flags& f, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig c = resolve_config(f);
  Manifest m("analyze", args);
  m.config(c);
  m.input(f.in);
  m.input(f.checkpoint);
  const Dataset data = read_dataset(f.in);
  if (data.size() == 0) throw DataError("analyze: empty dataset");
  const Model model = load_model_for(f, data);
  const bool classify = model.config.head_mode == HeadMode::kClassification;
  const std::vector<Point2> centroids = centroids_for(model, data);
  const std::vector<Point2> labels = label_points(data);
  const auto outputs = predict_outputs(model, data, c.train.eval_batch_size);
  const std::vector<Point2> preds = predict_positions(model, data, centroids, c.train.eval_batch_size);

  ScatterOptions so;
  so.threshold_mm = c.threshold_mm;
  so.px_per_mm = c.train.px_per_mm;
  const ScatterResult scatter = error_scatter(preds, labels, so);
  write_output(m, with_suffix(f.out, ".scatter.svg"), scatter.svg);
  write_output(m, with_suffix(f.out, ".scatter.csv"), scatter.csv);

  if (c.heatmap_sample >= data.size()) throw ConfigError("--sample is out of range");
  const HeatmapResult heat = eeg_heatmap(data.sample(c.heatmap_sample), data.channels, data.timesteps);
  write_output(m, with_suffix(f.out, ".heatmap.svg"), heat.svg);
  write_output(m, with_suffix(f.out, ".heatmap.csv"), heat.csv);

  json result = {{"within_threshold", scatter.blue}, {"beyond_threshold", scatter.red}};
  if (all_clustered(data)) {
    const std::size_t k = classify ? model.config.num_classes : std::max(cluster_count(data), c.kmeans.k);
    const std::vector<Point2> refs = classify ? centroids : class_centroids(data, k);
    std::vector<std::uint32_t> truth, predicted;
    for (std::size_t i = 0; i < data.size(); ++i) {
      truth.push_back(*data.labels[i].cluster_id);
      predicted.push_back(nearest_centroid(refs, preds[i]));
    }
    const ConfusionMatrix cm = confusion_matrix(truth, predicted, k);
    const ClassReport report = class_report(cm);
    write_output(m, with_suffix(f.out, ".confusion.csv"), confusion_csv(cm));
    write_output(m, with_suffix(f.out, ".confusion.svg"), confusion_svg(cm));
    write_output(m, with_suffix(f.out, ".report.txt"), report.to_text());
    write_output(m, with_suffix(f.out, ".report.csv"), report.to_csv());
    result["accuracy"] = report.accuracy;
  }
  if (classify) {
    std::vector<double> flat;
    for (const auto& row : outputs) flat.insert(flat.end(), row.begin(), row.end());
    const Tensor logits({outputs.size(), model.config.num_classes}, std::move(flat));
    const std::vector<Selection> sel = high_confidence_select(logits, c.confidence);
    std::ostringstream csv;
    csv.precision(17);
    csv << "index,class,confidence\n";
    for (const Selection& s : sel) csv << s.index << ',' << s.class_id << ',' << s.confidence << '\n';
    write_output(m, with_suffix(f.out, ".confident.csv"), csv.str());
    result["high_confidence"] = sel.size();
  }
  m.extra("result", result);
  m.write(with_suffix(f.out, ".manifest.json"));
  out << "scatter: " << scatter.blue << " within " << c.threshold_mm << " mm, " << scatter.red
      << " beyond\n";
  return kExitOk;
}

int run_inspect(const Flags& f, std::ostream& out) {
  std::ifstream is(f.in, std::ios::binary);
  if (!is) throw DataError("cannot open '" + f.in + "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() < 4) throw TruncatedFileError("file shorter than its magic", 0);
  const std::string tag(magic, 4);
  if (tag == "EEGD") {
    const DatasetHeader h = read_dataset_header(f.in);
    out << "EEGDS dataset\n"
        << "  version:   " << h.version << '\n'
        << "  samples:   " << h.n_samples << '\n'
        << "  channels:  " << h.channels << '\n'
        << "  timesteps: " << h.timesteps << '\n'
        << "  bytes:     " << h.file_size << '\n';
    return kExitOk;
  }
  if (tag == "DCVT") {
    const Checkpoint ckpt = read_checkpoint_file(f.in);
    std::size_t values = 0;
    for (const CheckpointRecord& r : ckpt.records) values += r.values.size();
    out << "checkpoint\n"
        << "  version: " << ckpt.version << '\n'
        << "  records: " << ckpt.records.size() << '\n'
        << "  values:  " << values << '\n'
        << "  config:  " << ckpt.config_json << '\n';
    return kExitOk;
  }
  throw BadMagicError("unrecognized file magic", 0);
}

void add_common(CLI::App* sub, Flags& f, bool needs_in, bool needs_out) {
  auto* in = sub->add_option("--in", f.in, "Input path");
  if (needs_in) in->required();
  if (needs_out) sub->add_option("--out", f.out, "Output path or prefix")->required();
  sub->add_option("--config", f.config, "JSON configuration file (flags take precedence)");
  sub->add_option("--seed", f.seed, "Random seed");
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EEG gaze prediction with a convolutional vision transformer", "dcvit"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kToolVersion);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic grid-fixation dataset");
  add_common(synth, f, false, true);
  synth->add_option("--samples", f.samples, "Number of samples");

  auto* cluster = app.add_subcommand("cluster", "Snap labels to k-means centroids");
  add_common(cluster, f, true, true);
  cluster->add_option("--k", f.k, "Number of clusters");

  auto* train = app.add_subcommand("train", "Train with best-validation early stopping");
  add_common(train, f, true, true);
  train->add_option("--k", f.k, "Number of clusters / classes");
  train->add_option("--epochs", f.epochs, "Epochs per trial");
  train->add_option("--batch-size", f.batch_size, "Mini-batch size");
  train->add_option("--lr", f.lr, "Adam learning rate");
  train->add_option("--trials", f.trials, "Independent trials");
  train->add_option("--ds-block", f.ds_block, "Depthwise separable block")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--clustered", f.clustered, "Train on k-means relabeled targets")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--preset", f.preset, "Base model configuration")
      ->check(CLI::IsMember({"full", "tiny"}));
  train->add_option("--head", f.head, "Output head")
      ->check(CLI::IsMember({"regression", "classification"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(eval, f, true, true);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();

  auto* analyze = app.add_subcommand("analyze", "Write diagnostic figures and tables");
  add_common(analyze, f, true, true);
  analyze->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  analyze->add_option("--k", f.k, "Number of clusters for the confusion matrix");
  analyze->add_option("--sample", f.sample, "Sample index for the EEG heat map");

  auto* inspect = app.add_subcommand("inspect", "Print the header of a dataset or checkpoint");
  inspect->add_option("--in", f.in, "File to inspect")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n";
    CLI::App* active = &app;
    for (CLI::App* s : app.get_subcommands()) active = s;
    err << active->help();
    return kExitUsage;
  }

  const std::vector<std::string> full_args = [&] {
    std::vector<std::string> a{"dcvit"};
    a.insert(a.end(), args.begin(), args.end());
    return a;
  }();
  try {
    CLI::App* sub = app.get_subcommands().front();
    f.sub = sub;
    if (sub == synth) return run_synth(f, full_args, out);
    if (sub == cluster) return run_cluster(f, full_args, out);
    if (sub == train) return run_train(f, full_args, out);
    if (sub == eval) return run_eval(f, full_args, out);
    if (sub == analyze) return run_analyze(f, full_args, out);
    return run_inspect(f, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace dcvit

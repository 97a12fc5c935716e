#include "dcvit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "dcvit/error.hpp"
#include "dcvit/ops.hpp"
#include "dcvit/preprocess.hpp"

namespace dcvit {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(px_per_mm > 0.0)) throw ConfigError("train: px_per_mm must be positive");
  if (trials < 1) throw ConfigError("train: trials must be >= 1");
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  Tensor diff = sub(pred, target);
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& o) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) throw ShapeError("adam: state size mismatch");
    auto w = p.mutable_data();
    auto g = p.grad();
    const bool has_grad = !g.empty();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= o.lr * (mhat / (std::sqrt(vhat) + o.eps) + o.weight_decay * w[i]);
    }
  }
}

void adam_step(Model& model, AdamState& state, const AdamOptions& options) {
  std::vector<Tensor> params;
  params.reserve(model.parameters.size());
  for (auto& [name, t] : model.parameters) params.push_back(t);
  adam_step(params, state, options);
}

// ---------------------------------------------------------------------------
// Metrics

RmseResult rmse_from_predictions(std::span<const Point2> predictions,
                                 std::span<const Point2> labels, double px_per_mm) {
  if (predictions.size() != labels.size()) throw ShapeError("rmse: prediction/label count differs");
  if (predictions.empty()) throw DataError("rmse: empty dataset");
  if (!(px_per_mm > 0.0)) throw ConfigError("rmse: px_per_mm must be positive");
  RmseResult r;
  r.distances_px.reserve(labels.size());
  double sq = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double d2 = squared_distance(predictions[i], labels[i]);
    sq += d2;
    const double d = std::sqrt(d2);
    lin += d;
    r.distances_px.push_back(d);
  }
  const double n = static_cast<double>(labels.size());
  r.rmse_px = std::sqrt(sq / n);
  r.rmse_mm = r.rmse_px / px_per_mm;
  r.mean_distance_mm = lin / n / px_per_mm;
  return r;
}

Tensor make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t per = data.sample_size();
  std::vector<double> values;
  values.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    auto s = data.sample(i);
    values.insert(values.end(), s.begin(), s.end());
  }
  return Tensor({indices.size(), 1, data.channels, data.timesteps}, std::move(values));
}

Tensor label_batch(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<double> values;
  values.reserve(indices.size() * 2);
  for (std::size_t i : indices) {
    values.push_back(data.labels[i].x_px);
    values.push_back(data.labels[i].y_px);
  }
  return Tensor({indices.size(), 2}, std::move(values));
}

std::vector<std::vector<double>> predict_outputs(const Model& model, const Dataset& data,
                                                 std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor y = forward(model, make_batch(data, idx), false);
    const std::size_t k = y.dim(1);
    auto v = y.data();
    for (std::size_t b = 0; b < idx.size(); ++b) out.emplace_back(v.begin() + b * k, v.begin() + (b + 1) * k);
  }
  return out;
}

std::vector<Point2> predict_positions(const Model& model, const Dataset& data,
                                      std::span<const Point2> centroids, std::size_t batch_size) {
  const auto outputs = predict_outputs(model, data, batch_size);
  std::vector<Point2> pos;
  pos.reserve(outputs.size());
  const bool classify = model.config.head_mode == HeadMode::kClassification;
  if (classify && centroids.size() != model.config.num_classes) {
    throw ConfigError("classification positions need one centroid per class");
  }
  for (const auto& o : outputs) {
    if (!classify) {
      pos.push_back({o[0], o[1]});
    } else {
      const auto best = static_cast<std::size_t>(std::max_element(o.begin(), o.end()) - o.begin());
      pos.push_back(centroids[best]);
    }
  }
  return pos;
}

RmseResult evaluate_rmse(const Model& model, const Dataset& data, double px_per_mm,
                         std::span<const Point2> centroids, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("evaluate_rmse: empty dataset");
  const auto preds = predict_positions(model, data, centroids, batch_size);
  return rmse_from_predictions(preds, label_points(data), px_per_mm);
}

std::vector<Point2> class_centroids(const Dataset& data, std::size_t k) {
  std::vector<Point2> sums(k);
  std::vector<std::size_t> counts(k, 0);
  Point2 all{};
  for (const GazeLabel& l : data.labels) {
    all.x += l.x_px;
    all.y += l.y_px;
    if (!l.cluster_id || *l.cluster_id >= k) continue;
    sums[*l.cluster_id].x += l.x_px;
    sums[*l.cluster_id].y += l.y_px;
    ++counts[*l.cluster_id];
  }
  if (!data.labels.empty()) {
    all.x /= static_cast<double>(data.size());
    all.y /= static_cast<double>(data.size());
  }
  for (std::size_t j = 0; j < k; ++j) {
    sums[j] = counts[j] ? Point2{sums[j].x / static_cast<double>(counts[j]),
                                 sums[j].y / static_cast<double>(counts[j])}
                        : all;
  }
  return sums;
}

// ---------------------------------------------------------------------------
// Training

int select_best_epoch(std::span<const double> scores) {
  int best = 1;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < best_score) {
      best_score = scores[i];
      best = static_cast<int>(i) + 1;
    }
  }
  return best;
}

TrainRun train_loop(Model& model, const Splits& splits, const TrainConfig& cfg,
                    const ValidationFn& validation) {
  cfg.validate();
  const bool classify = model.config.head_mode == HeadMode::kClassification;
  if (classify != (cfg.loss == LossKind::kCrossEntropy)) {
    throw ConfigError("train: loss does not match the model head");
  }
  const Dataset& train = splits.train;
  if (train.size() == 0) throw DataError("train: empty training split");
  if (!validation && splits.val.size() == 0) throw DataError("train: empty validation split");
  std::vector<std::size_t> train_targets;
  std::vector<Point2> centroids;
  if (classify) {
    for (const GazeLabel& l : train.labels) {
      if (!l.cluster_id || *l.cluster_id >= model.config.num_classes) {
        throw DataError("train: classification needs cluster ids in [0, k)");
      }
      train_targets.push_back(*l.cluster_id);
    }
    centroids = class_centroids(train, model.config.num_classes);
  }

  const AdamOptions adam{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  AdamState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainRun run;
  double best_score = std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      Tensor pred = forward(model, make_batch(train, idx), true, cfg.seed * 1000003u + step);
      Tensor loss;
      if (classify) {
        std::vector<std::size_t> t;
        for (std::size_t i : idx) t.push_back(train_targets[i]);
        loss = cross_entropy(pred, t);
      } else {
        loss = mse_loss(pred, label_batch(train, idx));
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      model.zero_grad();
      loss.backward();
      adam_step(model, state, adam);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_rmse_mm = validation ? validation(model, epoch)
                                 : evaluate_rmse(model, splits.val, cfg.px_per_mm, centroids,
                                                 cfg.eval_batch_size)
                                       .rmse_mm;
    run.epochs.push_back(rec);
    if (rec.val_rmse_mm < best_score || run.best_epoch == 0) {
      if (rec.val_rmse_mm < best_score) best_score = rec.val_rmse_mm;
      run.best_epoch = epoch;
      run.best_state = snapshot(model);
    }
  }
  model.zero_grad();
  restore(model, run.best_state);
  if (splits.test.size() > 0) {
    const RmseResult r = evaluate_rmse(model, splits.test, cfg.px_per_mm, centroids, cfg.eval_batch_size);
    run.test_rmse_mm = r.rmse_mm;
    run.test_mean_distance_mm = r.mean_distance_mm;
    run.test_distances_px = r.distances_px;
  }
  return run;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

TrialSummary multi_trial(const ModelConfig& model_config, const Splits& splits,
                         const TrainConfig& cfg, std::uint64_t base_seed, unsigned threads) {
  cfg.validate();
  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DCVIT_THREADS")) {
      const long cap = std::strtol(env, nullptr, 10);
      if (cap > 0) threads = std::min(threads, static_cast<unsigned>(cap));
    }
  }
  const auto n = static_cast<std::size_t>(cfg.trials);
  TrialSummary summary;
  summary.runs.resize(n);
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        const std::uint64_t seed = cfg.same_seed_trials ? base_seed : base_seed + i;
        TrainConfig trial_cfg = cfg;
        trial_cfg.seed = seed;
        Model model = build_model(model_config, seed);
        summary.runs[i] = train_loop(model, splits, trial_cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const TrainRun& r : summary.runs) summary.test_rmse_mm.push_back(r.test_rmse_mm);
  std::tie(summary.mean, summary.stddev) = mean_std(summary.test_rmse_mm);
  return summary;
}

std::string metrics_csv(const TrainRun& run) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_rmse_mm\n";
  for (const EpochRecord& e : run.epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_rmse_mm << '\n';
  }
  os << "# best_epoch=" << run.best_epoch << ",test_rmse_mm=" << run.test_rmse_mm
     << ",test_mean_distance_mm=" << run.test_mean_distance_mm << '\n';
  return os.str();
}

}  // namespace dcvit

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dcvit/error.hpp"
#include "dcvit/ops.hpp"
#include "dcvit/preprocess.hpp"
#include "dcvit/train.hpp"
#include "oracles.hpp"

using namespace dcvit;

namespace {

ModelConfig small_model() {
  ModelConfig c = tiny_config();
  c.channels = 16;
  c.timesteps = 76;
  return c;
}

Splits small_splits(std::size_t n = 120, std::uint64_t seed = 1) {
  SynthConfig s;
  s.channels = 16;
  s.timesteps = 76;
  s.n_samples = n;
  s.n_participants = 9;
  s.seed = seed;
  auto parts = split_dataset(generate_synthetic(s), {0.6, 0.2, 0.2}, seed);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

TrainConfig quick_train() {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 16;
  t.learning_rate = 1e-3;
  t.trials = 2;
  return t;
}

}  // namespace

TEST(Loss, MseValueAndGradient) {
  const Tensor p({2, 2}, {1, 2, 3, 4});
  const Tensor y({2, 2}, {0, 2, 5, 4});
  EXPECT_DOUBLE_EQ(mse_loss(p, y).item(), (1.0 + 0 + 4 + 0) / 4.0);
  EXPECT_THROW(mse_loss(p, Tensor::zeros({2, 3})), ShapeError);
  for (const Shape& s : std::vector<Shape>{{1, 2}, {3, 2}, {4, 2}, {2, 2}, {8, 2}}) {
    const double err = oracle::gradient_error(
        [](const std::vector<Tensor>& t) { return mse_loss(t[0], t[1]); },
        {oracle::random_tensor(s, 1), oracle::random_tensor(s, 2)});
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Adam, MatchesHandComputedSteps) {
  Tensor w({2}, {1.0, -2.0}, true);
  std::vector<Tensor> params{w};
  AdamState state;
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.01;
  const std::vector<std::vector<double>> grads{{0.5, -1.0}, {0.2, 0.3}};
  std::vector<double> ref{1.0, -2.0}, m(2, 0), v(2, 0);
  for (std::size_t step = 0; step < grads.size(); ++step) {
    w.zero_grad();
    sum(mul(w, Tensor({2}, grads[step]))).backward();
    adam_step(params, state, o);
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[step][i];
      v[i] = 0.999 * v[i] + 0.001 * grads[step][i] * grads[step][i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] = ref[i] - 0.1 * mh / (std::sqrt(vh) + 1e-8) - 0.1 * 0.01 * ref[i];
      EXPECT_NEAR(w.data()[i], ref[i], 1e-14);
    }
  }
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, MissingGradientIsZero) {
  Tensor w({3}, {1, 2, 3}, true);
  std::vector<Tensor> params{w};
  AdamState state;
  adam_step(params, state, AdamOptions{});
  EXPECT_EQ(w.data()[2], 3.0);
}

TEST(Adam, MinimizesAQuadratic) {
  Tensor w({3}, {4, -3, 2}, true);
  std::vector<Tensor> params{w};
  AdamState state;
  AdamOptions o;
  o.lr = 0.05;
  for (int i = 0; i < 500; ++i) {
    w.zero_grad();
    sum(mul(w, w)).backward();
    adam_step(params, state, o);
  }
  for (double v : w.data()) EXPECT_LT(std::abs(v), 0.05);
}

TEST(Metrics, RmseHandCase) {
  const std::vector<Point2> pred{{0, 0}, {3, 4}};
  const std::vector<Point2> lab{{0, 0}, {0, 0}};
  const RmseResult r = rmse_from_predictions(pred, lab, 2.0);
  EXPECT_DOUBLE_EQ(r.rmse_px, std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(r.rmse_mm, std::sqrt(12.5) / 2.0);
  EXPECT_DOUBLE_EQ(r.mean_distance_mm, 1.25);
  EXPECT_EQ(r.distances_px, (std::vector<double>{0, 5}));
  EXPECT_THROW(rmse_from_predictions({}, {}, 2.0), DataError);
  EXPECT_THROW(rmse_from_predictions(pred, lab, 0.0), ConfigError);
}

TEST(Metrics, EvaluateRmseMatchesRecomputation) {
  const Splits s = small_splits();
  const Model m = build_model(small_model(), 4);
  const RmseResult r = evaluate_rmse(m, s.test, 2.0, {}, 7);
  double sq = 0;
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    const std::vector<std::size_t> one{i};
    NoGradGuard g;
    const Tensor y = forward(m, make_batch(s.test, one), false);
    const double dx = y.data()[0] - s.test.labels[i].x_px;
    const double dy = y.data()[1] - s.test.labels[i].y_px;
    sq += dx * dx + dy * dy;
  }
  const double want = std::sqrt(sq / static_cast<double>(s.test.size())) / 2.0;
  EXPECT_NEAR(r.rmse_mm, want, 1e-9 * want);
  EXPECT_THROW(evaluate_rmse(m, Dataset{}, 2.0), DataError);
}

TEST(Batches, Layout) {
  const Splits s = small_splits();
  const std::vector<std::size_t> idx{3, 0};
  const Tensor x = make_batch(s.train, idx);
  EXPECT_EQ(x.shape(), (Shape{2, 1, 16, 76}));
  EXPECT_EQ(x.at({0, 0, 2, 5}), static_cast<double>(s.train.sample(3)[2 * 76 + 5]));
  const Tensor y = label_batch(s.train, idx);
  EXPECT_EQ(y.at({1, 1}), static_cast<double>(s.train.labels[0].y_px));
}

TEST(Batches, ClassCentroidsAndArgmaxPositions) {
  Dataset d;
  d.channels = 16;
  d.timesteps = 76;
  for (int i = 0; i < 4; ++i) {
    GazeLabel l;
    l.x_px = static_cast<float>(i * 10);
    l.y_px = 1;
    l.cluster_id = static_cast<std::uint32_t>(i % 2);
    d.labels.push_back(l);
  }
  d.eeg.assign(4 * 16 * 76, 0.5f);
  const auto c = class_centroids(d, 3);
  EXPECT_EQ(c[0], (Point2{10, 1}));
  EXPECT_EQ(c[1], (Point2{20, 1}));
  EXPECT_EQ(c[2], (Point2{15, 1}));  // empty class falls back to the overall mean

  ModelConfig mc = small_model();
  mc.head_mode = HeadMode::kClassification;
  mc.num_classes = 3;
  const Model m = build_model(mc, 1);
  const auto out = predict_outputs(m, d);
  const auto pos = predict_positions(m, d, c);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto best = std::max_element(out[i].begin(), out[i].end()) - out[i].begin();
    EXPECT_EQ(pos[i], c[best]);
  }
  EXPECT_THROW(predict_positions(m, d, std::span<const Point2>(c).first(2)), ConfigError);
}

TEST(EarlyStopping, FirstArgminOverRandomCurves) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<double> curve(n);
    for (double& v : curve) v = static_cast<double>(rng() % 6);  // frequent ties
    if (trial % 5 == 0) curve[rng() % n] = std::numeric_limits<double>::quiet_NaN();
    int want = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(curve[i]) && (want == 0 || curve[i] < best)) {
        best = curve[i];
        want = static_cast<int>(i) + 1;
      }
    if (want == 0) want = 1;
    EXPECT_EQ(select_best_epoch(curve), want);
  }
}

TEST(TrainLoop, RestoresTheBestValidationEpoch) {
  const Splits s = small_splits();
  TrainConfig t = quick_train();
  t.epochs = 5;
  const std::vector<double> curve{5, 3, 4, 3, 6};
  std::vector<ModelState> states;
  Model m = build_model(small_model(), 2);
  const TrainRun run = train_loop(m, s, t, [&](const Model& model, int epoch) {
    states.push_back(snapshot(model));
    return curve[epoch - 1];
  });
  EXPECT_EQ(run.best_epoch, 2);
  ASSERT_EQ(run.epochs.size(), 5u);
  EXPECT_EQ(snapshot(m).parameters, states[1].parameters);
  EXPECT_EQ(snapshot(m).buffers, states[1].buffers);
  EXPECT_NE(states[1].parameters, states[4].parameters);
  const RmseResult r = evaluate_rmse(m, s.test, t.px_per_mm);
  EXPECT_DOUBLE_EQ(run.test_rmse_mm, r.rmse_mm);
}

TEST(TrainLoop, LossDecreasesOnLearnableData) {
  const Splits s = small_splits(200);
  TrainConfig t = quick_train();
  t.epochs = 6;
  ModelConfig mc = small_model();
  mc.dropout_p = 0.0;
  Model m = build_model(mc, 2);
  const TrainRun run = train_loop(m, s, t);
  EXPECT_LT(run.epochs.back().train_loss, run.epochs.front().train_loss);
  EXPECT_GE(run.best_epoch, 1);
  EXPECT_GT(run.test_rmse_mm, 0.0);
  EXPECT_EQ(run.test_distances_px.size(), s.test.size());
}

TEST(TrainLoop, RejectsInconsistentSetups) {
  Splits s = small_splits();
  Model m = build_model(small_model(), 2);
  TrainConfig t = quick_train();
  t.loss = LossKind::kCrossEntropy;
  EXPECT_THROW(train_loop(m, s, t), ConfigError);
  ModelConfig cls = small_model();
  cls.head_mode = HeadMode::kClassification;
  Model mc = build_model(cls, 2);
  EXPECT_THROW(train_loop(mc, s, t), DataError);
  t.loss = LossKind::kMse;
  t.epochs = 0;
  EXPECT_THROW(train_loop(m, s, t), ConfigError);
  t.epochs = 1;
  Splits empty = s;
  empty.train = Dataset{16, 76, {}, {}};
  EXPECT_THROW(train_loop(m, empty, t), DataError);
  s.train.eeg[10] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_loop(m, s, t), NumericError);
}

TEST(TrainLoop, ClassificationHeadTrains) {
  Splits s = small_splits(150);
  const CentroidSet targets = CentroidSet::from_points(grid_targets(SynthConfig{}));
  s.train = relabel(s.train, targets);
  s.val = relabel(s.val, targets);
  s.test = relabel(s.test, targets);
  ModelConfig mc = small_model();
  mc.head_mode = HeadMode::kClassification;
  Model m = build_model(mc, 2);
  TrainConfig t = quick_train();
  t.loss = LossKind::kCrossEntropy;
  const TrainRun run = train_loop(m, s, t);
  EXPECT_EQ(run.epochs.size(), 3u);
  EXPECT_TRUE(std::isfinite(run.test_rmse_mm));
}

TEST(Trials, MeanStdIsPopulation) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto [m, sd] = mean_std(v);
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_DOUBLE_EQ(sd, std::sqrt(1.25));
}

TEST(Trials, DeterministicAcrossThreadCounts) {
  const Splits s = small_splits();
  const TrainConfig t = quick_train();
  const TrialSummary one = multi_trial(small_model(), s, t, 10, 1);
  const TrialSummary two = multi_trial(small_model(), s, t, 10, 2);
  EXPECT_EQ(one.test_rmse_mm, two.test_rmse_mm);
  EXPECT_NE(one.test_rmse_mm[0], one.test_rmse_mm[1]);
  TrainConfig same = t;
  same.same_seed_trials = true;
  const TrialSummary rep = multi_trial(small_model(), s, same, 10, 1);
  EXPECT_EQ(rep.test_rmse_mm[0], rep.test_rmse_mm[1]);
  EXPECT_EQ(rep.test_rmse_mm[0], one.test_rmse_mm[0]);
}

TEST(Trials, MetricsCsv) {
  TrainRun run;
  run.epochs = {{1, 2.5, 10.0}, {2, 1.5, 9.0}};
  run.best_epoch = 2;
  run.test_rmse_mm = 8.0;
  const std::string csv = metrics_csv(run);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_rmse_mm");
  EXPECT_NE(csv.find("2,1.5,9\n"), std::string::npos);
  EXPECT_NE(csv.find("best_epoch=2"), std::string::npos);
}

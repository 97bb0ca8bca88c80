#include <doctest.h>

#include <filesystem>
#include <random>

#include "ciac/errors.hpp"
#include "ciac/gesture_model.hpp"
#include "reference_transformer.hpp"

using namespace ciac;

namespace {

ModelShape mini_shape() {
  ModelShape s;
  s.window_steps = 8;
  s.features = 5;
  s.d_model = 8;
  s.heads = 2;
  s.ffn = 12;
  s.blocks = 2;
  s.dense = 6;
  return s;
}

Eigen::MatrixXd random_window(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return w;
}

// Perturb LayerNorm and bias tensors too so every gradient path is exercised.
ModelParams<double> randomized(const ModelShape& s, std::uint64_t seed) {
  auto p = ModelParams<double>::init(s, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.1);
  p.visit([&](const std::string&, MatrixX<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
  });
  return p;
}

std::vector<LabeledWindow> separable(int per_class, std::mt19937_64& rng, int steps = 8, int feats = 5) {
  std::vector<LabeledWindow> out;
  for (int i = 0; i < 2 * per_class; ++i) {
    LabeledWindow w;
    w.window = random_window(steps, feats, rng) * 0.3;
    w.label = i % 2 ? GestureClass::Push : GestureClass::Pull;
    w.window.col(0).array() += i % 2 ? 1.0 : -1.0;
    out.push_back(std::move(w));
  }
  return out;
}

TrainConfig mini_config() {
  TrainConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.ffn = 12;
  c.dense = 6;
  c.batch_size = 8;
  c.epochs = 30;
  c.learning_rate = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("forward pass matches the loop reference") {
  std::mt19937_64 rng(1);
  const auto s = mini_shape();
  const auto p = randomized(s, 3);
  for (int i = 0; i < 10; ++i) {
    const auto w = random_window(s.window_steps, s.features, rng);
    const auto got = forward_logits(p, w);
    const auto want = test::reference_logits(p, w);
    for (int k = 0; k < s.classes; ++k) CHECK(got[k] == doctest::Approx(want[static_cast<std::size_t>(k)]).epsilon(1e-10));
  }
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(2);
  const auto s = mini_shape();
  auto p = randomized(s, 5);
  std::vector<Eigen::MatrixXd> windows;
  for (int i = 0; i < 3; ++i) windows.push_back(random_window(s.window_steps, s.features, rng));
  std::vector<TrainingExample<double>> batch = {
      {&windows[0], GestureClass::Push}, {&windows[1], GestureClass::Other}, {&windows[2], GestureClass::Handoff}};

  const auto analytic = loss_and_gradients<double>(p, batch);
  std::vector<const MatrixX<double>*> grads;
  analytic.gradients.visit([&](const std::string&, const MatrixX<double>& m) { grads.push_back(&m); });

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t k = 0, checked = 0;
  p.visit([&](const std::string&, MatrixX<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + h;
      const double up = loss_and_gradients<double>(p, batch).loss;
      m.data()[i] = orig - h;
      const double down = loss_and_gradients<double>(p, batch).loss;
      m.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[k]->data()[i];
      const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
      ++checked;
    }
    ++k;
  });
  CHECK(checked == p.parameter_count());
  CHECK(worst <= 1e-4);
}

TEST_CASE("softmax is normalized") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    Logits<double> l(5);
    for (int k = 0; k < 5; ++k) l[k] = n(rng);
    const auto p = softmax(l);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-6);
    CHECK(p.minCoeff() >= 0.0);
  }
  Logits<float> big(5);
  big << 1e4f, -1e4f, 0, 88, 89;
  CHECK(softmax(big).allFinite());
}

TEST_CASE("zero head weights give the uniform distribution and loss ln 5") {
  std::mt19937_64 rng(4);
  const auto s = mini_shape();
  auto p = randomized(s, 6);
  p.head_w.setZero();
  p.head_b.setZero();
  const auto w = random_window(s.window_steps, s.features, rng);
  const auto probs = forward(p, w);
  for (int k = 0; k < 5; ++k) CHECK(probs[k] == doctest::Approx(0.2));
  std::vector<TrainingExample<double>> batch = {{&w, GestureClass::Pull}};
  CHECK(loss_and_gradients<double>(p, batch).loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("batch loss and gradients are order invariant") {
  std::mt19937_64 rng(5);
  const auto s = mini_shape();
  const auto p = randomized(s, 7);
  std::vector<Eigen::MatrixXd> w;
  for (int i = 0; i < 4; ++i) w.push_back(random_window(s.window_steps, s.features, rng));
  std::vector<TrainingExample<double>> a = {
      {&w[0], GestureClass::Push}, {&w[1], GestureClass::Pull}, {&w[2], GestureClass::Other}, {&w[3], GestureClass::Push}};
  std::vector<TrainingExample<double>> b = {a[2], a[0], a[3], a[1]};
  const auto ga = loss_and_gradients<double>(p, a);
  const auto gb = loss_and_gradients<double>(p, b);
  CHECK(ga.loss == doctest::Approx(gb.loss).epsilon(1e-12));
  std::vector<const MatrixX<double>*> ma;
  ga.gradients.visit([&](const std::string&, const MatrixX<double>& m) { ma.push_back(&m); });
  std::size_t k = 0;
  gb.gradients.visit([&](const std::string&, const MatrixX<double>& m) {
    CHECK((m - *ma[k++]).norm() <= 1e-12 * (1.0 + m.norm()));
  });
}

TEST_CASE("shape validation") {
  ModelShape s = mini_shape();
  s.heads = 3;
  CHECK_THROWS_AS(ModelParams<double>::init(s, 1), ConfigError);
  const auto p = ModelParams<double>::init(mini_shape(), 1);
  CHECK_THROWS_AS(forward_logits(p, Eigen::MatrixXd::Zero(7, 5).eval()), ConfigError);
}

TEST_CASE("training separates a two-class toy problem") {
  std::mt19937_64 rng(6);
  const auto data = separable(40, rng);
  const auto result = train(mini_config(), data);
  CHECK(result.log.size() == 30);
  const auto cm = evaluate_windows(data, result.model.as_model());
  CHECK(cm.accuracy() >= 0.99);
  CHECK(result.log.back().mean_loss < result.log.front().mean_loss);
}

TEST_CASE("training is deterministic and zero epochs returns the initialization") {
  std::mt19937_64 rng(7);
  const auto data = separable(10, rng);
  auto cfg = mini_config();
  cfg.epochs = 3;
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  CHECK(a.model.to_json() == b.model.to_json());

  cfg.epochs = 0;
  const auto z = train(cfg, data);
  const auto init = ModelParams<float>::init(cfg.shape(8, 5), cfg.seed);
  std::vector<const MatrixX<float>*> mi;
  init.visit([&](const std::string&, const MatrixX<float>& m) { mi.push_back(&m); });
  std::size_t k = 0;
  z.model.params.visit([&](const std::string&, const MatrixX<float>& m) { CHECK(m == *mi[k++]); });
}

TEST_CASE("training rejects degenerate datasets") {
  CHECK_THROWS_AS(train(mini_config(), {}), ConfigError);
  std::mt19937_64 rng(8);
  auto data = separable(5, rng);
  for (auto& w : data) w.label = GestureClass::Push;
  CHECK_THROWS_AS(train(mini_config(), data), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(9);
  auto cfg = mini_config();
  cfg.epochs = 2;
  const auto data = separable(8, rng);
  const auto model = train(cfg, data).model;
  const auto path = std::filesystem::temp_directory_path() / "ciac_checkpoint_test.json";
  model.save(path);
  const auto back = GestureClassifier::load(path);
  std::filesystem::remove(path);
  CHECK(back.to_json() == model.to_json());
  for (const auto& w : data) CHECK(back.predict(w.window) == model.predict(w.window));

  CHECK_THROWS_AS(GestureClassifier::from_json("{"), ParseError);
  auto j = model.to_json();
  j.replace(j.find("ciac-gesture-model"), 4, "xxxx");
  CHECK_THROWS_AS(GestureClassifier::from_json(j), ConfigError);
}

TEST_CASE("k-fold with stub classifiers") {
  std::mt19937_64 rng(10);
  std::vector<LabeledRecording> recs;
  for (int r = 0; r < 6; ++r) {
    LabeledRecording rec;
    rec.recording_id = r;
    for (int t = 0; t < 120; ++t) {
      RecordingRow row;
      const GestureClass g = static_cast<GestureClass>((t / 30 + r) % 5);
      row.values[12] = code(g);  // PSM1 vel_x carries the label
      rec.rows.push_back(row);
      rec.labels.push_back(g);
    }
    recs.push_back(rec);
  }
  const ClassifierFactory perfect = [](const std::vector<LabeledWindow>&) -> ProbabilityModel {
    return [](const Eigen::MatrixXd& w) {
      Probabilities p = Probabilities::Zero();
      p[static_cast<int>(w(w.rows() - 1, 0))] = 1.0;
      return p;
    };
  };
  const auto rep = kfold_evaluate(recs, 3, 5, perfect);
  CHECK(rep.accuracy() == 1.0);
  CHECK(rep.folds.size() == 3);
  CHECK(rep.fold_recordings[1] == std::vector<int>{2, 3});
  CHECK(rep.aggregate.counts.diagonal().sum() == rep.aggregate.total());

  const ClassifierFactory constant = [](const std::vector<LabeledWindow>&) -> ProbabilityModel {
    return [](const Eigen::MatrixXd&) {
      Probabilities p = Probabilities::Zero();
      p[2] = 1.0;
      return p;
    };
  };
  const auto crep = kfold_evaluate(recs, 3, 5, constant);
  CHECK(crep.aggregate.counts.col(2).sum() == crep.aggregate.total());
  CHECK_THROWS_AS(kfold_evaluate(recs, 1, 5, perfect), ConfigError);
  CHECK_THROWS_AS(kfold_evaluate(recs, 7, 5, perfect), ConfigError);
}

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ciac/gesture_stream.hpp"
#include "ciac/surgeme.hpp"

namespace ciac {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Window of time steps (rows) by features (columns).
template <typename Scalar>
using FeatureWindow = MatrixX<Scalar>;

struct ModelShape {
  int window_steps = static_cast<int>(kWindowSteps);
  int features = static_cast<int>(kStreamFeatures);
  int d_model = 64;
  int heads = 4;
  int ffn = 128;
  int blocks = 2;
  int dense = 64;
  int classes = kGestureClassCount;

  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

template <typename Scalar>
struct EncoderBlock {
  MatrixX<Scalar> ln1_gamma, ln1_beta;
  MatrixX<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  MatrixX<Scalar> ln2_gamma, ln2_beta;
  MatrixX<Scalar> w1, b1, w2, b2;
};

// Encoder-only Transformer: token projection, fixed sinusoidal positions,
// pre-norm encoder blocks, mean pooling, two ReLU dense layers, softmax head.
template <typename Scalar>
struct ModelParams {
  ModelShape shape;
  MatrixX<Scalar> embed_w, embed_b;
  MatrixX<Scalar> positional;  // fixed, not trained
  std::vector<EncoderBlock<Scalar>> blocks;
  MatrixX<Scalar> dense1_w, dense1_b, dense2_w, dense2_b, head_w, head_b;

  static ModelParams init(const ModelShape& shape, std::uint64_t seed);
  static ModelParams zeros(const ModelShape& shape);

  // Calls f(name, matrix) for every trainable tensor in a fixed order.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename Other>
  ModelParams<Other> cast() const;
};

template <typename Scalar>
using Logits = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Logits<Scalar> forward_logits(const ModelParams<Scalar>& params, const FeatureWindow<Scalar>& window);

// Class probabilities; sums to one.
template <typename Scalar>
Logits<Scalar> forward(const ModelParams<Scalar>& params, const FeatureWindow<Scalar>& window);

template <typename Scalar>
struct TrainingExample {
  const FeatureWindow<Scalar>* window = nullptr;
  GestureClass label = GestureClass::Other;
};

template <typename Scalar>
struct LossAndGradients {
  Scalar loss = Scalar(0);  // mean cross-entropy over the batch
  ModelParams<Scalar> gradients;
};

// Deterministic (no dropout). Throws NumericError on a non-finite loss.
template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const ModelParams<Scalar>& params,
                                            std::span<const TrainingExample<Scalar>> batch);

template <typename Scalar>
Logits<Scalar> softmax(const Logits<Scalar>& logits);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 7;
  double dropout = 0.1;
  int d_model = 64;
  int heads = 4;
  int ffn = 128;
  int dense = 64;

  void validate() const;
  ModelShape shape(int window_steps = static_cast<int>(kWindowSteps),
                   int features = static_cast<int>(kStreamFeatures)) const;
};

// Per-feature standardization fitted on training windows only.
struct FeatureScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_std;

  static FeatureScaler fit(std::span<const LabeledWindow> windows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& window) const;
};

struct GestureClassifier {
  TrainConfig config;
  ModelParams<float> params;
  FeatureScaler scaler;

  Probabilities predict(const Eigen::MatrixXd& window) const;
  ProbabilityModel as_model() const;

  void save(const std::filesystem::path& path) const;
  static GestureClassifier load(const std::filesystem::path& path);
  std::string to_json() const;
  static GestureClassifier from_json(const std::string& text);
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  GestureClassifier model;
  std::vector<EpochMetrics> log;
};

// Adam with minibatches and dropout on the dense layers. Reproducible for a fixed seed.
TrainResult train(const TrainConfig& config, std::span<const LabeledWindow> dataset);

struct ConfusionMatrix {
  Eigen::Matrix<long, kGestureClassCount, kGestureClassCount> counts =
      Eigen::Matrix<long, kGestureClassCount, kGestureClassCount>::Zero();  // rows truth, cols predicted

  void add(GestureClass truth, GestureClass predicted) { counts(code(truth), code(predicted)) += 1; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    counts += o.counts;
    return *this;
  }
  long total() const { return counts.sum(); }
  double accuracy() const;
};

using ClassifierFactory = std::function<ProbabilityModel(const std::vector<LabeledWindow>& train)>;

ClassifierFactory transformer_factory(const TrainConfig& config);

struct KFoldReport {
  std::vector<ConfusionMatrix> folds;
  std::vector<std::vector<int>> fold_recordings;
  ConfusionMatrix aggregate;
  double accuracy() const { return aggregate.accuracy(); }
};

// Recording-level k-fold: recordings are split into k contiguous groups; each
// group is held out once and windows never mix recordings across the split.
KFoldReport kfold_evaluate(const std::vector<LabeledRecording>& recordings, std::size_t k, std::size_t stride,
                           const ClassifierFactory& factory);

ConfusionMatrix evaluate_windows(std::span<const LabeledWindow> windows, const ProbabilityModel& model);

GestureClass argmax_class(const Probabilities& p);

}  // namespace ciac

#include "ciac/gesture_model_visit.hpp"

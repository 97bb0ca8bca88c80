#include "ciac/gesture_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ciac/errors.hpp"

namespace ciac {

void ModelShape::validate() const {
  if (window_steps <= 0 || features <= 0 || d_model <= 0 || heads <= 0 || ffn <= 0 || blocks < 0 || dense <= 0 ||
      classes <= 1)
    throw ConfigError("ModelShape: dimensions must be positive");
  if (d_model % heads != 0) throw ConfigError("ModelShape: head count must divide d_model");
}

namespace {

template <typename Scalar>
MatrixX<Scalar> glorot(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixX<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
MatrixX<Scalar> sinusoidal(int steps, int d_model) {
  MatrixX<Scalar> pe(steps, d_model);
  for (int t = 0; t < steps; ++t)
    for (int i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / d_model);
      pe(t, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate));
    }
  return pe;
}

template <typename Scalar>
ModelParams<Scalar> shaped(const ModelShape& s, bool random, std::uint64_t seed) {
  s.validate();
  std::mt19937_64 rng(seed);
  auto weight = [&](int r, int c) -> MatrixX<Scalar> {
    return random ? glorot<Scalar>(r, c, rng) : MatrixX<Scalar>::Zero(r, c);
  };
  auto zeros = [](int r, int c) -> MatrixX<Scalar> { return MatrixX<Scalar>::Zero(r, c); };
  auto ones = [&](int c) -> MatrixX<Scalar> {
    return random ? MatrixX<Scalar>::Ones(1, c) : MatrixX<Scalar>::Zero(1, c);
  };

  ModelParams<Scalar> p;
  p.shape = s;
  p.embed_w = weight(s.features, s.d_model);
  p.embed_b = zeros(1, s.d_model);
  p.positional = sinusoidal<Scalar>(s.window_steps, s.d_model);
  for (int b = 0; b < s.blocks; ++b) {
    EncoderBlock<Scalar> blk;
    blk.ln1_gamma = ones(s.d_model);
    blk.ln1_beta = zeros(1, s.d_model);
    blk.wq = weight(s.d_model, s.d_model);
    blk.bq = zeros(1, s.d_model);
    blk.wk = weight(s.d_model, s.d_model);
    blk.bk = zeros(1, s.d_model);
    blk.wv = weight(s.d_model, s.d_model);
    blk.bv = zeros(1, s.d_model);
    blk.wo = weight(s.d_model, s.d_model);
    blk.bo = zeros(1, s.d_model);
    blk.ln2_gamma = ones(s.d_model);
    blk.ln2_beta = zeros(1, s.d_model);
    blk.w1 = weight(s.d_model, s.ffn);
    blk.b1 = zeros(1, s.ffn);
    blk.w2 = weight(s.ffn, s.d_model);
    blk.b2 = zeros(1, s.d_model);
    p.blocks.push_back(std::move(blk));
  }
  p.dense1_w = weight(s.d_model, s.dense);
  p.dense1_b = zeros(1, s.dense);
  p.dense2_w = weight(s.dense, s.dense);
  p.dense2_b = zeros(1, s.dense);
  p.head_w = weight(s.dense, s.classes);
  p.head_b = zeros(1, s.classes);
  return p;
}

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct LayerNormCache {
  MatrixX<Scalar> xhat;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd;
};

template <typename Scalar>
MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& x, const MatrixX<Scalar>& gamma, const MatrixX<Scalar>& beta,
                           LayerNormCache<Scalar>& cache) {
  const Eigen::Index d = x.cols();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  cache.xhat = x.colwise() - mean;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var = cache.xhat.rowwise().squaredNorm() / Scalar(d);
  cache.rstd = (var.array() + Scalar(kLayerNormEps)).rsqrt();
  cache.xhat = cache.rstd.asDiagonal() * cache.xhat;
  MatrixX<Scalar> y = cache.xhat * gamma.row(0).asDiagonal();
  y.rowwise() += beta.row(0);
  return y;
}

template <typename Scalar>
MatrixX<Scalar> layer_norm_backward(const MatrixX<Scalar>& dy, const MatrixX<Scalar>& gamma,
                                    const LayerNormCache<Scalar>& cache, MatrixX<Scalar>& dgamma,
                                    MatrixX<Scalar>& dbeta) {
  const Scalar d = Scalar(dy.cols());
  dgamma += (dy.cwiseProduct(cache.xhat)).colwise().sum();
  dbeta += dy.colwise().sum();
  const MatrixX<Scalar> dxhat = dy * gamma.row(0).asDiagonal();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / d;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m2 = dxhat.cwiseProduct(cache.xhat).rowwise().sum() / d;
  MatrixX<Scalar> dx = dxhat.colwise() - m1;
  dx -= m2.asDiagonal() * cache.xhat;
  return cache.rstd.asDiagonal() * dx;
}

template <typename Scalar>
void softmax_rows(MatrixX<Scalar>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Scalar m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
}

template <typename Scalar>
struct BlockCache {
  MatrixX<Scalar> input;
  LayerNormCache<Scalar> ln1, ln2;
  MatrixX<Scalar> a, q, k, v;
  std::vector<MatrixX<Scalar>> attn;  // per head, rows softmaxed
  MatrixX<Scalar> o;
  MatrixX<Scalar> h1, b, u, r;
};

template <typename Scalar>
struct Cache {
  MatrixX<Scalar> x;
  std::vector<BlockCache<Scalar>> blocks;
  MatrixX<Scalar> pooled, z1pre, z1, z2pre, z2;
  MatrixX<Scalar> mask1, mask2;  // dropout scale masks, empty when inactive
};

template <typename Scalar>
MatrixX<Scalar> block_forward(const EncoderBlock<Scalar>& blk, const MatrixX<Scalar>& h, int heads,
                              BlockCache<Scalar>* cache) {
  BlockCache<Scalar> local;
  BlockCache<Scalar>& c = cache ? *cache : local;
  const Eigen::Index d = h.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

  c.input = h;
  c.a = layer_norm(h, blk.ln1_gamma, blk.ln1_beta, c.ln1);
  c.q.noalias() = c.a * blk.wq;
  c.q.rowwise() += blk.bq.row(0);
  c.k.noalias() = c.a * blk.wk;
  c.k.rowwise() += blk.bk.row(0);
  c.v.noalias() = c.a * blk.wv;
  c.v.rowwise() += blk.bv.row(0);
  c.o.resize(h.rows(), d);
  c.attn.resize(static_cast<std::size_t>(heads));
  for (int hd = 0; hd < heads; ++hd) {
    MatrixX<Scalar>& p = c.attn[static_cast<std::size_t>(hd)];
    p.noalias() = c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose();
    p *= scale;
    softmax_rows(p);
    c.o.middleCols(hd * dh, dh).noalias() = p * c.v.middleCols(hd * dh, dh);
  }
  c.h1 = h;
  c.h1.noalias() += c.o * blk.wo;
  c.h1.rowwise() += blk.bo.row(0);
  c.b = layer_norm(c.h1, blk.ln2_gamma, blk.ln2_beta, c.ln2);
  c.u.noalias() = c.b * blk.w1;
  c.u.rowwise() += blk.b1.row(0);
  c.r = c.u.cwiseMax(Scalar(0));
  MatrixX<Scalar> out = c.h1;
  out.noalias() += c.r * blk.w2;
  out.rowwise() += blk.b2.row(0);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> block_backward(const EncoderBlock<Scalar>& blk, const BlockCache<Scalar>& c,
                               const MatrixX<Scalar>& dout, int heads, EncoderBlock<Scalar>& g) {
  const Eigen::Index d = dout.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

  // feed-forward branch
  g.w2.noalias() += c.r.transpose() * dout;
  g.b2 += dout.colwise().sum();
  MatrixX<Scalar> du = dout * blk.w2.transpose();
  du = du.cwiseProduct((c.u.array() > Scalar(0)).template cast<Scalar>().matrix());
  g.w1.noalias() += c.b.transpose() * du;
  g.b1 += du.colwise().sum();
  const MatrixX<Scalar> db = du * blk.w1.transpose();
  MatrixX<Scalar> dh1 = dout + layer_norm_backward(db, blk.ln2_gamma, c.ln2, g.ln2_gamma, g.ln2_beta);

  // attention branch
  g.wo.noalias() += c.o.transpose() * dh1;
  g.bo += dh1.colwise().sum();
  const MatrixX<Scalar> d_o = dh1 * blk.wo.transpose();
  MatrixX<Scalar> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int hd = 0; hd < heads; ++hd) {
    const MatrixX<Scalar>& p = c.attn[static_cast<std::size_t>(hd)];
    const auto doh = d_o.middleCols(hd * dh, dh);
    MatrixX<Scalar> dp = doh * c.v.middleCols(hd * dh, dh).transpose();
    dv.middleCols(hd * dh, dh).noalias() = p.transpose() * doh;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
    MatrixX<Scalar> ds = p.cwiseProduct(dp.colwise() - rowdot) * scale;
    dq.middleCols(hd * dh, dh).noalias() = ds * c.k.middleCols(hd * dh, dh);
    dk.middleCols(hd * dh, dh).noalias() = ds.transpose() * c.q.middleCols(hd * dh, dh);
  }
  g.wq.noalias() += c.a.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += c.a.transpose() * dk;
  g.bk += dk.colwise().sum();
  g.wv.noalias() += c.a.transpose() * dv;
  g.bv += dv.colwise().sum();
  MatrixX<Scalar> da = dq * blk.wq.transpose();
  da.noalias() += dk * blk.wk.transpose();
  da.noalias() += dv * blk.wv.transpose();
  return dh1 + layer_norm_backward(da, blk.ln1_gamma, c.ln1, g.ln1_gamma, g.ln1_beta);
}

template <typename Scalar>
void check_window(const ModelParams<Scalar>& p, const FeatureWindow<Scalar>& w) {
  if (w.rows() != p.shape.window_steps || w.cols() != p.shape.features)
    throw ConfigError("forward: window is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                      ", model expects " + std::to_string(p.shape.window_steps) + "x" +
                      std::to_string(p.shape.features));
}

template <typename Scalar>
Logits<Scalar> run_forward(const ModelParams<Scalar>& p, const FeatureWindow<Scalar>& window, Cache<Scalar>* cache,
                           std::mt19937_64* dropout_rng, double dropout) {
  check_window(p, window);
  MatrixX<Scalar> h = window * p.embed_w;
  h.rowwise() += p.embed_b.row(0);
  h += p.positional;
  if (cache) {
    cache->x = window;
    cache->blocks.resize(p.blocks.size());
  }
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    h = block_forward(p.blocks[i], h, p.shape.heads, cache ? &cache->blocks[i] : nullptr);

  const MatrixX<Scalar> pooled = h.colwise().mean();
  MatrixX<Scalar> z1pre = pooled * p.dense1_w + p.dense1_b;
  MatrixX<Scalar> z1 = z1pre.cwiseMax(Scalar(0));
  MatrixX<Scalar> mask1, mask2;
  auto make_mask = [&](Eigen::Index n) {
    MatrixX<Scalar> m(1, n);
    std::bernoulli_distribution keep(1.0 - dropout);
    const Scalar s = Scalar(1.0 / (1.0 - dropout));
    for (Eigen::Index i = 0; i < n; ++i) m(0, i) = keep(*dropout_rng) ? s : Scalar(0);
    return m;
  };
  const bool drop = dropout_rng != nullptr && dropout > 0.0;
  if (drop) {
    mask1 = make_mask(z1.cols());
    z1 = z1.cwiseProduct(mask1);
  }
  MatrixX<Scalar> z2pre = z1 * p.dense2_w + p.dense2_b;
  MatrixX<Scalar> z2 = z2pre.cwiseMax(Scalar(0));
  if (drop) {
    mask2 = make_mask(z2.cols());
    z2 = z2.cwiseProduct(mask2);
  }
  const MatrixX<Scalar> logits = z2 * p.head_w + p.head_b;
  if (cache) {
    cache->pooled = pooled;
    cache->z1pre = std::move(z1pre);
    cache->z1 = std::move(z1);
    cache->z2pre = std::move(z2pre);
    cache->z2 = std::move(z2);
    cache->mask1 = std::move(mask1);
    cache->mask2 = std::move(mask2);
  }
  return logits.transpose();
}

template <typename Scalar>
void run_backward(const ModelParams<Scalar>& p, const Cache<Scalar>& c, const Logits<Scalar>& dlogits,
                  ModelParams<Scalar>& g) {
  const MatrixX<Scalar> dl = dlogits.transpose();
  g.head_w.noalias() += c.z2.transpose() * dl;
  g.head_b += dl;
  MatrixX<Scalar> dz2 = dl * p.head_w.transpose();
  if (c.mask2.size()) dz2 = dz2.cwiseProduct(c.mask2);
  dz2 = dz2.cwiseProduct((c.z2pre.array() > Scalar(0)).template cast<Scalar>().matrix());
  g.dense2_w.noalias() += c.z1.transpose() * dz2;
  g.dense2_b += dz2;
  MatrixX<Scalar> dz1 = dz2 * p.dense2_w.transpose();
  if (c.mask1.size()) dz1 = dz1.cwiseProduct(c.mask1);
  dz1 = dz1.cwiseProduct((c.z1pre.array() > Scalar(0)).template cast<Scalar>().matrix());
  g.dense1_w.noalias() += c.pooled.transpose() * dz1;
  g.dense1_b += dz1;
  const MatrixX<Scalar> dpooled = dz1 * p.dense1_w.transpose();

  const Eigen::Index steps = c.x.rows();
  MatrixX<Scalar> dh = MatrixX<Scalar>::Ones(steps, 1) * dpooled / Scalar(steps);
  for (std::size_t i = p.blocks.size(); i-- > 0;)
    dh = block_backward(p.blocks[i], c.blocks[i], dh, p.shape.heads, g.blocks[i]);
  g.embed_w.noalias() += c.x.transpose() * dh;
  g.embed_b += dh.colwise().sum();
}

template <typename Scalar>
Scalar accumulate_example(const ModelParams<Scalar>& params, const FeatureWindow<Scalar>& window, GestureClass label,
                          Scalar weight, ModelParams<Scalar>& grads, std::mt19937_64* rng, double dropout,
                          int* predicted = nullptr) {
  Cache<Scalar> cache;
  const Logits<Scalar> logits = run_forward(params, window, &cache, rng, dropout);
  const Logits<Scalar> probs = softmax(logits);
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  const Scalar loss = lse - logits[code(label)];
  if (!std::isfinite(static_cast<double>(loss))) throw NumericError("loss is not finite");
  Logits<Scalar> dlogits = probs;
  dlogits[code(label)] -= Scalar(1);
  dlogits *= weight;
  run_backward(params, cache, dlogits, grads);
  if (predicted) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    *predicted = static_cast<int>(best);
  }
  return loss;
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::init(const ModelShape& shape, std::uint64_t seed) {
  return shaped<Scalar>(shape, true, seed);
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros(const ModelShape& shape) {
  return shaped<Scalar>(shape, false, 0);
}

template <typename Scalar>
std::size_t ModelParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const MatrixX<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename Scalar>
bool ModelParams<Scalar>::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const MatrixX<Scalar>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename Scalar>
Logits<Scalar> softmax(const Logits<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  Logits<Scalar> e = (logits.array() - m).exp();
  return e / e.sum();
}

template <typename Scalar>
Logits<Scalar> forward_logits(const ModelParams<Scalar>& params, const FeatureWindow<Scalar>& window) {
  return run_forward<Scalar>(params, window, nullptr, nullptr, 0.0);
}

template <typename Scalar>
Logits<Scalar> forward(const ModelParams<Scalar>& params, const FeatureWindow<Scalar>& window) {
  return softmax<Scalar>(forward_logits(params, window));
}

template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const ModelParams<Scalar>& params,
                                            std::span<const TrainingExample<Scalar>> batch) {
  if (batch.empty()) throw ConfigError("loss_and_gradients: empty batch");
  LossAndGradients<Scalar> out{Scalar(0), ModelParams<Scalar>::zeros(params.shape)};
  const Scalar w = Scalar(1) / Scalar(batch.size());
  for (const auto& ex : batch) out.loss += accumulate_example(params, *ex.window, ex.label, w, out.gradients, nullptr, 0.0);
  out.loss *= w;
  return out;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template Logits<float> softmax(const Logits<float>&);
template Logits<double> softmax(const Logits<double>&);
template Logits<float> forward_logits(const ModelParams<float>&, const FeatureWindow<float>&);
template Logits<double> forward_logits(const ModelParams<double>&, const FeatureWindow<double>&);
template Logits<float> forward(const ModelParams<float>&, const FeatureWindow<float>&);
template Logits<double> forward(const ModelParams<double>&, const FeatureWindow<double>&);
template LossAndGradients<float> loss_and_gradients(const ModelParams<float>&, std::span<const TrainingExample<float>>);
template LossAndGradients<double> loss_and_gradients(const ModelParams<double>&,
                                                     std::span<const TrainingExample<double>>);

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("TrainConfig: moments must be in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("TrainConfig: epsilon must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("TrainConfig: dropout must be in [0,1)");
  shape().validate();
}

ModelShape TrainConfig::shape(int window_steps, int features) const {
  ModelShape s;
  s.window_steps = window_steps;
  s.features = features;
  s.d_model = d_model;
  s.heads = heads;
  s.ffn = ffn;
  s.dense = dense;
  return s;
}

FeatureScaler FeatureScaler::fit(std::span<const LabeledWindow> windows) {
  if (windows.empty()) throw ConfigError("FeatureScaler: no windows");
  const Eigen::Index f = windows.front().window.cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(f);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(f);
  double n = 0.0;
  for (const auto& w : windows) {
    sum += w.window.colwise().sum();
    sq += w.window.colwise().squaredNorm();
    n += static_cast<double>(w.window.rows());
  }
  FeatureScaler s;
  s.mean = sum / n;
  const Eigen::RowVectorXd var = (sq / n - s.mean.cwiseProduct(s.mean)).cwiseMax(0.0);
  s.inv_std = (var.array().sqrt() + 1e-8).inverse().matrix();
  return s;
}

Eigen::MatrixXd FeatureScaler::apply(const Eigen::MatrixXd& window) const {
  return (window.rowwise() - mean) * inv_std.asDiagonal();
}

GestureClass argmax_class(const Probabilities& p) {
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return static_cast<GestureClass>(best);
}

Probabilities GestureClassifier::predict(const Eigen::MatrixXd& window) const {
  const FeatureWindow<float> w = scaler.apply(window).cast<float>();
  return forward(params, w).cast<double>();
}

ProbabilityModel GestureClassifier::as_model() const {
  return [self = *this](const Eigen::MatrixXd& w) { return self.predict(w); };
}

TrainResult train(const TrainConfig& config, std::span<const LabeledWindow> dataset) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  std::set<GestureClass> present;
  for (const auto& w : dataset) present.insert(w.label);
  if (present.size() < 2) throw ConfigError("train: dataset needs at least two classes");

  const auto steps = static_cast<int>(dataset.front().window.rows());
  const auto feats = static_cast<int>(dataset.front().window.cols());
  for (const auto& w : dataset)
    if (w.window.rows() != steps || w.window.cols() != feats) throw ConfigError("train: inconsistent window shapes");

  TrainResult result;
  result.model.config = config;
  result.model.scaler = FeatureScaler::fit(dataset);
  result.model.params = ModelParams<float>::init(config.shape(steps, feats), config.seed);
  ModelParams<float>& params = result.model.params;

  std::vector<FeatureWindow<float>> inputs;
  inputs.reserve(dataset.size());
  for (const auto& w : dataset) inputs.push_back(result.model.scaler.apply(w.window).cast<float>());

  ModelParams<float> m1 = ModelParams<float>::zeros(params.shape);
  ModelParams<float> m2 = ModelParams<float>::zeros(params.shape);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ModelParams<float> grads = ModelParams<float>::zeros(params.shape);
      const float w = 1.0f / static_cast<float>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        int predicted = 0;
        loss_sum += accumulate_example(params, inputs[order[i]], dataset[order[i]].label, w, grads, &rng,
                                       config.dropout, &predicted);
        if (predicted == code(dataset[order[i]].label)) ++correct;
      }
      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const auto lr = static_cast<float>(config.learning_rate * std::sqrt(bc2) / bc1);
      const auto b1 = static_cast<float>(config.beta1);
      const auto b2 = static_cast<float>(config.beta2);
      const auto eps = static_cast<float>(config.epsilon);

      std::vector<MatrixX<float>*> g, a, b;
      grads.visit([&](const std::string&, MatrixX<float>& x) { g.push_back(&x); });
      m1.visit([&](const std::string&, MatrixX<float>& x) { a.push_back(&x); });
      m2.visit([&](const std::string&, MatrixX<float>& x) { b.push_back(&x); });
      std::size_t k = 0;
      params.visit([&](const std::string&, MatrixX<float>& p) {
        *a[k] = b1 * *a[k] + (1.0f - b1) * *g[k];
        *b[k] = b2 * *b[k] + (1.0f - b2) * g[k]->cwiseAbs2();
        p.array() -= lr * a[k]->array() / (b[k]->array().sqrt() + eps);
        ++k;
      });
    }
    if (!params.all_finite()) throw NumericError("train: parameters diverged");
    result.log.push_back({epoch, loss_sum / static_cast<double>(dataset.size()),
                          static_cast<double>(correct) / static_cast<double>(dataset.size())});
  }
  return result;
}

double ConfusionMatrix::accuracy() const {
  const long n = total();
  return n == 0 ? 0.0 : static_cast<double>(counts.trace()) / static_cast<double>(n);
}

ConfusionMatrix evaluate_windows(std::span<const LabeledWindow> windows, const ProbabilityModel& model) {
  ConfusionMatrix cm;
  for (const auto& w : windows) cm.add(w.label, argmax_class(model(w.window)));
  return cm;
}

ClassifierFactory transformer_factory(const TrainConfig& config) {
  return [config](const std::vector<LabeledWindow>& train_set) {
    return train(config, train_set).model.as_model();
  };
}

KFoldReport kfold_evaluate(const std::vector<LabeledRecording>& recordings, std::size_t k, std::size_t stride,
                           const ClassifierFactory& factory) {
  if (k < 2) throw ConfigError("kfold_evaluate: k must be at least 2");
  if (recordings.size() < k) throw ConfigError("kfold_evaluate: fewer recordings than folds");

  std::vector<std::vector<LabeledWindow>> per_recording;
  per_recording.reserve(recordings.size());
  for (const auto& r : recordings) per_recording.push_back(extract_windows(r, stride));

  KFoldReport report;
  const std::size_t n = recordings.size();
  for (std::size_t fold = 0; fold < k; ++fold) {
    const std::size_t lo = fold * n / k;
    const std::size_t hi = (fold + 1) * n / k;
    std::vector<LabeledWindow> train_set, test_set;
    std::vector<int> held_out;
    for (std::size_t i = 0; i < n; ++i) {
      auto& dst = (i >= lo && i < hi) ? test_set : train_set;
      dst.insert(dst.end(), per_recording[i].begin(), per_recording[i].end());
      if (i >= lo && i < hi) held_out.push_back(recordings[i].recording_id);
    }
    const ProbabilityModel model = factory(train_set);
    ConfusionMatrix cm = evaluate_windows(test_set, model);
    report.aggregate += cm;
    report.folds.push_back(cm);
    report.fold_recordings.push_back(std::move(held_out));
  }
  return report;
}

// ---- checkpoint ----

namespace {

constexpr const char* kCheckpointFormat = "ciac-gesture-model";
constexpr int kCheckpointVersion = 1;

nlohmann::json config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"beta1", c.beta1},                 {"beta2", c.beta2},           {"epsilon", c.epsilon},
          {"seed", c.seed},                   {"dropout", c.dropout},       {"d_model", c.d_model},
          {"heads", c.heads},                 {"ffn", c.ffn},               {"dense", c.dense}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.dropout = j.at("dropout").get<double>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.dense = j.at("dense").get<int>();
  return c;
}

}  // namespace

std::string GestureClassifier::to_json() const {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["seed"] = config.seed;
  j["config"] = config_json(config);
  const ModelShape& s = params.shape;
  j["shape"] = {{"window_steps", s.window_steps}, {"features", s.features}, {"d_model", s.d_model},
                {"heads", s.heads},               {"ffn", s.ffn},           {"blocks", s.blocks},
                {"dense", s.dense},               {"classes", s.classes}};
  j["scaler"] = {{"mean", std::vector<double>(scaler.mean.data(), scaler.mean.data() + scaler.mean.size())},
                 {"inv_std", std::vector<double>(scaler.inv_std.data(), scaler.inv_std.data() + scaler.inv_std.size())}};
  nlohmann::json tensors = nlohmann::json::array();
  params.visit([&](const std::string& name, const MatrixX<float>& m) {
    std::vector<float> flat(static_cast<std::size_t>(m.size()));
    Eigen::Map<MatrixX<float>>(flat.data(), m.rows(), m.cols()) = m;
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}});
  });
  j["params"] = std::move(tensors);
  return j.dump();
}

GestureClassifier GestureClassifier::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
  }
  try {
    if (j.at("format") != kCheckpointFormat) throw ConfigError("checkpoint: unknown format");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
    GestureClassifier c;
    c.config = config_from_json(j.at("config"));
    const auto& sj = j.at("shape");
    ModelShape s;
    s.window_steps = sj.at("window_steps");
    s.features = sj.at("features");
    s.d_model = sj.at("d_model");
    s.heads = sj.at("heads");
    s.ffn = sj.at("ffn");
    s.blocks = sj.at("blocks");
    s.dense = sj.at("dense");
    s.classes = sj.at("classes");
    s.validate();
    c.params = ModelParams<float>::zeros(s);

    const auto mean = j.at("scaler").at("mean").get<std::vector<double>>();
    const auto inv = j.at("scaler").at("inv_std").get<std::vector<double>>();
    if (mean.size() != static_cast<std::size_t>(s.features) || inv.size() != mean.size())
      throw ConfigError("checkpoint: scaler size does not match features");
    c.scaler.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    c.scaler.inv_std = Eigen::Map<const Eigen::RowVectorXd>(inv.data(), static_cast<Eigen::Index>(inv.size()));

    const auto& tensors = j.at("params");
    std::size_t idx = 0;
    c.params.visit([&](const std::string& name, MatrixX<float>& m) {
      if (idx >= tensors.size()) throw ConfigError("checkpoint: missing tensor " + name);
      const auto& t = tensors[idx++];
      if (t.at("name") != name) throw ConfigError("checkpoint: expected tensor " + name);
      if (t.at("rows").get<Eigen::Index>() != m.rows() || t.at("cols").get<Eigen::Index>() != m.cols())
        throw ConfigError("checkpoint: shape mismatch for " + name);
      const auto data = t.at("data").get<std::vector<float>>();
      if (data.size() != static_cast<std::size_t>(m.size())) throw ConfigError("checkpoint: size mismatch for " + name);
      m = Eigen::Map<const MatrixX<float>>(data.data(), m.rows(), m.cols());
    });
    if (idx != tensors.size()) throw ConfigError("checkpoint: unexpected extra tensors");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void GestureClassifier::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json();
}

GestureClassifier GestureClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace ciac

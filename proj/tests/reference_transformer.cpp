#include "reference_transformer.hpp"

#include <cmath>

namespace ciac::test {

namespace {

using Grid = std::vector<std::vector<double>>;

Grid grid(std::size_t r, std::size_t c) { return Grid(r, std::vector<double>(c, 0.0)); }

// y = x W + b, with W stored features-in by features-out.
Grid affine(const Grid& x, const MatrixX<double>& w, const MatrixX<double>& b) {
  const std::size_t n = x.size(), in = static_cast<std::size_t>(w.rows()), out = static_cast<std::size_t>(w.cols());
  Grid y = grid(n, out);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < out; ++j) {
      double s = b(0, static_cast<Eigen::Index>(j));
      for (std::size_t i = 0; i < in; ++i) s += x[t][i] * w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      y[t][j] = s;
    }
  return y;
}

Grid norm(const Grid& x, const MatrixX<double>& g, const MatrixX<double>& b) {
  Grid y = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double d = static_cast<double>(x[t].size());
    double mean = 0;
    for (double v : x[t]) mean += v;
    mean /= d;
    double var = 0;
    for (double v : x[t]) var += (v - mean) * (v - mean);
    var /= d;
    for (std::size_t j = 0; j < x[t].size(); ++j)
      y[t][j] = (x[t][j] - mean) / std::sqrt(var + 1e-5) * g(0, static_cast<Eigen::Index>(j)) +
                b(0, static_cast<Eigen::Index>(j));
  }
  return y;
}

void relu(Grid& x) {
  for (auto& row : x)
    for (double& v : row) v = v > 0 ? v : 0;
}

}  // namespace

std::vector<double> reference_logits(const ModelParams<double>& p, const Eigen::MatrixXd& window) {
  const std::size_t steps = static_cast<std::size_t>(window.rows());
  const std::size_t feats = static_cast<std::size_t>(window.cols());
  const std::size_t d = static_cast<std::size_t>(p.shape.d_model);
  const std::size_t heads = static_cast<std::size_t>(p.shape.heads);
  const std::size_t dh = d / heads;

  Grid x = grid(steps, feats);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t f = 0; f < feats; ++f) x[t][f] = window(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f));

  Grid h = affine(x, p.embed_w, p.embed_b);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      // Sinusoidal position code: even dims sine, odd dims cosine of t / 10000^(2 floor(j/2) / d).
      const double rate = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
      h[t][j] += j % 2 == 0 ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
    }

  for (const auto& blk : p.blocks) {
    const Grid a = norm(h, blk.ln1_gamma, blk.ln1_beta);
    const Grid q = affine(a, blk.wq, blk.bq), k = affine(a, blk.wk, blk.bk), v = affine(a, blk.wv, blk.bv);
    Grid o = grid(steps, d);
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t i = 0; i < steps; ++i) {
        std::vector<double> score(steps);
        double mx = -1e300;
        for (std::size_t j = 0; j < steps; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][hd * dh + c] * k[j][hd * dh + c];
          score[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, score[j]);
        }
        double z = 0;
        for (double& s : score) z += (s = std::exp(s - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < steps; ++j) acc += score[j] / z * v[j][hd * dh + c];
          o[i][hd * dh + c] = acc;
        }
      }
    const Grid proj = affine(o, blk.wo, blk.bo);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += proj[t][j];

    Grid u = affine(norm(h, blk.ln2_gamma, blk.ln2_beta), blk.w1, blk.b1);
    relu(u);
    const Grid f = affine(u, blk.w2, blk.b2);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += f[t][j];
  }

  Grid pooled = grid(1, d);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j) pooled[0][j] += h[t][j] / static_cast<double>(steps);

  Grid z1 = affine(pooled, p.dense1_w, p.dense1_b);
  relu(z1);
  Grid z2 = affine(z1, p.dense2_w, p.dense2_b);
  relu(z2);
  return affine(z2, p.head_w, p.head_b)[0];
}

}  // namespace ciac::test

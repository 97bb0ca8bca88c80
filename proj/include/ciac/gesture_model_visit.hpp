#pragma once

// Template members of ModelParams that callers instantiate with their own visitors.

#include <string>

namespace ciac {

namespace detail {

template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f(std::string("embed_w"), p.embed_w);
  f(std::string("embed_b"), p.embed_b);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    f(pre + "ln1_gamma", b.ln1_gamma);
    f(pre + "ln1_beta", b.ln1_beta);
    f(pre + "wq", b.wq);
    f(pre + "bq", b.bq);
    f(pre + "wk", b.wk);
    f(pre + "bk", b.bk);
    f(pre + "wv", b.wv);
    f(pre + "bv", b.bv);
    f(pre + "wo", b.wo);
    f(pre + "bo", b.bo);
    f(pre + "ln2_gamma", b.ln2_gamma);
    f(pre + "ln2_beta", b.ln2_beta);
    f(pre + "w1", b.w1);
    f(pre + "b1", b.b1);
    f(pre + "w2", b.w2);
    f(pre + "b2", b.b2);
  }
  f(std::string("dense1_w"), p.dense1_w);
  f(std::string("dense1_b"), p.dense1_b);
  f(std::string("dense2_w"), p.dense2_w);
  f(std::string("dense2_b"), p.dense2_b);
  f(std::string("head_w"), p.head_w);
  f(std::string("head_b"), p.head_b);
}

}  // namespace detail

template <typename Scalar>
template <typename F>
void ModelParams<Scalar>::visit(F&& f) {
  detail::visit_params(*this, std::forward<F>(f));
}

template <typename Scalar>
template <typename F>
void ModelParams<Scalar>::visit(F&& f) const {
  detail::visit_params(*this, std::forward<F>(f));
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out = ModelParams<Other>::zeros(shape);
  out.positional = positional.template cast<Other>();
  std::vector<const MatrixX<Scalar>*> src;
  visit([&](const std::string&, const MatrixX<Scalar>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.visit([&](const std::string&, MatrixX<Other>& m) { m = src[i++]->template cast<Other>(); });
  return out;
}

}  // namespace ciac

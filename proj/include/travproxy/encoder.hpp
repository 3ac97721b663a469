#pragma once

#include "travproxy/types.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

namespace travproxy {

inline constexpr int kFeatureDim = 8;

/// Per-point local geometry descriptors, one column per point:
/// rows 0-2 mean neighbour offset, rows 3-5 per-axis std of the offsets,
/// row 6 height range, row 7 mean neighbour distance.
using PointFeatures = Eigen::Matrix<double, kFeatureDim, Eigen::Dynamic>;

/// Features of every point from its k_enc nearest neighbours (the point
/// itself included). Only relative offsets enter, so the result is invariant
/// to translating the cloud.
PointFeatures featurize(const Points& points, std::size_t k_enc);

struct EncoderShape {
  int hidden = 64;
  int dim = 16;
  int head_hidden = 16;
};

/// Embedding trunk (3 tanh/tanh/linear layers + L2 normalisation) and the
/// two logistic heads. The same struct doubles as a gradient container.
template <typename Scalar>
struct EncoderModel {
  // Fixed input standardisation, not trained.
  Vector<Scalar> in_shift, in_scale;

  Matrix<Scalar> w1, w2, w3;
  Vector<Scalar> b1, b2, b3;
  // Regression head h.
  Matrix<Scalar> rw1, rw2;
  Vector<Scalar> rb1, rb2;
  // Baseline segmentation head g.
  Matrix<Scalar> sw1, sw2;
  Vector<Scalar> sb1, sb2;

  int k_enc = 8;

  int dim() const { return static_cast<int>(w3.rows()); }

  static EncoderModel zeros(const EncoderShape& s, int k_enc = 8) {
    EncoderModel m;
    m.k_enc = k_enc;
    m.in_shift = Vector<Scalar>::Zero(kFeatureDim);
    m.in_scale = Vector<Scalar>::Ones(kFeatureDim);
    m.w1 = Matrix<Scalar>::Zero(s.hidden, kFeatureDim);
    m.b1 = Vector<Scalar>::Zero(s.hidden);
    m.w2 = Matrix<Scalar>::Zero(s.hidden, s.hidden);
    m.b2 = Vector<Scalar>::Zero(s.hidden);
    m.w3 = Matrix<Scalar>::Zero(s.dim, s.hidden);
    m.b3 = Vector<Scalar>::Zero(s.dim);
    for (auto* head : {&m.rw1, &m.sw1}) *head = Matrix<Scalar>::Zero(s.head_hidden, s.dim);
    for (auto* head : {&m.rb1, &m.sb1}) *head = Vector<Scalar>::Zero(s.head_hidden);
    for (auto* head : {&m.rw2, &m.sw2}) *head = Matrix<Scalar>::Zero(1, s.head_hidden);
    for (auto* head : {&m.rb2, &m.sb2}) *head = Vector<Scalar>::Zero(1);
    return m;
  }

  /// Glorot-uniform weights, zero biases.
  static EncoderModel random(const EncoderShape& s, Rng& rng, int k_enc = 8) {
    EncoderModel m = zeros(s, k_enc);
    auto glorot = [&rng](auto& w) {
      const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> u(-a, a);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(u(rng));
    };
    m.for_each_weight([&](std::string_view, auto& p) {
      if (p.cols() > 1) glorot(p);
    });
    return m;
  }

  /// Visits every trainable tensor with its name. Order is stable and is the
  /// checkpoint order.
  template <typename F>
  void for_each_weight(F&& f) {
    f("trunk.w1", w1); f("trunk.b1", b1);
    f("trunk.w2", w2); f("trunk.b2", b2);
    f("trunk.w3", w3); f("trunk.b3", b3);
    f("reg.w1", rw1); f("reg.b1", rb1);
    f("reg.w2", rw2); f("reg.b2", rb2);
    f("seg.w1", sw1); f("seg.b1", sb1);
    f("seg.w2", sw2); f("seg.b2", sb2);
  }
  template <typename F>
  void for_each_weight(F&& f) const {
    const_cast<EncoderModel*>(this)->for_each_weight(
        [&f](std::string_view name, auto& p) { f(name, std::as_const(p)); });
  }

  EncoderModel zeros_like() const {
    EncoderModel g = *this;
    g.for_each_weight([](std::string_view, auto& p) { p.setZero(); });
    return g;
  }

  bool all_finite() const {
    bool ok = in_shift.allFinite() && in_scale.allFinite();
    for_each_weight([&ok](std::string_view, const auto& p) { ok = ok && p.allFinite(); });
    return ok;
  }

  /// Sets the input standardisation from training features.
  void fit_standardization(const PointFeatures& feats) {
    const auto n = static_cast<double>(feats.cols());
    if (feats.cols() == 0) return;
    Eigen::VectorXd mean = feats.rowwise().mean();
    Eigen::VectorXd var = (feats.colwise() - mean).array().square().rowwise().sum() / n;
    in_shift = mean.cast<Scalar>();
    in_scale = (1.0 / (var.array().sqrt() + 1e-6)).matrix().cast<Scalar>();
  }
};

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct ForwardCache {
  Matrix<Scalar> input;        // standardised features
  Matrix<Scalar> h1, h2;       // tanh activations
  Matrix<Scalar> z;            // pre-normalisation embedding
  RowVector<Scalar> znorm;
  Matrix<Scalar> x;            // unit embeddings
  Matrix<Scalar> rh, sh;       // head hidden activations
  RowVector<Scalar> t, s_prob;
};

template <typename Scalar>
Scalar logistic(Scalar v) {
  using std::exp;
  return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-v)) : exp(v) / (Scalar(1) + exp(v));
}

/// Unit-norm embeddings for a batch of feature columns. Fills `cache` when
/// given. Throws NumericError on non-finite activations or a zero-norm
/// pre-embedding.
template <typename Scalar>
Matrix<Scalar> encode(const EncoderModel<Scalar>& m, const Matrix<Scalar>& feats,
                      ForwardCache<Scalar>* cache = nullptr) {
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c.input = (feats.colwise() - m.in_shift).array().colwise() * m.in_scale.array();
  c.h1 = ((m.w1 * c.input).colwise() + m.b1).array().tanh();
  c.h2 = ((m.w2 * c.h1).colwise() + m.b2).array().tanh();
  c.z = (m.w3 * c.h2).colwise() + m.b3;
  c.znorm = c.z.colwise().norm();
  if (!c.z.allFinite() || !(c.znorm.minCoeff() > Scalar(0)))
    throw NumericError("encode: non-finite or zero-norm embedding");
  c.x = c.z.array().rowwise() / c.znorm.array();
  return c.x;
}

inline Eigen::MatrixXd encode(const EncoderModel<double>& m, const PointFeatures& feats,
                              ForwardCache<double>* cache = nullptr) {
  return encode(m, Eigen::MatrixXd(feats), cache);
}

/// Regression traversability t = h(x) and baseline segmentation probability
/// s = g(x), both logistic. Fills the head part of `cache` when given.
template <typename Scalar>
std::pair<RowVector<Scalar>, RowVector<Scalar>> heads(const EncoderModel<Scalar>& m,
                                                      const Matrix<Scalar>& x,
                                                      ForwardCache<Scalar>* cache = nullptr) {
  Matrix<Scalar> rh = ((m.rw1 * x).colwise() + m.rb1).array().tanh();
  Matrix<Scalar> sh = ((m.sw1 * x).colwise() + m.sb1).array().tanh();
  RowVector<Scalar> t = ((m.rw2 * rh).array() + m.rb2(0)).unaryExpr([](Scalar v) { return logistic(v); });
  RowVector<Scalar> s = ((m.sw2 * sh).array() + m.sb2(0)).unaryExpr([](Scalar v) { return logistic(v); });
  if (cache) {
    cache->rh = rh;
    cache->sh = sh;
    cache->t = t;
    cache->s_prob = s;
  }
  return {t, s};
}

/// Upstream gradients of a scalar loss with respect to the forward outputs.
/// Empty members are treated as zero.
template <typename Scalar>
struct OutputGrads {
  Matrix<Scalar> d_x;          // dim x N, ambient gradient on unit embeddings
  RowVector<Scalar> d_t;       // 1 x N
  RowVector<Scalar> d_s_prob;  // 1 x N
};

/// Tangent-space projection of an ambient gradient through x = z / |z|:
/// dz = (I - x x^T) dx / |z|.
template <typename Scalar>
Matrix<Scalar> normalize_backward(const Matrix<Scalar>& x, const RowVector<Scalar>& znorm,
                                  const Matrix<Scalar>& dx) {
  RowVector<Scalar> proj = (x.array() * dx.array()).colwise().sum();
  Matrix<Scalar> dz = dx - x * proj.asDiagonal();
  return dz.array().rowwise() / znorm.array();
}

/// Parameter gradients, accumulated into `grads`, for a forward pass whose
/// activations are in `cache` (encode + heads must both have filled it).
template <typename Scalar>
void backward(const EncoderModel<Scalar>& m, const ForwardCache<Scalar>& c,
              const OutputGrads<Scalar>& up, EncoderModel<Scalar>& grads) {
  const Eigen::Index n = c.x.cols();
  Matrix<Scalar> dx = up.d_x.size() ? up.d_x : Matrix<Scalar>::Zero(c.x.rows(), n);

  auto head_backward = [&](const RowVector<Scalar>& d_out, const RowVector<Scalar>& out,
                           const Matrix<Scalar>& hid, const Matrix<Scalar>& w1, const Matrix<Scalar>& w2,
                           Matrix<Scalar>& gw1, Vector<Scalar>& gb1, Matrix<Scalar>& gw2,
                           Vector<Scalar>& gb2) {
    if (d_out.size() == 0) return;
    // logistic' = s (1 - s)
    RowVector<Scalar> d_pre = d_out.array() * out.array() * (Scalar(1) - out.array());
    gw2.noalias() += d_pre * hid.transpose();
    gb2(0) += d_pre.sum();
    Matrix<Scalar> d_hid = (w2.transpose() * d_pre).array() * (Scalar(1) - hid.array().square());
    gw1.noalias() += d_hid * c.x.transpose();
    gb1 += d_hid.rowwise().sum();
    dx.noalias() += w1.transpose() * d_hid;
  };
  head_backward(up.d_t, c.t, c.rh, m.rw1, m.rw2, grads.rw1, grads.rb1, grads.rw2, grads.rb2);
  head_backward(up.d_s_prob, c.s_prob, c.sh, m.sw1, m.sw2, grads.sw1, grads.sb1, grads.sw2, grads.sb2);

  Matrix<Scalar> dz = normalize_backward(c.x, c.znorm, dx);
  grads.w3.noalias() += dz * c.h2.transpose();
  grads.b3 += dz.rowwise().sum();
  Matrix<Scalar> dh2 = (m.w3.transpose() * dz).array() * (Scalar(1) - c.h2.array().square());
  grads.w2.noalias() += dh2 * c.h1.transpose();
  grads.b2 += dh2.rowwise().sum();
  Matrix<Scalar> dh1 = (m.w2.transpose() * dh2).array() * (Scalar(1) - c.h1.array().square());
  grads.w1.noalias() += dh1 * c.input.transpose();
  grads.b1 += dh1.rowwise().sum();
}

}  // namespace travproxy

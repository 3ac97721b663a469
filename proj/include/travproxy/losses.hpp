#pragma once

#include "travproxy/encoder.hpp"
#include "travproxy/pointcloud.hpp"
#include "travproxy/proxybank.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace travproxy {

struct LossHyper {
  double lambda = 20.0;
  double delta = 0.01;
  double temperature = 0.05;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(delta >= 0.0)) throw ConfigError("delta must be >= 0");
  }
};

template <typename Scalar>
struct ValueGrad {
  Scalar value;
  Scalar grad;
};

/// Squared error (t - a)^2.
template <typename Scalar>
ValueGrad<Scalar> reg_loss(Scalar t, Scalar a) {
  const Scalar d = t - a;
  return {d * d, Scalar(2) * d};
}

inline constexpr double kProbClamp = 1e-12;

/// Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12];
/// the gradient is zero where the clamp is active.
template <typename Scalar>
ValueGrad<Scalar> bce_seg_loss(Scalar s, Scalar y) {
  using std::log;
  const Scalar lo = Scalar(kProbClamp), hi = Scalar(1) - Scalar(kProbClamp);
  const Scalar sc = std::clamp(s, lo, hi);
  const Scalar value = -(y * log(sc) + (Scalar(1) - y) * log(Scalar(1) - sc));
  const Scalar grad = (s < lo || s > hi) ? Scalar(0) : -y / sc + (Scalar(1) - y) / (Scalar(1) - sc);
  return {value, grad};
}

/// Binary SoftTriple on class similarities:
/// -log(e^{l(Sy-d)} / (e^{l(Sy-d)} + e^{l So})) = softplus(l (So - Sy + d)).
template <typename Scalar>
struct SoftTripleTerm {
  Scalar value;
  Scalar d_same;   // dL/dS_{i,y}
  Scalar d_other;  // dL/dS_{i,1-y}
};

template <typename Scalar>
SoftTripleTerm<Scalar> softtriple(Scalar s_same, Scalar s_other, const LossHyper& h) {
  using std::exp;
  using std::log1p;
  const Scalar lam = Scalar(h.lambda);
  const Scalar u = lam * (s_other - s_same + Scalar(h.delta));
  const Scalar value = std::max(u, Scalar(0)) + log1p(exp(-std::abs(u)));
  const Scalar sig = logistic(u);
  return {value, -lam * sig, lam * sig};
}

/// Single-point proxy segmentation loss with gradients on x and on every proxy.
template <typename Scalar>
struct ProxyLossGrad {
  Scalar value{};
  Vector<Scalar> d_x;
  std::array<Matrix<Scalar>, 2> d_proxies;
};

template <typename Scalar>
ProxyLossGrad<Scalar> proxy_seg_loss(const Vector<Scalar>& x, Class y, const ProxyBank<Scalar>& bank,
                                     const LossHyper& h) {
  const Matrix<Scalar> xm = x;
  const auto sim_same = class_similarity(xm, bank, y);
  const auto sim_other = class_similarity(xm, bank, other(y));
  const auto term = softtriple(sim_same.s(0), sim_other.s(0), h);

  ProxyLossGrad<Scalar> out;
  out.value = term.value;
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.size(), 1);
  for (int c = 0; c < 2; ++c) out.d_proxies[c] = Matrix<Scalar>::Zero(bank.dim(), bank.K());
  const Scalar T = bank.temperature;
  similarity_backward(sim_same, RowVector<Scalar>(RowVector<Scalar>::Constant(1, term.d_same)), xm, bank.of(y), T, dx,
                      out.d_proxies[index_of(y)]);
  similarity_backward(sim_other, RowVector<Scalar>(RowVector<Scalar>::Constant(1, term.d_other)), xm, bank.of(other(y)), T, dx,
                      out.d_proxies[index_of(other(y))]);
  out.d_x = dx.col(0);
  return out;
}

/// Unsupervised loss: proxy_seg_loss with the pseudo-class as a constant
/// target. Returns the pseudo-class used.
template <typename Scalar>
std::pair<ProxyLossGrad<Scalar>, Class> unsup_loss(const Vector<Scalar>& x, const ProxyBank<Scalar>& bank,
                                                   const LossHyper& h,
                                                   PseudoLabelRule rule = PseudoLabelRule::SoftSimilarity) {
  const Class yhat = assign_pseudo_class(x, bank, rule);
  return {proxy_seg_loss(x, yhat, bank, h), yhat};
}

/// Network outputs and labels for one episode.
///
/// Query points are Positive (with a traversability target) or Unlabeled;
/// support points are Positive or Negative.
template <typename Scalar>
struct EpisodeOutputs {
  Matrix<Scalar> x_query;
  RowVector<Scalar> t_query;
  RowVector<Scalar> s_query;  // baseline head, supervised mode only
  std::vector<Label> query_labels;
  std::vector<Scalar> query_targets;  // NaN where absent

  Matrix<Scalar> x_support;
  RowVector<Scalar> s_support;  // baseline head, supervised mode only
  std::vector<Label> support_labels;
};

/// Loss parts and gradients. Parts are already divided by their set sizes:
/// total = reg + seg_supervised + seg_proxy_query + seg_proxy_support + unsup.
template <typename Scalar>
struct LossBreakdown {
  Scalar reg{}, seg_supervised{}, seg_proxy_query{}, seg_proxy_support{}, unsup{}, total{};
  std::size_t n_query_positive = 0, n_query_unlabeled = 0, n_support = 0;

  Matrix<Scalar> d_x_query, d_x_support;
  RowVector<Scalar> d_t_query, d_s_query, d_s_support;
  std::array<Matrix<Scalar>, 2> d_proxies;

  Scalar seg() const { return seg_supervised + seg_proxy_query + seg_proxy_support; }
};

namespace detail {

template <typename Scalar>
void check_partitions(const EpisodeOutputs<Scalar>& ep, std::vector<Eigen::Index>& qp,
                      std::vector<Eigen::Index>& qu) {
  for (std::size_t i = 0; i < ep.query_labels.size(); ++i) {
    switch (ep.query_labels[i]) {
      case Label::Positive:
        if (i >= ep.query_targets.size() || std::isnan(static_cast<double>(ep.query_targets[i])))
          throw DataError("loss: query positive without traversability target");
        qp.push_back(static_cast<Eigen::Index>(i));
        break;
      case Label::Unlabeled: qu.push_back(static_cast<Eigen::Index>(i)); break;
      case Label::Negative: throw DataError("loss: Negative label among query points");
    }
  }
  for (Label l : ep.support_labels)
    if (l == Label::Unlabeled) throw DataError("loss: unlabeled point among support points");
  if (qp.empty()) throw DataError("loss: episode has no positive query points");
  if (ep.support_labels.empty()) throw DataError("loss: episode has no support points");
}

template <typename Scalar>
void init_grads(const EpisodeOutputs<Scalar>& ep, LossBreakdown<Scalar>& out) {
  out.d_x_query = Matrix<Scalar>::Zero(ep.x_query.rows(), ep.x_query.cols());
  out.d_x_support = Matrix<Scalar>::Zero(ep.x_support.rows(), ep.x_support.cols());
  out.d_t_query = RowVector<Scalar>::Zero(ep.x_query.cols());
}

template <typename Scalar>
void add_regression(const EpisodeOutputs<Scalar>& ep, const std::vector<Eigen::Index>& qp,
                    LossBreakdown<Scalar>& out) {
  const Scalar inv = Scalar(1) / Scalar(qp.size());
  for (Eigen::Index i : qp) {
    const auto r = reg_loss(ep.t_query(i), ep.query_targets[static_cast<std::size_t>(i)]);
    out.reg += inv * r.value;
    out.d_t_query(i) += inv * r.grad;
  }
}

/// Accumulates sum_i weight * SoftTriple(x_i, target_i) into `value` and the
/// gradients into d_x / out.d_proxies. `targets[j]` is the class of column
/// `cols[j]`.
template <typename Scalar>
Scalar add_proxy_terms(const Matrix<Scalar>& x, const std::vector<Eigen::Index>& cols,
                       const std::vector<Class>& targets, Scalar weight, const ProxyBank<Scalar>& bank,
                       const LossHyper& h, Matrix<Scalar>& d_x, LossBreakdown<Scalar>& out) {
  if (cols.empty()) return Scalar(0);
  Matrix<Scalar> xs(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) xs.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
  const auto sim_p = class_similarity(xs, bank, Class::Positive);
  const auto sim_n = class_similarity(xs, bank, Class::Negative);
  RowVector<Scalar> d_sp(xs.cols()), d_sn(xs.cols());
  Scalar value = 0;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    const bool pos = targets[static_cast<std::size_t>(j)] == Class::Positive;
    const auto term = pos ? softtriple(sim_p.s(j), sim_n.s(j), h) : softtriple(sim_n.s(j), sim_p.s(j), h);
    value += weight * term.value;
    d_sp(j) = weight * (pos ? term.d_same : term.d_other);
    d_sn(j) = weight * (pos ? term.d_other : term.d_same);
  }
  Matrix<Scalar> dxs = Matrix<Scalar>::Zero(xs.rows(), xs.cols());
  similarity_backward(sim_p, d_sp, xs, bank.of(Class::Positive), bank.temperature, dxs,
                      out.d_proxies[index_of(Class::Positive)]);
  similarity_backward(sim_n, d_sn, xs, bank.of(Class::Negative), bank.temperature, dxs,
                      out.d_proxies[index_of(Class::Negative)]);
  for (std::size_t j = 0; j < cols.size(); ++j) d_x.col(cols[j]) += dxs.col(static_cast<Eigen::Index>(j));
  return value;
}

inline Class class_of(Label l) { return l == Label::Positive ? Class::Positive : Class::Negative; }

}  // namespace detail

/// Supervised objective: mean over query positives of (reg + BCE) plus mean
/// BCE over support points, using the baseline head probabilities.
template <typename Scalar>
LossBreakdown<Scalar> supervised_total(const EpisodeOutputs<Scalar>& ep) {
  std::vector<Eigen::Index> qp, qu;
  detail::check_partitions(ep, qp, qu);
  LossBreakdown<Scalar> out;
  out.n_query_positive = qp.size();
  out.n_query_unlabeled = qu.size();
  out.n_support = ep.support_labels.size();
  detail::init_grads(ep, out);
  out.d_s_query = RowVector<Scalar>::Zero(ep.x_query.cols());
  out.d_s_support = RowVector<Scalar>::Zero(ep.x_support.cols());

  detail::add_regression(ep, qp, out);
  const Scalar inv_q = Scalar(1) / Scalar(qp.size());
  for (Eigen::Index i : qp) {
    const auto b = bce_seg_loss(ep.s_query(i), Scalar(1));
    out.seg_supervised += inv_q * b.value;
    out.d_s_query(i) += inv_q * b.grad;
  }
  const Scalar inv_s = Scalar(1) / Scalar(ep.support_labels.size());
  for (std::size_t i = 0; i < ep.support_labels.size(); ++i) {
    const Scalar y = ep.support_labels[i] == Label::Positive ? Scalar(1) : Scalar(0);
    const auto b = bce_seg_loss(ep.s_support(static_cast<Eigen::Index>(i)), y);
    out.seg_supervised += inv_s * b.value;
    out.d_s_support(static_cast<Eigen::Index>(i)) += inv_s * b.grad;
  }
  out.total = out.reg + out.seg_supervised;
  return out;
}

/// Proxy objective without unlabeled points: mean over query positives of
/// (reg + proxy SoftTriple) plus mean proxy SoftTriple over support points.
template <typename Scalar>
LossBreakdown<Scalar> proxy_total(const EpisodeOutputs<Scalar>& ep, const ProxyBank<Scalar>& bank,
                                  const LossHyper& h) {
  std::vector<Eigen::Index> qp, qu;
  detail::check_partitions(ep, qp, qu);
  LossBreakdown<Scalar> out;
  out.n_query_positive = qp.size();
  out.n_query_unlabeled = qu.size();
  out.n_support = ep.support_labels.size();
  detail::init_grads(ep, out);
  for (int c = 0; c < 2; ++c) out.d_proxies[c] = Matrix<Scalar>::Zero(bank.dim(), bank.K());

  detail::add_regression(ep, qp, out);
  out.seg_proxy_query = detail::add_proxy_terms(ep.x_query, qp, std::vector<Class>(qp.size(), Class::Positive),
                                                Scalar(1) / Scalar(qp.size()), bank, h, out.d_x_query, out);
  std::vector<Eigen::Index> sc(ep.support_labels.size());
  std::vector<Class> st(ep.support_labels.size());
  for (std::size_t i = 0; i < sc.size(); ++i) {
    sc[i] = static_cast<Eigen::Index>(i);
    st[i] = detail::class_of(ep.support_labels[i]);
  }
  out.seg_proxy_support = detail::add_proxy_terms(ep.x_support, sc, st, Scalar(1) / Scalar(sc.size()), bank, h,
                                                  out.d_x_support, out);
  out.total = out.reg + out.seg_proxy_query + out.seg_proxy_support;
  return out;
}

/// Traverse objective: proxy_total plus the mean unsupervised loss over
/// unlabeled query points (zero when there are none). Pseudo-classes are
/// computed from the current bank and carry no gradient.
template <typename Scalar>
LossBreakdown<Scalar> traverse_loss(const EpisodeOutputs<Scalar>& ep, const ProxyBank<Scalar>& bank,
                                    const LossHyper& h,
                                    PseudoLabelRule rule = PseudoLabelRule::SoftSimilarity) {
  LossBreakdown<Scalar> out = proxy_total(ep, bank, h);
  std::vector<Eigen::Index> qu;
  for (std::size_t i = 0; i < ep.query_labels.size(); ++i)
    if (ep.query_labels[i] == Label::Unlabeled) qu.push_back(static_cast<Eigen::Index>(i));
  if (!qu.empty()) {
    Matrix<Scalar> xu(ep.x_query.rows(), static_cast<Eigen::Index>(qu.size()));
    for (std::size_t j = 0; j < qu.size(); ++j) xu.col(static_cast<Eigen::Index>(j)) = ep.x_query.col(qu[j]);
    const auto yhat = assign_pseudo_class(xu, bank, rule);
    out.unsup = detail::add_proxy_terms(ep.x_query, qu, yhat, Scalar(1) / Scalar(qu.size()), bank, h,
                                        out.d_x_query, out);
  }
  out.total = out.reg + out.seg_proxy_query + out.seg_proxy_support + out.unsup;
  return out;
}

}  // namespace travproxy

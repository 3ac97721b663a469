#pragma once

#include "travproxy/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace travproxy {

/// K unit-norm proxies per class plus per-proxy membership counters for the
/// current epoch. Proxy matrices are d x K, indexed by index_of(Class).
template <typename Scalar>
struct ProxyBank {
  std::array<Matrix<Scalar>, 2> proxies;
  std::array<std::vector<std::int64_t>, 2> membership;
  Scalar temperature = Scalar(0.05);

  int K() const { return static_cast<int>(proxies[0].cols()); }
  int dim() const { return static_cast<int>(proxies[0].rows()); }
  const Matrix<Scalar>& of(Class c) const { return proxies[index_of(c)]; }
  Matrix<Scalar>& of(Class c) { return proxies[index_of(c)]; }

  void normalize() {
    for (auto& p : proxies) p.colwise().normalize();
  }
  void reset_membership() {
    for (auto& m : membership) std::fill(m.begin(), m.end(), 0);
  }
  std::size_t empty_count() const {
    std::size_t n = 0;
    for (const auto& m : membership) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 0));
    return n;
  }
};

/// 2K proxies drawn i.i.d. standard normal, then L2-normalised.
template <typename Scalar = double>
ProxyBank<Scalar> init_bank(int K, int d, Rng& rng, Scalar temperature = Scalar(0.05)) {
  if (K < 1 || d < 2) throw ConfigError("init_bank: need K >= 1 and d >= 2");
  std::normal_distribution<double> g(0.0, 1.0);
  ProxyBank<Scalar> bank;
  bank.temperature = temperature;
  for (int c = 0; c < 2; ++c) {
    bank.proxies[c].resize(d, K);
    for (int k = 0; k < K; ++k) {
      do {
        for (int r = 0; r < d; ++r) bank.proxies[c](r, k) = Scalar(g(rng));
      } while (bank.proxies[c].col(k).norm() == Scalar(0));
    }
    bank.membership[c].assign(static_cast<std::size_t>(K), 0);
  }
  bank.normalize();
  return bank;
}

/// Soft multi-proxy similarity of a batch of embeddings to one class, with
/// the intermediates needed for its gradient.
template <typename Scalar>
struct ClassSimilarity {
  RowVector<Scalar> s;   // S_{i,c}, 1 x N
  Matrix<Scalar> cos;    // K x N, x_i^T p_c^k
  Matrix<Scalar> w;      // K x N, softmax_k(cos / T)
};

/// S_{i,c} = sum_k softmax_k(x_i^T p_c^k / T) x_i^T p_c^k for every column of x.
template <typename Scalar>
ClassSimilarity<Scalar> class_similarity(const Matrix<Scalar>& x, const ProxyBank<Scalar>& bank, Class c) {
  ClassSimilarity<Scalar> out;
  out.cos.noalias() = bank.of(c).transpose() * x;
  RowVector<Scalar> mx = out.cos.colwise().maxCoeff();
  out.w = ((out.cos.rowwise() - mx) / bank.temperature).array().exp();
  RowVector<Scalar> denom = out.w.colwise().sum();
  out.w = out.w.array().rowwise() / denom.array();
  out.s = (out.w.array() * out.cos.array()).colwise().sum();
  return out;
}

template <typename Scalar>
Scalar class_similarity(const Vector<Scalar>& x, const ProxyBank<Scalar>& bank, Class c) {
  return class_similarity(Matrix<Scalar>(x), bank, c).s(0);
}

/// Chain rule through S: given dL/dS (1 x N), accumulates dL/dx into `dx`
/// (d x N) and dL/dp into `dp` (d x K).
/// dS/dcos_k = w_k (1 + (cos_k - S) / T).
template <typename Scalar>
void similarity_backward(const ClassSimilarity<Scalar>& sim, const RowVector<Scalar>& d_s,
                         const Matrix<Scalar>& x, const Matrix<Scalar>& proxies, Scalar temperature,
                         Matrix<Scalar>& dx, Matrix<Scalar>& dp) {
  Matrix<Scalar> g =
      sim.w.array() * ((sim.cos.rowwise() - sim.s).array() / temperature + Scalar(1));
  g = g.array().rowwise() * d_s.array();
  dx.noalias() += proxies * g;
  dp.noalias() += x * g.transpose();
}

enum class PseudoLabelRule {
  SoftSimilarity,  // argmax_c S_{i,c}
  NearestProxy,    // class of the single most similar proxy
};

/// Pseudo-class per column of x. Ties go to Negative.
template <typename Scalar>
std::vector<Class> assign_pseudo_class(const Matrix<Scalar>& x, const ProxyBank<Scalar>& bank,
                                       PseudoLabelRule rule = PseudoLabelRule::SoftSimilarity) {
  std::vector<Class> out(static_cast<std::size_t>(x.cols()));
  if (rule == PseudoLabelRule::SoftSimilarity) {
    const auto sp = class_similarity(x, bank, Class::Positive).s;
    const auto sn = class_similarity(x, bank, Class::Negative).s;
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      out[static_cast<std::size_t>(i)] = sp(i) > sn(i) ? Class::Positive : Class::Negative;
  } else {
    const RowVector<Scalar> cp = (bank.of(Class::Positive).transpose() * x).colwise().maxCoeff();
    const RowVector<Scalar> cn = (bank.of(Class::Negative).transpose() * x).colwise().maxCoeff();
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      out[static_cast<std::size_t>(i)] = cp(i) > cn(i) ? Class::Positive : Class::Negative;
  }
  return out;
}

template <typename Scalar>
Class assign_pseudo_class(const Vector<Scalar>& x, const ProxyBank<Scalar>& bank,
                          PseudoLabelRule rule = PseudoLabelRule::SoftSimilarity) {
  return assign_pseudo_class(Matrix<Scalar>(x), bank, rule).front();
}

/// Adds one membership to the single nearest proxy (largest cosine over all
/// 2K proxies; ties to the Negative class, then the lower index) of every
/// column of x.
template <typename Scalar>
void membership_counts(ProxyBank<Scalar>& bank, const Matrix<Scalar>& x) {
  if (x.cols() == 0) return;
  const Matrix<Scalar> cn = bank.of(Class::Negative).transpose() * x;
  const Matrix<Scalar> cp = bank.of(Class::Positive).transpose() * x;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    Eigen::Index kn, kp;
    const Scalar bn = cn.col(i).maxCoeff(&kn);
    const Scalar bp = cp.col(i).maxCoeff(&kp);
    if (bp > bn) ++bank.membership[index_of(Class::Positive)][static_cast<std::size_t>(kp)];
    else ++bank.membership[index_of(Class::Negative)][static_cast<std::size_t>(kn)];
  }
}

/// Cluster centres of support embeddings, d x M per class, unit norm.
template <typename Scalar>
struct Prototypes {
  std::array<Matrix<Scalar>, 2> centers;
  const Matrix<Scalar>& of(Class c) const { return centers[index_of(c)]; }
  Matrix<Scalar>& of(Class c) { return centers[index_of(c)]; }
};

struct EmOptions {
  int max_iters = 100;
  double tol = 1e-9;      // relative objective change
  double variance = 0.05;  // fixed isotropic component variance
};

template <typename Scalar>
struct EmResult {
  Matrix<Scalar> centers;          // d x M, unit norm
  Matrix<Scalar> raw_centers;      // before the final re-normalisation
  std::vector<double> objective;   // one entry per E-step
};

/// Farthest-point seeding: column 0 first, then repeatedly the point farthest
/// from the chosen set (ties to the lower index).
template <typename Scalar>
Matrix<Scalar> farthest_point_seeds(const Matrix<Scalar>& x, int m) {
  const Eigen::Index n = x.cols();
  Matrix<Scalar> seeds(x.rows(), m);
  Vector<Scalar> dmin = Vector<Scalar>::Constant(n, std::numeric_limits<Scalar>::infinity());
  Eigen::Index next = 0;
  for (int j = 0; j < m; ++j) {
    seeds.col(j) = x.col(next);
    dmin = dmin.cwiseMin((x.colwise() - x.col(next)).colwise().squaredNorm().transpose());
    dmin.maxCoeff(&next);
  }
  return seeds;
}

/// Soft k-means: EM for a mixture of M spherical Gaussians with uniform
/// weights and fixed variance. The recorded objective is the mixture negative
/// log-likelihood up to an additive constant; EM never increases it.
template <typename Scalar>
EmResult<Scalar> em_fit(const Matrix<Scalar>& x, int m, const EmOptions& opt = {}) {
  const Eigen::Index n = x.cols();
  if (m < 1) throw std::invalid_argument("em: M must be >= 1");
  if (n < m) throw DataError("em: fewer points than prototypes");
  const Scalar inv2v = Scalar(1) / Scalar(2 * opt.variance);
  const Scalar log_m = std::log(Scalar(m));

  EmResult<Scalar> res;
  Matrix<Scalar> mu = farthest_point_seeds(x, m);
  Matrix<Scalar> logr(m, n);
  for (int it = 0; it <= opt.max_iters; ++it) {
    // E-step: log responsibilities and the objective at the current centres.
    const RowVector<Scalar> xsq = x.colwise().squaredNorm();
    const Vector<Scalar> musq = mu.colwise().squaredNorm().transpose();
    logr.noalias() = Scalar(2) * mu.transpose() * x;
    logr = ((-logr).rowwise() + xsq).colwise() + musq;
    logr = (-inv2v) * logr.cwiseMax(Scalar(0));
    const RowVector<Scalar> mx = logr.colwise().maxCoeff();
    const RowVector<Scalar> lse =
        mx.array() + (logr.rowwise() - mx).array().exp().colwise().sum().log();
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) obj -= static_cast<double>(lse(i) - log_m);
    res.objective.push_back(obj);
    if (it == opt.max_iters) break;
    if (it > 0) {
      const double prev = res.objective[res.objective.size() - 2];
      if (std::abs(prev - obj) <= opt.tol * std::max(1.0, std::abs(obj))) break;
    }
    logr = logr.rowwise() - lse;
    const Matrix<Scalar> r = logr.array().exp();

    // M-step.
    const Vector<Scalar> mass = r.rowwise().sum();
    const Matrix<Scalar> weighted = x * r.transpose();
    for (int j = 0; j < m; ++j)
      if (mass(j) > Scalar(0)) mu.col(j) = weighted.col(j) / mass(j);
  }
  res.raw_centers = mu;
  res.centers = mu;
  for (int j = 0; j < m; ++j) {
    const Scalar nrm = mu.col(j).norm();
    if (nrm > Scalar(0)) res.centers.col(j) /= nrm;
  }
  return res;
}

/// Prototypes for both classes from labelled support embeddings.
template <typename Scalar>
Prototypes<Scalar> em_prototypes(const Matrix<Scalar>& positives, const Matrix<Scalar>& negatives, int m,
                                 const EmOptions& opt = {}) {
  Prototypes<Scalar> p;
  p.of(Class::Positive) = em_fit(positives, m, opt).centers;
  p.of(Class::Negative) = em_fit(negatives, m, opt).centers;
  return p;
}

/// Replaces every empty proxy of a class with one of that class's
/// prototypes plus N(0, sigma^2) noise per coordinate, re-normalised.
/// Prototypes are dealt from a seeded shuffle, cycling when there are more
/// empty proxies than prototypes. Resets all counters. Returns the number of
/// replaced proxies.
template <typename Scalar>
std::size_t reinit_empty(ProxyBank<Scalar>& bank, const Prototypes<Scalar>& protos, double sigma, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::size_t replaced = 0;
  for (Class c : {Class::Negative, Class::Positive}) {
    auto& members = bank.membership[index_of(c)];
    std::vector<int> empty;
    for (std::size_t k = 0; k < members.size(); ++k)
      if (members[k] == 0) empty.push_back(static_cast<int>(k));
    if (empty.empty()) continue;
    const Matrix<Scalar>& mu = protos.of(c);
    if (mu.cols() == 0) throw std::invalid_argument("reinit_empty: no prototypes for a class with empty proxies");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(mu.cols()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < empty.size(); ++j) {
      Vector<Scalar> p = mu.col(order[j % order.size()]);
      if (sigma > 0.0) {
        for (Eigen::Index r = 0; r < p.size(); ++r) p(r) += Scalar(sigma * g(rng));
        p.normalize();
      }
      bank.of(c).col(empty[j]) = p;
      ++replaced;
    }
  }
  bank.reset_membership();
  return replaced;
}

}  // namespace travproxy

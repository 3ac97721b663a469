#pragma once

// Independent reference implementations written as plain loops over
// std::vector. They share no code with the library beyond the Label enum.

#include "travproxy/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // list of columns

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Soft multi-proxy similarity: sum_k w_k cos_k, w = softmax(cos / T).
inline double similarity(const Vec& x, const Mat& proxies, double T) {
  Vec c(proxies.size());
  double mx = -1e300;
  for (std::size_t k = 0; k < proxies.size(); ++k) {
    c[k] = dot(x, proxies[k]);
    mx = std::max(mx, c[k]);
  }
  double z = 0.0, s = 0.0;
  for (double ck : c) z += std::exp((ck - mx) / T);
  for (double ck : c) s += std::exp((ck - mx) / T) / z * ck;
  return s;
}

// -log(e^{l(Sy - d)} / (e^{l(Sy - d)} + e^{l So})), evaluated literally.
inline double softtriple(double s_same, double s_other, double lambda, double delta) {
  const double a = lambda * (s_same - delta), b = lambda * s_other;
  const double m = std::max(a, b);
  return -(a - m) + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Bank {
  Mat neg, pos;
  double T;
};

inline const Mat& of(const Bank& b, bool positive) { return positive ? b.pos : b.neg; }

inline double proxy_loss(const Vec& x, bool positive, const Bank& b, double lambda, double delta) {
  return softtriple(similarity(x, of(b, positive), b.T), similarity(x, of(b, !positive), b.T), lambda, delta);
}

inline bool pseudo_positive(const Vec& x, const Bank& b) {
  return similarity(x, b.pos, b.T) > similarity(x, b.neg, b.T);
}

struct Episode {
  Mat xq;
  Vec tq;
  std::vector<travproxy::Label> lq;
  Vec aq;
  Mat xs;
  std::vector<travproxy::Label> ls;
};

struct Parts {
  double reg = 0.0, seg_q = 0.0, seg_s = 0.0, unsup = 0.0;
  double total() const { return reg + seg_q + seg_s + unsup; }
};

// Traverse objective by direct summation.
inline Parts traverse(const Episode& e, const Bank& b, double lambda, double delta, bool with_unlabeled = true) {
  Parts p;
  std::size_t np = 0, nu = 0;
  for (std::size_t i = 0; i < e.lq.size(); ++i) {
    if (e.lq[i] == travproxy::Label::Positive) {
      ++np;
      p.reg += (e.tq[i] - e.aq[i]) * (e.tq[i] - e.aq[i]);
      p.seg_q += proxy_loss(e.xq[i], true, b, lambda, delta);
    } else if (e.lq[i] == travproxy::Label::Unlabeled) {
      ++nu;
      p.unsup += proxy_loss(e.xq[i], pseudo_positive(e.xq[i], b), b, lambda, delta);
    }
  }
  p.reg /= static_cast<double>(np);
  p.seg_q /= static_cast<double>(np);
  p.unsup = (with_unlabeled && nu > 0) ? p.unsup / static_cast<double>(nu) : 0.0;
  for (std::size_t i = 0; i < e.ls.size(); ++i)
    p.seg_s += proxy_loss(e.xs[i], e.ls[i] == travproxy::Label::Positive, b, lambda, delta);
  p.seg_s /= static_cast<double>(e.ls.size());
  return p;
}

inline double bce(double s, double y) {
  const double c = std::min(std::max(s, 1e-12), 1.0 - 1e-12);
  return -(y * std::log(c) + (1.0 - y) * std::log(1.0 - c));
}

// TN / (TN + sum_FP (1 - t) + FN), or FP weighted by t when `prose`.
// gt/pred: true = traversable.
inline double tpe(const std::vector<bool>& gt, const std::vector<bool>& pred, const Vec& t, bool prose = false) {
  double tn = 0, fn = 0, fpw = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i] && !pred[i]) tn += 1;
    if (gt[i] && !pred[i]) fn += 1;
    if (!gt[i] && pred[i]) fpw += prose ? t[i] : 1.0 - t[i];
  }
  const double den = tn + fpw + fn;
  return den == 0.0 ? 1.0 : tn / den;
}

// Dense layer y = act(W x + b), W given row-major as rows.
inline Vec layer(const Mat& rows, const Vec& b, const Vec& x, bool tanh_act) {
  Vec y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double s = b[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += rows[r][c] * x[c];
    y[r] = tanh_act ? std::tanh(s) : s;
  }
  return y;
}

// One-parameter Adam, step by step.
struct Adam1 {
  double m = 0, v = 0, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int t = 0;
  double step(double p, double g, double lr) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle

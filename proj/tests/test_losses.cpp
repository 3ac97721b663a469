#include "travproxy/losses.hpp"
#include "travproxy/trainer.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace travproxy;

namespace {

oracle::Vec vec_of(const Eigen::VectorXd& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

oracle::Mat cols_of(const Eigen::MatrixXd& m) {
  oracle::Mat out;
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(vec_of(m.col(j)));
  return out;
}

oracle::Bank oracle_bank(const ProxyBank<double>& b) {
  return {cols_of(b.of(Class::Negative)), cols_of(b.of(Class::Positive)), b.temperature};
}

oracle::Episode oracle_episode(const EpisodeOutputs<double>& ep) {
  oracle::Episode e;
  e.xq = cols_of(ep.x_query);
  e.tq.assign(ep.t_query.data(), ep.t_query.data() + ep.t_query.size());
  e.lq = ep.query_labels;
  e.aq = ep.query_targets;
  e.xs = cols_of(ep.x_support);
  e.ls = ep.support_labels;
  return e;
}

EpisodeOutputs<double> outputs_of(const gradcheck::Instance& in, TrainMode mode) {
  return episode_loss(in.model, in.bank, in.batch, mode, in.hyper, PseudoLabelRule::SoftSimilarity, false).outputs;
}

ProxyBank<double> axis_bank(int d) {
  ProxyBank<double> b;
  b.proxies[1] = Eigen::MatrixXd::Zero(d, 1);
  b.proxies[1](0, 0) = 1.0;
  b.proxies[0] = Eigen::MatrixXd::Zero(d, 1);
  b.proxies[0](0, 0) = -1.0;
  b.membership = {std::vector<std::int64_t>(1, 0), std::vector<std::int64_t>(1, 0)};
  return b;
}

EpisodeOutputs<double> one_point_episode(const Eigen::VectorXd& xq, double t, double a, const Eigen::VectorXd& xs,
                                         Label ls) {
  EpisodeOutputs<double> ep;
  ep.x_query = xq;
  ep.t_query = RowVector<double>::Constant(1, t);
  ep.s_query = RowVector<double>::Constant(1, 1.0);
  ep.query_labels = {Label::Positive};
  ep.query_targets = {a};
  ep.x_support = xs;
  ep.s_support = RowVector<double>::Constant(1, ls == Label::Positive ? 1.0 : 0.0);
  ep.support_labels = {ls};
  return ep;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("regression term") {
  CHECK(reg_loss(0.3, 0.3).value == 0.0);
  const auto r = reg_loss(0.5, 1.0);
  CHECK(r.value == 0.25);
  CHECK(r.grad == -1.0);
}

TEST_CASE("binary cross-entropy") {
  CHECK(std::abs(bce_seg_loss(0.5, 1.0).value - std::log(2.0)) < 1e-15);
  CHECK(std::abs(bce_seg_loss(0.5, 0.0).value - std::log(2.0)) < 1e-15);
  CHECK(bce_seg_loss(1.0, 1.0).value < 1e-11);
  CHECK(bce_seg_loss(0.0, 0.0).value < 1e-11);
  CHECK(std::isfinite(bce_seg_loss(0.0, 1.0).value));
  CHECK(bce_seg_loss(0.0, 1.0).grad == 0.0);
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 50; ++i) {
    const double s = u(rng), y = i % 2;
    CHECK(std::abs(bce_seg_loss(s, y).value - oracle::bce(s, y)) < 1e-14);
  }
}

TEST_CASE("SoftTriple scalar values") {
  LossHyper h;
  h.delta = 0.0;
  CHECK(std::abs(softtriple(0.3, 0.3, h).value - std::log(2.0)) < 1e-15);
  h.delta = 0.01;
  const double v = softtriple(1.0, -1.0, h).value;
  CHECK(v < 1e-17);
  CHECK(std::abs(v / std::exp(-39.8) - 1.0) < 1e-12);
  Rng rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    const double got = softtriple(a, b, h).value;
    CHECK(got > 0.0);
    CHECK(std::abs(got - oracle::softtriple(a, b, h.lambda, h.delta)) < 1e-12 * std::max(1.0, got));
    CHECK(softtriple(a + 0.01, b, h).value < got);
    CHECK(softtriple(a, b + 0.01, h).value > got);
  }
}

TEST_CASE("proxy losses on a single point") {
  LossHyper h;
  SUBCASE("symmetric similarity with no margin is log 2") {
    h.delta = 0.0;
    auto b = axis_bank(2);
    const Eigen::VectorXd x = Eigen::Vector2d(0.0, 1.0);
    CHECK(std::abs(proxy_seg_loss(x, Class::Positive, b, h).value - std::log(2.0)) < 1e-15);
    const auto [u, yhat] = unsup_loss(x, b, h);
    CHECK(yhat == Class::Negative);
    CHECK(std::abs(u.value - std::log(2.0)) < 1e-15);
  }
  SUBCASE("embedding on an isolated positive proxy") {
    ProxyBank<double> b;
    b.proxies[1] = Eigen::MatrixXd::Identity(3, 1);
    b.proxies[0] = Eigen::MatrixXd::Zero(3, 2);
    b.proxies[0](1, 0) = b.proxies[0](2, 1) = 1.0;
    const Eigen::VectorXd x = Eigen::Vector3d(1, 0, 0);
    const auto [u, yhat] = unsup_loss(x, b, h);
    CHECK(yhat == Class::Positive);
    CHECK(u.value < 1e-8);
  }
  SUBCASE("label swap symmetry of the unsupervised term") {
    h.delta = 0.0;
    Rng rng(4);
    auto b = init_bank<double>(3, 4, rng);
    auto swapped = b;
    std::swap(swapped.proxies[0], swapped.proxies[1]);
    for (int i = 0; i < 30; ++i) {
      Eigen::VectorXd x = Eigen::VectorXd::Random(4).normalized();
      CHECK(std::abs(unsup_loss(x, b, h).first.value - unsup_loss(x, swapped, h).first.value) < 1e-14);
    }
  }
  SUBCASE("matches the loop oracle") {
    Rng rng(5);
    const auto b = init_bank<double>(3, 5, rng);
    const auto ob = oracle_bank(b);
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd x = Eigen::VectorXd::Random(5).normalized();
      for (Class c : {Class::Positive, Class::Negative}) {
        const double got = proxy_seg_loss(x, c, b, h).value;
        CHECK(std::abs(got - oracle::proxy_loss(vec_of(x), c == Class::Positive, ob, h.lambda, h.delta)) < 1e-12);
      }
    }
  }
}

TEST_CASE("episode totals") {
  LossHyper h;
  SUBCASE("perfect supervised predictions are near zero") {
    const Eigen::VectorXd x = Eigen::Vector2d(1, 0);
    const auto ep = one_point_episode(x, 0.4, 0.4, x, Label::Negative);
    CHECK(supervised_total(ep).total < 1e-10);
  }
  SUBCASE("terms at their minima") {
    const auto b = axis_bank(2);
    auto ep = one_point_episode(Eigen::Vector2d(1, 0), 0.7, 0.7, Eigen::Vector2d(-1, 0), Label::Negative);
    CHECK(proxy_total(ep, b, h).total < 1e-8);
    ep.x_query.conservativeResize(2, 2);
    ep.x_query.col(1) = Eigen::Vector2d(-1, 0);
    ep.t_query.conservativeResize(2);
    ep.t_query(1) = 0.1;
    ep.query_labels.push_back(Label::Unlabeled);
    ep.query_targets.push_back(std::nan(""));
    const auto r = traverse_loss(ep, b, h);
    CHECK(r.unsup < 1e-8);
    CHECK(r.total < 1e-8);
  }
  SUBCASE("single point episode is the sum of its terms") {
    Rng rng(6);
    const auto b = init_bank<double>(2, 3, rng);
    const Eigen::VectorXd xq = Eigen::Vector3d(0.2, -0.5, 0.8).normalized();
    const Eigen::VectorXd xs = Eigen::Vector3d(-0.6, 0.1, 0.3).normalized();
    const auto ep = one_point_episode(xq, 0.3, 0.9, xs, Label::Negative);
    const double expect = proxy_seg_loss(xq, Class::Positive, b, h).value + reg_loss(0.3, 0.9).value +
                          proxy_seg_loss(xs, Class::Negative, b, h).value;
    CHECK(std::abs(proxy_total(ep, b, h).total - expect) < 1e-14);
    CHECK(std::abs(traverse_loss(ep, b, h).total - expect) < 1e-14);
  }
  SUBCASE("missing partitions are errors") {
    auto ep = one_point_episode(Eigen::Vector2d(1, 0), 0.5, 0.5, Eigen::Vector2d(1, 0), Label::Positive);
    auto no_pos = ep;
    no_pos.query_labels = {Label::Unlabeled};
    CHECK_THROWS_AS(supervised_total(no_pos), DataError);
    CHECK_THROWS_AS(traverse_loss(no_pos, axis_bank(2), h), DataError);
    auto no_support = ep;
    no_support.x_support.resize(2, 0);
    no_support.support_labels.clear();
    CHECK_THROWS_AS(proxy_total(no_support, axis_bank(2), h), DataError);
  }
}

TEST_CASE("random episodes match the scalar-sum oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = gradcheck::random_instance(rng, 4, 2, 8 + static_cast<std::size_t>(trial % 13));
    const auto ob = oracle_bank(in.bank);
    const auto ep = outputs_of(in, TrainMode::Full);
    const auto e = oracle_episode(ep);

    const auto full = traverse_loss(ep, in.bank, in.hyper);
    const auto parts = oracle::traverse(e, ob, in.hyper.lambda, in.hyper.delta);
    CHECK(std::abs(full.reg - parts.reg) < 1e-9);
    CHECK(std::abs(full.seg_proxy_query - parts.seg_q) < 1e-9);
    CHECK(std::abs(full.seg_proxy_support - parts.seg_s) < 1e-9);
    CHECK(std::abs(full.unsup - parts.unsup) < 1e-9);
    CHECK(std::abs(full.total - parts.total()) < 1e-9);
    CHECK(std::abs(full.total - (full.reg + full.seg() + full.unsup)) < 1e-12);

    const auto partial = proxy_total(ep, in.bank, in.hyper);
    CHECK(std::abs(partial.total - oracle::traverse(e, ob, in.hyper.lambda, in.hyper.delta, false).total()) < 1e-9);

    // baseline head: hand-summed BCE and regression
    const auto sup_ep = outputs_of(in, TrainMode::Supervised);
    double reg = 0, seg_q = 0, seg_s = 0;
    std::size_t np = 0;
    for (std::size_t i = 0; i < sup_ep.query_labels.size(); ++i)
      if (sup_ep.query_labels[i] == Label::Positive) {
        ++np;
        const double d = sup_ep.t_query(static_cast<Eigen::Index>(i)) - sup_ep.query_targets[i];
        reg += d * d;
        seg_q += oracle::bce(sup_ep.s_query(static_cast<Eigen::Index>(i)), 1.0);
      }
    for (std::size_t i = 0; i < sup_ep.support_labels.size(); ++i)
      seg_s += oracle::bce(sup_ep.s_support(static_cast<Eigen::Index>(i)),
                           sup_ep.support_labels[i] == Label::Positive ? 1.0 : 0.0);
    const double expect = (reg + seg_q) / static_cast<double>(np) + seg_s / static_cast<double>(sup_ep.support_labels.size());
    CHECK(std::abs(supervised_total(sup_ep).total - expect) < 1e-9);
  }
}

TEST_CASE("no unlabeled points reduces the full objective to the proxy objective") {
  Rng rng(9);
  auto in = gradcheck::random_instance(rng, 4, 2, 12);
  for (auto& l : in.batch.query_labels)
    if (l == Label::Unlabeled) l = Label::Positive;
  for (auto& t : in.batch.query_targets)
    if (std::isnan(t)) t = 0.5;
  const auto ep = outputs_of(in, TrainMode::Full);
  const auto a = traverse_loss(ep, in.bank, in.hyper);
  const auto b = proxy_total(ep, in.bank, in.hyper);
  CHECK(a.unsup == 0.0);
  CHECK(a.total == b.total);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(10);
  gradcheck::Stats all;
  for (int trial = 0; trial < 6; ++trial) {
    const int d = trial % 2 ? 8 : 4;
    const int K = 1 + trial % 3;
    const auto in = gradcheck::random_instance(rng, d, K, 10);
    for (TrainMode m : {TrainMode::Supervised, TrainMode::ProxyNoUnlabeled, TrainMode::Full}) {
      all.merge(gradcheck::check_parameters(in, m, 1e-4, 1e-5));
      all.merge(gradcheck::check_embeddings(in, m, 1e-4, 1e-5));
    }
    all.merge(gradcheck::check_point_losses(in, 1e-4, 1e-5));
  }
  all.merge(gradcheck::check_scalar_terms(rng, 1e-6, 1e-6));
  INFO("worst ", all.worst, " at ", all.worst_where);
  CHECK(all.checked > 1000);
  CHECK(all.failed == 0);
  CHECK(all.skipped * 100 < all.checked);
}

}  // TEST_SUITE

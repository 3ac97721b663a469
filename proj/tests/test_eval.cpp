#include "travproxy/eval.hpp"
#include "travproxy/trainer.hpp"

#include "oracles.hpp"
#include "tmpdir.hpp"

#include <doctest.h>

#include <sstream>

using namespace travproxy;

namespace {

constexpr Label P = Label::Positive, N = Label::Negative, U = Label::Unlabeled;

Prediction pred_of(std::vector<std::uint8_t> s, std::vector<double> t) {
  return make_prediction(std::move(s), Eigen::Map<Eigen::RowVectorXd>(t.data(), static_cast<Eigen::Index>(t.size())));
}

Scene eval_scene(std::vector<Label> labels) {
  Scene sc;
  sc.kind = SceneKind::Eval;
  sc.points = Points::Zero(3, static_cast<Eigen::Index>(labels.size()));
  for (Eigen::Index i = 0; i < sc.points.cols(); ++i) sc.points.col(i) = Vec3(double(i), 0.5 * double(i % 3), 0.0);
  sc.labels = std::move(labels);
  return sc;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("TPE worked values") {
  SUBCASE("eight true negatives and two false positives") {
    std::vector<Label> gt(10, N);
    std::vector<std::uint8_t> s(10, 0);
    std::vector<double> t(10, 0.2);
    s[8] = s[9] = 1;
    t[8] = 0.5;
    t[9] = 1.0;
    CHECK(std::abs(tpe(pred_of(s, t), gt) - 16.0 / 17.0) < 1e-15);
  }
  SUBCASE("perfect segmentation") {
    const std::vector<Label> gt{P, N, N, P};
    CHECK(tpe(pred_of({1, 0, 0, 1}, {0.1, 0.9, 0.3, 0.4}), gt) == 1.0);
  }
  SUBCASE("only misses") {
    const std::vector<Label> gt(5, P);
    CHECK(tpe(pred_of({0, 0, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5, 0.5}), gt) == 0.0);
  }
  SUBCASE("empty denominator") {
    const std::vector<Label> gt(3, P);
    CHECK(tpe(pred_of({1, 1, 1}, {0.1, 0.2, 0.3}), gt) == 1.0);
    CHECK(tpe(Confusion{}) == 1.0);
  }
  SUBCASE("prose weighting") {
    std::vector<Label> gt(10, N);
    std::vector<std::uint8_t> s(10, 0);
    std::vector<double> t(10, 0.2);
    s[8] = s[9] = 1;
    t[8] = 0.5;
    t[9] = 1.0;
    CHECK(std::abs(tpe(pred_of(s, t), gt, TpeWeighting::Prose) - 8.0 / 9.5) < 1e-15);
  }
  SUBCASE("unlabeled points are ignored") {
    const std::vector<Label> gt{N, U, N, U};
    CHECK(tpe(pred_of({0, 1, 1, 0}, {0.0, 0.0, 0.5, 0.0}), gt) == doctest::Approx(1.0 / 1.5).epsilon(1e-15));
    CHECK(confusion(pred_of({0, 1, 1, 0}, {0, 0, 0, 0}), gt).labelled() == 2);
  }
}

TEST_CASE("TPE matches the loop oracle and its limits") {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    std::vector<Label> gt(n);
    std::vector<bool> g(n), p(n);
    std::vector<std::uint8_t> s(n);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = u(rng) < 0.5;
      p[i] = u(rng) < 0.5;
      gt[i] = g[i] ? P : N;
      s[i] = p[i];
      t[i] = u(rng);
    }
    const auto pr = pred_of(s, t);
    const double a = tpe(pr, gt);
    CHECK(std::abs(a - oracle::tpe(g, p, t)) < 1e-12);
    CHECK(std::abs(tpe(pr, gt, TpeWeighting::Prose) - oracle::tpe(g, p, t, true)) < 1e-12);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    const auto c = confusion(pr, gt);
    const double all_one = (c.tn + c.fn) ? double(c.tn) / double(c.tn + c.fn) : 1.0;
    const double all_zero = (c.tn + c.fp + c.fn) ? double(c.tn) / double(c.tn + c.fp + c.fn) : 1.0;
    CHECK(std::abs(tpe(pred_of(s, std::vector<double>(n, 1.0)), gt) - all_one) < 1e-15);
    CHECK(std::abs(tpe(pred_of(s, std::vector<double>(n, 0.0)), gt) - all_zero) < 1e-15);
    // lowering the traversability of any false positive never raises TPE
    for (std::size_t i = 0; i < n; ++i)
      if (!g[i] && p[i]) {
        auto lower = t;
        lower[i] *= 0.5;
        CHECK(tpe(pred_of(s, lower), gt) <= a + 1e-15);
      }
  }
}

TEST_CASE("IoU") {
  SUBCASE("perfect") {
    const auto r = miou(std::vector<std::uint8_t>{1, 0, 1, 0}, std::vector<Label>{P, N, P, N});
    CHECK(r.miou == 1.0);
  }
  SUBCASE("everything predicted traversable on a half split") {
    const auto r = miou(std::vector<std::uint8_t>{1, 1, 1, 1}, std::vector<Label>{P, P, N, N});
    CHECK(*r.positive == 0.5);
    CHECK(*r.negative == 0.0);
    CHECK(r.miou == 0.25);
  }
  SUBCASE("complement") {
    const auto r = miou(std::vector<std::uint8_t>{0, 1, 0, 1, 1}, std::vector<Label>{P, N, P, N, N});
    CHECK(r.miou == 0.0);
  }
  SUBCASE("absent class is left out of the mean") {
    const auto r = miou(std::vector<std::uint8_t>{1, 0, 1}, std::vector<Label>{P, P, P});
    CHECK_FALSE(r.negative.has_value());
    CHECK(*r.positive == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.miou == *r.positive);
    const std::vector<Scene> gts{eval_scene({P, P, P})};
    const std::vector<Prediction> preds{pred_of({1, 0, 1}, {0.5, 0.5, 0.5})};
    const std::vector<std::string> names{"a"};
    CHECK_FALSE(evaluate_predictions(preds, gts, names).warnings.empty());
  }
}

TEST_CASE("inference decisions") {
  SUBCASE("similarity tie is not traversable") {
    auto model = EncoderModel<double>::zeros({4, 2, 3}, 8);
    model.b3 << 1.0, 1.0;
    ProxyBank<double> bank;
    bank.proxies[1] = Eigen::MatrixXd(Eigen::Vector2d(1, 0));
    bank.proxies[0] = Eigen::MatrixXd(Eigen::Vector2d(0, 1));
    bank.membership = {std::vector<std::int64_t>(1, 0), std::vector<std::int64_t>(1, 0)};
    const PointFeatures f = PointFeatures::Random(kFeatureDim, 5);
    const auto pr = infer_features(model, bank, f, TrainMode::Full);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      CHECK(pr.s[i] == 0);
      CHECK(pr.masked(static_cast<Eigen::Index>(i)) == 0.0);
      CHECK(pr.t(static_cast<Eigen::Index>(i)) == 0.5);
    }
  }
  SUBCASE("masked map is the product") {
    Rng rng(2);
    const auto model = EncoderModel<double>::random({8, 4, 4}, rng, 8);
    const auto bank = init_bank<double>(3, 4, rng);
    SyntheticSpec spec;
    spec.n_points = 800;
    spec.extent = 8.0;
    spec.seed = 5;
    const auto sc = generate_synthetic_scene(spec);
    for (TrainMode m : {TrainMode::Supervised, TrainMode::Full}) {
      const auto pr = infer_scene(model, bank, sc.eval, m);
      REQUIRE(pr.size() == sc.eval.size());
      for (Eigen::Index i = 0; i < pr.t.size(); ++i)
        CHECK(pr.masked(i) == pr.t(i) * double(pr.s[static_cast<std::size_t>(i)]));
    }
    const auto all_on = make_prediction(std::vector<std::uint8_t>(4, 1), Eigen::RowVector4d(0.1, 0.2, 0.3, 0.9));
    CHECK(all_on.masked == all_on.t);
  }
}

TEST_CASE("pooled reports") {
  const std::vector<Scene> gts{eval_scene({P, P, N, N, N}), eval_scene({P, N, N, P})};
  const std::vector<Prediction> preds{pred_of({1, 0, 1, 0, 0}, {0.9, 0.2, 0.4, 0.1, 0.1}),
                                      pred_of({1, 1, 0, 0}, {0.8, 0.7, 0.3, 0.2})};
  const std::vector<std::string> names{"a", "b"};
  const auto r = evaluate_predictions(preds, gts, names);
  CHECK(r.scenes.size() == 2);
  const auto c0 = confusion(preds[0], gts[0].labels), c1 = confusion(preds[1], gts[1].labels);
  CHECK(r.total.tp == c0.tp + c1.tp);
  CHECK(r.total.tn == c0.tn + c1.tn);
  CHECK(r.total.fp == c0.fp + c1.fp);
  CHECK(r.total.fn == c0.fn + c1.fn);
  CHECK(r.total.labelled() == 9);
  CHECK(r.total.tp == 2);
  CHECK(r.total.fp == 2);
  CHECK(std::abs(r.tpe - 3.0 / (3.0 + 0.6 + 0.3 + 2.0)) < 1e-15);

  const auto one = evaluate_predictions(std::span(preds).first(1), std::span(gts).first(1),
                                        std::span(names).first(1));
  CHECK(one.tpe == one.scenes[0].tpe);
  CHECK(one.iou.miou == one.scenes[0].iou.miou);

  const std::vector<Scene> twice{gts[0], gts[1], gts[0], gts[1]};
  const std::vector<Prediction> ptwice{preds[0], preds[1], preds[0], preds[1]};
  const std::vector<std::string> ntwice{"a", "b", "c", "d"};
  const auto d = evaluate_predictions(ptwice, twice, ntwice);
  CHECK(std::abs(d.tpe - r.tpe) < 1e-15);
  CHECK(std::abs(d.iou.miou - r.iou.miou) < 1e-15);

  std::ostringstream csv, text;
  write_report_csv(r, csv);
  write_report_text(r, text);
  CHECK(csv.str().find("TOTAL") != std::string::npos);
  CHECK(!text.str().empty());
}

TEST_CASE("checkpoint and prediction files round-trip") {
  TempDir dir("eval");
  Rng rng(3);
  Checkpoint ck{EncoderModel<double>::random({6, 4, 3}, rng, 8), init_bank<double>(2, 4, rng), TrainMode::ProxyNoReinit};
  ck.model.in_shift(3) = 0.1;
  save_checkpoint(ck, dir / "ck.txt");
  const Checkpoint back = load_checkpoint(dir / "ck.txt");
  std::ostringstream a, b;
  write_checkpoint(ck, a);
  write_checkpoint(back, b);
  CHECK(a.str() == b.str());
  CHECK(back.mode == TrainMode::ProxyNoReinit);
  CHECK(back.bank.proxies == ck.bank.proxies);
  CHECK(back.model.in_shift == ck.model.in_shift);

  const Scene sc = eval_scene({P, N, N});
  const auto pr = pred_of({1, 0, 1}, {0.123456789012345, 0.5, 1.0 / 3.0});
  save_predictions(sc.points, pr, dir / "p.txt");
  const auto [pts, got] = load_predictions(dir / "p.txt");
  CHECK(pts == sc.points);
  CHECK(got.s == pr.s);
  CHECK(got.t == pr.t);
  CHECK(got.masked == pr.masked);

  std::istringstream junk("travproxy-checkpoint 2\n");
  CHECK_THROWS(read_checkpoint(junk));
}

}  // TEST_SUITE

#include "travproxy/eval.hpp"

#include "travproxy/textio.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

namespace travproxy {

Prediction make_prediction(std::vector<std::uint8_t> s, Eigen::RowVectorXd t) {
  Prediction p;
  p.s = std::move(s);
  p.t = std::move(t);
  p.masked.resize(p.t.size());
  for (Eigen::Index i = 0; i < p.t.size(); ++i) p.masked(i) = p.s[static_cast<std::size_t>(i)] ? p.t(i) : 0.0;
  return p;
}

Prediction infer_features(const EncoderModel<double>& model, const ProxyBank<double>& bank,
                          const PointFeatures& feats, TrainMode mode) {
  const Eigen::MatrixXd x = encode(model, feats);
  auto [t, s_prob] = heads(model, x);
  std::vector<std::uint8_t> s(static_cast<std::size_t>(x.cols()));
  if (uses_proxies(mode)) {
    const auto sp = class_similarity(x, bank, Class::Positive).s;
    const auto sn = class_similarity(x, bank, Class::Negative).s;
    for (Eigen::Index i = 0; i < x.cols(); ++i) s[static_cast<std::size_t>(i)] = sp(i) > sn(i) ? 1 : 0;
  } else {
    for (Eigen::Index i = 0; i < x.cols(); ++i) s[static_cast<std::size_t>(i)] = s_prob(i) > 0.5 ? 1 : 0;
  }
  return make_prediction(std::move(s), t);
}

Prediction infer_scene(const EncoderModel<double>& model, const ProxyBank<double>& bank, const Scene& scene,
                       TrainMode mode) {
  return infer_features(model, bank, featurize(scene.points, static_cast<std::size_t>(model.k_enc)), mode);
}

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  fp_untrav += o.fp_untrav;
  fp_trav += o.fp_trav;
  return *this;
}

Confusion confusion(const Prediction& pred, std::span<const Label> gt) {
  if (gt.size() != pred.size()) throw DataError("confusion: prediction/ground-truth size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == Label::Unlabeled) continue;
    const bool truth = gt[i] == Label::Positive;
    const bool said = pred.s[i] != 0;
    if (truth && said) ++c.tp;
    else if (!truth && !said) ++c.tn;
    else if (!truth && said) {
      ++c.fp;
      const double t = pred.t(static_cast<Eigen::Index>(i));
      c.fp_untrav += 1.0 - t;
      c.fp_trav += t;
    } else ++c.fn;
  }
  return c;
}

double tpe(const Confusion& c, TpeWeighting w) {
  const double fp = w == TpeWeighting::AsPrinted ? c.fp_untrav : c.fp_trav;
  const double denom = static_cast<double>(c.tn) + fp + static_cast<double>(c.fn);
  if (denom == 0.0) return 1.0;
  return static_cast<double>(c.tn) / denom;
}

double tpe(const Prediction& pred, std::span<const Label> gt, TpeWeighting w) { return tpe(confusion(pred, gt), w); }

IouResult iou_from(const Confusion& c) {
  IouResult r;
  if (c.tp + c.fn > 0)
    r.positive = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
  // For the Negative class the roles of FP and FN swap.
  if (c.tn + c.fp > 0)
    r.negative = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fn + c.fp);
  int n = 0;
  double sum = 0.0;
  for (const auto& v : {r.positive, r.negative})
    if (v) { sum += *v; ++n; }
  if (n == 0) throw DataError("miou: no labelled points");
  r.miou = sum / n;
  return r;
}

IouResult miou(std::span<const std::uint8_t> s, std::span<const Label> gt) {
  Prediction p = make_prediction(std::vector<std::uint8_t>(s.begin(), s.end()),
                                 Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(s.size())));
  return iou_from(confusion(p, gt));
}

namespace {

void finish(EvalReport& r, TpeWeighting w) {
  r.tpe = tpe(r.total, w);
  r.iou = iou_from(r.total);
  if (!r.iou.positive) r.warnings.push_back("no Positive ground truth; IoU_P excluded from mIoU");
  if (!r.iou.negative) r.warnings.push_back("no Negative ground truth; IoU_N excluded from mIoU");
}

SceneReport scene_report(std::string name, const Prediction& pred, const Scene& gt, TpeWeighting w) {
  SceneReport row;
  row.name = std::move(name);
  row.counts = confusion(pred, gt.labels);
  row.tpe = tpe(row.counts, w);
  row.iou = iou_from(row.counts);
  return row;
}

}  // namespace

EvalReport evaluate_predictions(std::span<const Prediction> preds, std::span<const Scene> gts,
                                std::span<const std::string> names, TpeWeighting w) {
  if (preds.empty()) throw DataError("evaluate: no scenes");
  if (preds.size() != gts.size() || names.size() != gts.size())
    throw DataError("evaluate: prediction/ground-truth count mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.scenes.push_back(scene_report(names[i], preds[i], gts[i], w));
    r.total += r.scenes.back().counts;
  }
  finish(r, w);
  return r;
}

EvalReport evaluate_dataset(const EncoderModel<double>& model, const ProxyBank<double>& bank, TrainMode mode,
                            std::span<const EvalScene> scenes, TpeWeighting w) {
  if (scenes.empty()) throw DataError("evaluate: no scenes");
  EvalReport r;
  for (const auto& es : scenes) {
    const Prediction pred = es.feats ? infer_features(model, bank, *es.feats, mode)
                                     : infer_scene(model, bank, *es.scene, mode);
    r.scenes.push_back(scene_report(es.name, pred, *es.scene, w));
    r.total += r.scenes.back().counts;
  }
  finish(r, w);
  return r;
}

EvalReport evaluate_dataset(const Checkpoint& ck, std::span<const EvalScene> scenes, TpeWeighting w) {
  return evaluate_dataset(ck.model, ck.bank, ck.mode, scenes, w);
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); }

void csv_row(std::ostream& out, const std::string& name, const Confusion& c, double tpe_v, const IouResult& iou) {
  out << name << ',' << c.tp << ',' << c.tn << ',' << c.fp << ',' << c.fn << ',' << format_double(tpe_v) << ','
      << opt_str(iou.positive) << ',' << opt_str(iou.negative) << ',' << format_double(iou.miou) << '\n';
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

void write_report_csv(const EvalReport& r, std::ostream& out) {
  out << "scene,tp,tn,fp,fn,tpe,iou_positive,iou_negative,miou\n";
  for (const auto& s : r.scenes) csv_row(out, s.name, s.counts, s.tpe, s.iou);
  csv_row(out, "TOTAL", r.total, r.tpe, r.iou);
}

void write_report_text(const EvalReport& r, std::ostream& out) {
  out << "scenes evaluated: " << r.scenes.size() << '\n';
  out << "labelled points:  " << r.total.labelled() << " (TP " << r.total.tp << ", TN " << r.total.tn << ", FP "
      << r.total.fp << ", FN " << r.total.fn << ")\n";
  out << "TPE:   " << fixed4(r.tpe) << '\n';
  out << "IoU_P: " << (r.iou.positive ? fixed4(*r.iou.positive) : "n/a") << '\n';
  out << "IoU_N: " << (r.iou.negative ? fixed4(*r.iou.negative) : "n/a") << '\n';
  out << "mIoU:  " << fixed4(r.iou.miou) << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void save_predictions(const Points& points, const Prediction& pred, const std::filesystem::path& path) {
  if (static_cast<std::size_t>(points.cols()) != pred.size())
    throw DataError("save_predictions: point/prediction size mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions " + path.string());
  std::string line;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    line.clear();
    for (int a = 0; a < 3; ++a) {
      line += format_double(points(a, ii));
      line += ' ';
    }
    line += pred.s[i] ? '1' : '0';
    line += ' ';
    line += format_double(pred.t(ii));
    line += ' ';
    line += format_double(pred.masked(ii));
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::pair<Points, Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  std::vector<Vec3> pts;
  std::vector<std::uint8_t> s;
  std::vector<double> t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto f = split_ws(line);
    if (f.empty() || f[0].front() == '#') continue;
    auto bad = [&](const std::string& what) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + what);
    };
    if (f.size() != 6) bad("expected `x y z s t T`");
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      auto v = parse_double(f[a]);
      if (!v) bad("bad coordinate");
      p[a] = *v;
    }
    if (f[3] != "0" && f[3] != "1") bad("segmentation must be 0 or 1");
    auto tv = parse_double(f[4]);
    if (!tv || !(*tv >= 0.0 && *tv <= 1.0)) bad("traversability outside [0,1]");
    pts.push_back(p);
    s.push_back(f[3] == "1" ? 1 : 0);
    t.push_back(*tv);
  }
  Points points(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) points.col(static_cast<Eigen::Index>(i)) = pts[i];
  Eigen::RowVectorXd tt = Eigen::Map<Eigen::RowVectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
  return {points, make_prediction(std::move(s), tt)};
}

}  // namespace travproxy

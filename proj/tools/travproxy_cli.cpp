// Command-line entry point: gen-data | train | infer | eval | inspect-bank.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data or I/O error,
// 3 numeric failure (divergence, non-finite values).

#include "travproxy/checkpoint.hpp"
#include "travproxy/eval.hpp"
#include "travproxy/pointcloud.hpp"
#include "travproxy/textio.hpp"
#include "travproxy/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace travproxy;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw DataError("cannot create directory " + d.string() + ": " + ec.message());
}

std::vector<NamedScene> eval_scenes(const fs::path& dir, const std::vector<std::string>& files) {
  std::vector<NamedScene> out;
  for (const auto& f : files) out.push_back({fs::path(f).stem().string(), load_scene(f, SceneKind::Eval)});
  if (!dir.empty()) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("eval_", 0) == 0 && e.path().extension() == ".txt")
        paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) out.push_back({p.stem().string(), load_scene(p, SceneKind::Eval)});
  }
  if (out.empty()) throw DataError("no eval scenes given (use --data with eval_*.txt or --scene)");
  return out;
}

struct GenArgs {
  fs::path out;
  std::uint64_t seed = 1;
  std::size_t n_query = 20, n_support = 2, n_eval = 4;
  SyntheticSpec spec;
};

int run_gen(const GenArgs& a) {
  ensure_dir(a.out);
  const SyntheticDataset d = generate_dataset(a.spec, a.n_query, a.n_support, a.n_eval, a.seed);
  for (const auto& s : d.query) save_scene(s.scene, a.out / (s.name + ".txt"));
  for (const auto& s : d.support) save_scene(s.scene, a.out / (s.name + ".txt"));
  for (const auto& s : d.eval) save_scene(s.scene, a.out / (s.name + ".txt"));
  auto m = open_out(a.out / "dataset.txt");
  m << "seed=" << a.seed << "\nquery_scenes=" << a.n_query << "\nsupport_scenes=" << a.n_support
    << "\neval_scenes=" << a.n_eval << "\nextent=" << format_double(a.spec.extent)
    << "\nn_points=" << a.spec.n_points << "\ntrees=" << a.spec.trees << "\nrocks=" << a.spec.rocks
    << "\nbushes=" << a.spec.bushes << "\nlogs=" << a.spec.logs << "\nground_types=" << a.spec.ground_types
    << "\nroughness=" << format_double(a.spec.roughness) << "\npath_width=" << format_double(a.spec.path_width)
    << "\nsupport_label_fraction=" << format_double(a.spec.support_label_fraction) << '\n';
  std::cout << "wrote " << d.query.size() << " query, " << d.support.size() << " support, " << d.eval.size()
            << " eval scenes to " << a.out.string() << '\n';
  return kOk;
}

struct TrainArgs {
  fs::path config, data, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> mode;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.mode) cfg.mode = parse_mode(*a.mode);
  cfg.validate();

  const Dataset data = load_dataset(a.data, static_cast<std::size_t>(cfg.k_enc));
  ensure_dir(a.out);
  auto cfg_out = open_out(a.out / "config.txt");
  cfg_out << cfg.to_text();
  auto metrics = open_out(a.out / "metrics.csv");
  auto steps = open_out(a.out / "steps.csv");
  Trainer trainer(cfg, data);
  const auto stats = trainer.train(&metrics, &steps);
  save_checkpoint(trainer.checkpoint(), a.out / "checkpoint.txt");
  const auto& last = stats.back();
  std::cout << "trained " << stats.size() << " epochs, final loss " << format_double(last.loss_total);
  if (last.miou_eval) std::cout << ", eval mIoU " << format_double(*last.miou_eval) << ", TPE " << format_double(*last.tpe_eval);
  std::cout << '\n';
  return kOk;
}

struct InferArgs {
  fs::path checkpoint, data, out;
  std::vector<std::string> scenes;
};

int run_infer(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto scenes = eval_scenes(a.data, a.scenes);
  ensure_dir(a.out);
  for (const auto& s : scenes) {
    const Prediction p = infer_scene(ck.model, ck.bank, s.scene, ck.mode);
    save_predictions(s.scene.points, p, a.out / ("pred_" + s.name + ".txt"));
  }
  std::cout << "wrote " << scenes.size() << " prediction files to " << a.out.string() << '\n';
  return kOk;
}

struct EvalArgs {
  fs::path checkpoint, predictions, data, out;
  std::vector<std::string> scenes;
  bool tpe_prose = false;
};

int run_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.predictions.empty())
    throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
  const auto scenes = eval_scenes(a.data, a.scenes);
  const TpeWeighting w = a.tpe_prose ? TpeWeighting::Prose : TpeWeighting::AsPrinted;
  EvalReport report;
  if (!a.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    std::vector<EvalScene> es;
    for (const auto& s : scenes) es.push_back({s.name, &s.scene, nullptr});
    report = evaluate_dataset(ck, es, w);
  } else {
    std::vector<Prediction> preds;
    std::vector<Scene> gts;
    std::vector<std::string> names;
    for (const auto& s : scenes) {
      auto [pts, pred] = load_predictions(a.predictions / ("pred_" + s.name + ".txt"));
      if (pts.cols() != s.scene.points.cols() || pts != s.scene.points)
        throw DataError("prediction file for " + s.name + " does not match the scene's points");
      preds.push_back(std::move(pred));
      gts.push_back(s.scene);
      names.push_back(s.name);
    }
    report = evaluate_predictions(preds, gts, names, w);
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    auto csv = open_out(a.out / "report.csv");
    write_report_csv(report, csv);
    auto txt = open_out(a.out / "report.txt");
    write_report_text(report, txt);
  }
  write_report_text(report, std::cout);
  return kOk;
}

struct InspectArgs {
  fs::path checkpoint, data, out;
};

int run_inspect(const InspectArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (!a.data.empty()) {
    const Dataset d = load_dataset(a.data, static_cast<std::size_t>(ck.model.k_enc));
    for (const auto* group : {&d.query, &d.support, &d.eval})
      for (const auto& s : *group) membership_counts(ck.bank, encode(ck.model, s.feats));
  }
  ensure_dir(a.out);
  auto mem = open_out(a.out / "bank_membership.csv");
  mem << "class,proxy,members\n";
  for (Class c : {Class::Negative, Class::Positive})
    for (int k = 0; k < ck.bank.K(); ++k)
      mem << (c == Class::Positive ? "P" : "N") << ',' << k << ','
          << ck.bank.membership[index_of(c)][static_cast<std::size_t>(k)] << '\n';

  Eigen::MatrixXd all(ck.bank.dim(), 2 * ck.bank.K());
  all << ck.bank.of(Class::Negative), ck.bank.of(Class::Positive);
  const Eigen::MatrixXd cos = all.transpose() * all;
  auto cs = open_out(a.out / "bank_cosines.csv");
  for (Eigen::Index i = 0; i < cos.rows(); ++i) {
    for (Eigen::Index j = 0; j < cos.cols(); ++j) cs << (j ? "," : "") << format_double(cos(i, j));
    cs << '\n';
  }
  std::cout << "proxies per class: " << ck.bank.K() << ", empty: " << ck.bank.empty_count()
            << (a.data.empty() ? " (no data given, all counters zero)" : "") << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proxy-bank metric learning for self-supervised 3D traversability estimation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Write synthetic query/support/eval scene files");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--query", gen.n_query, "Number of query scenes")->capture_default_str();
  g->add_option("--support", gen.n_support, "Number of support scenes")->capture_default_str();
  g->add_option("--eval", gen.n_eval, "Number of eval scenes")->capture_default_str();
  g->add_option("--points", gen.spec.n_points, "Points per scene")->capture_default_str();
  g->add_option("--extent", gen.spec.extent, "Scene side length in meters")->capture_default_str();
  g->add_option("--trees", gen.spec.trees)->capture_default_str();
  g->add_option("--rocks", gen.spec.rocks)->capture_default_str();
  g->add_option("--bushes", gen.spec.bushes)->capture_default_str();
  g->add_option("--logs", gen.spec.logs)->capture_default_str();
  g->add_option("--ground-types", gen.spec.ground_types, "Distinct ground textures (1-4)")->capture_default_str();
  g->add_option("--roughness", gen.spec.roughness)->capture_default_str();
  g->add_option("--path-width", gen.spec.path_width)->capture_default_str();
  g->add_option("--support-fraction", gen.spec.support_label_fraction,
                "Fraction of evident support points that keep their label")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train encoder and proxy bank");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory for checkpoint and metrics")->required();
  t->add_option("--set", tr.overrides, "Override a config key (key=value), repeatable");
  t->add_option("--seed", tr.seed, "Override seed");
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--mode", tr.mode, "Supervised | ProxyNoUnlabeled | ProxyNoReinit | Full");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Write masked traversability predictions");
  i->add_option("--checkpoint", inf.checkpoint)->required();
  i->add_option("--data", inf.data, "Dataset directory (eval_*.txt)");
  i->add_option("--scene", inf.scenes, "Scene file, repeatable");
  i->add_option("--out", inf.out, "Output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute TPE and mIoU");
  e->add_option("--checkpoint", ev.checkpoint, "Evaluate a checkpoint directly");
  e->add_option("--predictions", ev.predictions, "Directory of pred_<scene>.txt files from infer");
  e->add_option("--data", ev.data, "Dataset directory with ground-truth eval_*.txt");
  e->add_option("--scene", ev.scenes, "Ground-truth scene file, repeatable");
  e->add_option("--out", ev.out, "Write report.csv and report.txt here");
  e->add_flag("--tpe-prose", ev.tpe_prose, "Weight false positives by t instead of 1 - t");

  InspectArgs ins;
  auto* b = app.add_subcommand("inspect-bank", "Dump proxy memberships and pairwise proxy cosines");
  b->add_option("--checkpoint", ins.checkpoint)->required();
  b->add_option("--data", ins.data, "Dataset directory used for membership counts");
  b->add_option("--out", ins.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*i) return run_infer(inf);
    if (*e) return run_eval(ev);
    if (*b) return run_inspect(ins);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}

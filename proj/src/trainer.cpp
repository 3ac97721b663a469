#include "travproxy/trainer.hpp"

#include "travproxy/textio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace travproxy {

// ---------------------------------------------------------------------------
// Configuration

namespace {

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  auto d = parse_double(v);
  if (!d || !std::isfinite(*d)) throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  return *d;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = parse_int<int>(key, value);
  else if (key == "lr") lr = parse_real(key, value);
  else if (key == "lr_decay") lr_decay = parse_real(key, value);
  else if (key == "proxy_warmup_epochs") proxy_warmup_epochs = parse_int<int>(key, value);
  else if (key == "K") K = parse_int<int>(key, value);
  else if (key == "lambda") lambda = parse_real(key, value);
  else if (key == "delta") delta = parse_real(key, value);
  else if (key == "temperature") temperature = parse_real(key, value);
  else if (key == "M") M = parse_int<int>(key, value);
  else if (key == "sigma_perturb") sigma_perturb = parse_real(key, value);
  else if (key == "n_query") n_query = parse_int<std::size_t>(key, value);
  else if (key == "n_support") n_support = parse_int<std::size_t>(key, value);
  else if (key == "mode") mode = parse_mode(value);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, value);
  else if (key == "k_enc") k_enc = parse_int<int>(key, value);
  else if (key == "dim") dim = parse_int<int>(key, value);
  else if (key == "hidden") hidden = parse_int<int>(key, value);
  else if (key == "head_hidden") head_hidden = parse_int<int>(key, value);
  else if (key == "em_iters") em_iters = parse_int<int>(key, value);
  else if (key == "em_tol") em_tol = parse_real(key, value);
  else if (key == "em_variance") em_variance = parse_real(key, value);
  else if (key == "pseudo_label") {
    if (value == "soft") pseudo_label = PseudoLabelRule::SoftSimilarity;
    else if (value == "nearest") pseudo_label = PseudoLabelRule::NearestProxy;
    else throw ConfigError("config: pseudo_label must be soft or nearest");
  } else if (key == "augment_z") augment_z = parse_bool(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("config: lr_decay must be in (0, 1]");
  if (proxy_warmup_epochs < 0 || proxy_warmup_epochs >= epochs)
    throw ConfigError("config: proxy_warmup_epochs must be in [0, epochs)");
  if (K < 1) throw ConfigError("config: K must be >= 1");
  if (M < 1) throw ConfigError("config: M must be >= 1");
  if (dim < 2) throw ConfigError("config: dim must be >= 2");
  if (hidden < 1 || head_hidden < 1) throw ConfigError("config: layer widths must be >= 1");
  if (k_enc < 1) throw ConfigError("config: k_enc must be >= 1");
  if (n_query < 1) throw ConfigError("config: n_query must be >= 1");
  if (n_support < 2 || n_support % 2 != 0) throw ConfigError("config: n_support must be even and >= 2");
  if (!(sigma_perturb >= 0.0)) throw ConfigError("config: sigma_perturb must be >= 0");
  if (em_iters < 1 || !(em_tol >= 0.0) || !(em_variance > 0.0)) throw ConfigError("config: bad EM settings");
  hyper().validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "epochs=" << epochs << '\n'
    << "lr=" << format_double(lr) << '\n'
    << "lr_decay=" << format_double(lr_decay) << '\n'
    << "proxy_warmup_epochs=" << proxy_warmup_epochs << '\n'
    << "K=" << K << '\n'
    << "lambda=" << format_double(lambda) << '\n'
    << "delta=" << format_double(delta) << '\n'
    << "temperature=" << format_double(temperature) << '\n'
    << "M=" << M << '\n'
    << "sigma_perturb=" << format_double(sigma_perturb) << '\n'
    << "n_query=" << n_query << '\n'
    << "n_support=" << n_support << '\n'
    << "mode=" << to_string(mode) << '\n'
    << "seed=" << seed << '\n'
    << "k_enc=" << k_enc << '\n'
    << "dim=" << dim << '\n'
    << "hidden=" << hidden << '\n'
    << "head_hidden=" << head_hidden << '\n'
    << "em_iters=" << em_iters << '\n'
    << "em_tol=" << format_double(em_tol) << '\n'
    << "em_variance=" << format_double(em_variance) << '\n'
    << "pseudo_label=" << (pseudo_label == PseudoLabelRule::SoftSimilarity ? "soft" : "nearest") << '\n'
    << "augment_z=" << (augment_z ? 1 : 0) << '\n';
  return o.str();
}

TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    base.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<const ParamSlot> slots, AdamState& st, double lr) {
  for (const auto& s : slots)
    if (!Eigen::Map<const Eigen::VectorXd>(s.grad, s.size).allFinite())
      throw NumericError("adam_step: non-finite gradient at optimizer step " + std::to_string(st.step + 1));
  if (st.m.size() != slots.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& s : slots) {
      st.m.push_back(Eigen::VectorXd::Zero(s.size));
      st.v.push_back(Eigen::VectorXd::Zero(s.size));
    }
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Eigen::Map<Eigen::VectorXd> p(slots[i].value, slots[i].size);
    Eigen::Map<const Eigen::VectorXd> g(slots[i].grad, slots[i].size);
    if (st.m[i].size() != g.size()) throw std::invalid_argument("adam_step: slot shape changed");
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g.cwiseAbs2();
    p.array() -= lr * (st.m[i].array() / bc1) / ((st.v[i].array() / bc2).sqrt() + st.eps);
  }
}

std::vector<ParamSlot> param_slots(EncoderModel<double>& model, const EncoderModel<double>& grads) {
  std::vector<double*> values;
  std::vector<Eigen::Index> sizes;
  model.for_each_weight([&](std::string_view, auto& p) {
    values.push_back(p.data());
    sizes.push_back(p.size());
  });
  std::vector<ParamSlot> slots;
  std::size_t i = 0;
  grads.for_each_weight([&](std::string_view, const auto& g) {
    if (g.size() != sizes[i]) throw std::invalid_argument("param_slots: gradient shape mismatch");
    slots.push_back({values[i], g.data(), sizes[i]});
    ++i;
  });
  return slots;
}

std::vector<ParamSlot> param_slots(ProxyBank<double>& bank, const std::array<Eigen::MatrixXd, 2>& grads) {
  std::vector<ParamSlot> slots;
  for (int c = 0; c < 2; ++c) {
    if (grads[c].size() != bank.proxies[c].size()) throw std::invalid_argument("param_slots: proxy shape mismatch");
    slots.push_back({bank.proxies[c].data(), grads[c].data(), bank.proxies[c].size()});
  }
  return slots;
}

// ---------------------------------------------------------------------------
// Data

namespace {

std::vector<NamedScene> load_kind(const std::filesystem::path& dir, const std::string& prefix,
                                                     SceneKind kind) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind(prefix, 0) == 0 && e.path().extension() == ".txt")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedScene> out;
  for (const auto& f : files) out.push_back({f.stem().string(), load_scene(f, kind)});
  return out;
}

std::vector<PreparedScene> prepare(std::vector<NamedScene> scenes, std::size_t k_enc) {
  std::vector<PreparedScene> out;
  for (auto& [name, scene] : scenes) {
    scene.validate();
    PointFeatures f = featurize(scene.points, k_enc);
    out.push_back({std::move(name), std::move(scene), std::move(f)});
  }
  return out;
}

}  // namespace

Dataset prepare_dataset(std::vector<NamedScene> query,
                        std::vector<NamedScene> support,
                        std::vector<NamedScene> eval, std::size_t k_enc) {
  Dataset d;
  d.query = prepare(std::move(query), k_enc);
  d.support = prepare(std::move(support), k_enc);
  d.eval = prepare(std::move(eval), k_enc);
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir, std::size_t k_enc) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  auto q = load_kind(dir, "query_", SceneKind::Query);
  auto s = load_kind(dir, "support_", SceneKind::Support);
  auto e = load_kind(dir, "eval_", SceneKind::Eval);
  if (q.empty()) throw DataError("no query_*.txt scenes in " + dir.string());
  if (s.empty()) throw DataError("no support_*.txt scenes in " + dir.string());
  return prepare_dataset(std::move(q), std::move(s), std::move(e), k_enc);
}

// ---------------------------------------------------------------------------
// Training

namespace {

Eigen::MatrixXd gather(const PointFeatures& f, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(f.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = f.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, const Dataset& data) : cfg_(std::move(cfg)), data_(data), rng_(cfg_.seed) {
  cfg_.validate();
  if (data_.query.empty() || data_.support.empty()) throw DataError("trainer: need query and support scenes");
  for (const auto& s : data_.support)
    if (s.scene.count(Label::Positive) == 0 || s.scene.count(Label::Negative) == 0)
      throw DataError("trainer: support scene " + s.name + " lacks one class");
  model_ = EncoderModel<double>::random(cfg_.shape(), rng_, cfg_.k_enc);
  Eigen::Index total = 0;
  for (const auto& q : data_.query) total += q.feats.cols();
  PointFeatures all(kFeatureDim, total);
  Eigen::Index at = 0;
  for (const auto& q : data_.query) {
    all.middleCols(at, q.feats.cols()) = q.feats;
    at += q.feats.cols();
  }
  model_.fit_standardization(all);
  bank_ = init_bank<double>(cfg_.K, cfg_.dim, rng_, cfg_.temperature);
}

namespace {

constexpr int kEpisodeRedraws = 64;

bool has_positive(const Scene& s, const Episode& ep) {
  return std::any_of(ep.query_indices.begin(), ep.query_indices.end(),
                     [&](std::size_t i) { return s.labels[i] == Label::Positive; });
}

}  // namespace

EpisodeResult episode_loss(const EncoderModel<double>& model, const ProxyBank<double>& bank,
                           const EpisodeBatch& batch, TrainMode mode, const LossHyper& hyper,
                           PseudoLabelRule rule, bool model_grads) {
  EpisodeResult r;
  EpisodeOutputs<double>& out = r.outputs;
  ForwardCache<double> cq, cs;
  out.x_query = encode(model, batch.query_feats, &cq);
  std::tie(out.t_query, out.s_query) = heads(model, out.x_query, &cq);
  out.x_support = encode(model, batch.support_feats, &cs);
  std::tie(std::ignore, out.s_support) = heads(model, out.x_support, &cs);
  out.query_labels = batch.query_labels;
  out.query_targets = batch.query_targets;
  out.support_labels = batch.support_labels;

  switch (mode) {
    case TrainMode::Supervised: r.loss = supervised_total(out); break;
    case TrainMode::ProxyNoUnlabeled: r.loss = proxy_total(out, bank, hyper); break;
    case TrainMode::ProxyNoReinit:
    case TrainMode::Full: r.loss = traverse_loss(out, bank, hyper, rule); break;
  }
  if (model_grads) {
    r.model_grads = model.zeros_like();
    const bool sup = mode == TrainMode::Supervised;
    const LossBreakdown<double>& l = r.loss;
    backward(model, cq, {l.d_x_query, l.d_t_query, sup ? l.d_s_query : Eigen::RowVectorXd{}}, r.model_grads);
    backward(model, cs, {l.d_x_support, {}, sup ? l.d_s_support : Eigen::RowVectorXd{}}, r.model_grads);
  }
  return r;
}

double Trainer::lr_at(int epoch) const { return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch)); }

bool Trainer::warming_up(int epoch) const { return uses_proxies(cfg_.mode) && epoch < cfg_.proxy_warmup_epochs; }

Trainer::StepLoss Trainer::step(const PreparedScene& query, const PreparedScene& support, int epoch) {
  Episode ep = sample_episode(query.scene, support.scene, cfg_.n_query, cfg_.n_support, rng_);
  for (int tries = 1; !has_positive(query.scene, ep) && tries < kEpisodeRedraws; ++tries)
    ep = sample_episode(query.scene, support.scene, cfg_.n_query, cfg_.n_support, rng_);
  if (!has_positive(query.scene, ep))
    throw DataError("query scene " + query.name + ": no episode with positive points after " +
                    std::to_string(kEpisodeRedraws) + " draws");

  Eigen::MatrixXd fq;
  if (cfg_.augment_z) {
    // Perturb the z of 10% of the positive query points and re-featurize the patch.
    Points patch(3, static_cast<Eigen::Index>(ep.query_indices.size()));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> dz(0.0, 0.02);
    for (std::size_t j = 0; j < ep.query_indices.size(); ++j) {
      const std::size_t i = ep.query_indices[j];
      Vec3 p = query.scene.points.col(static_cast<Eigen::Index>(i));
      const double draw = u01(rng_);
      const double noise = dz(rng_);
      if (query.scene.labels[i] == Label::Positive && draw < 0.1) p.z() += noise;
      patch.col(static_cast<Eigen::Index>(j)) = p;
    }
    fq = featurize(patch, std::min<std::size_t>(static_cast<std::size_t>(cfg_.k_enc), ep.query_indices.size()));
  } else {
    fq = gather(query.feats, ep.query_indices);
  }
  EpisodeBatch batch;
  batch.query_feats = std::move(fq);
  batch.support_feats = gather(support.feats, ep.support_indices);
  for (std::size_t i : ep.query_indices) {
    batch.query_labels.push_back(query.scene.labels[i]);
    batch.query_targets.push_back(query.scene.has_trav(i) ? query.scene.trav[i]
                                                          : std::numeric_limits<double>::quiet_NaN());
  }
  for (std::size_t i : ep.support_indices) batch.support_labels.push_back(support.scene.labels[i]);

  const bool frozen = warming_up(epoch);
  const EpisodeResult r = episode_loss(model_, bank_, batch, cfg_.mode, cfg_.hyper(), cfg_.pseudo_label, !frozen);
  const LossBreakdown<double>& loss = r.loss;
  ++step_count_;
  if (!std::isfinite(loss.total))
    throw NumericError("training diverged: non-finite loss at step " + std::to_string(step_count_) + " (epoch " +
                       std::to_string(epoch) + ")");

  if (uses_proxies(cfg_.mode)) {
    membership_counts(bank_, r.outputs.x_query);
    membership_counts(bank_, r.outputs.x_support);
  }

  const double lr = lr_at(epoch);
  if (!frozen) adam_step(param_slots(model_, r.model_grads), adam_model_, lr);
  if (uses_proxies(cfg_.mode)) {
    adam_step(param_slots(bank_, loss.d_proxies), adam_bank_, lr);
    bank_.normalize();
  }
  return {loss.reg, loss.seg(), loss.unsup, loss.total};
}

void Trainer::reinitialize() {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& s : data_.support) {
    n_pos += s.scene.count(Label::Positive);
    n_neg += s.scene.count(Label::Negative);
  }
  Eigen::MatrixXd fpos(kFeatureDim, static_cast<Eigen::Index>(n_pos));
  Eigen::MatrixXd fneg(kFeatureDim, static_cast<Eigen::Index>(n_neg));
  Eigen::Index ip = 0, in = 0;
  for (const auto& s : data_.support)
    for (std::size_t i = 0; i < s.scene.size(); ++i) {
      const auto col = s.feats.col(static_cast<Eigen::Index>(i));
      if (s.scene.labels[i] == Label::Positive) fpos.col(ip++) = col;
      else if (s.scene.labels[i] == Label::Negative) fneg.col(in++) = col;
    }
  const Eigen::MatrixXd xpos = encode(model_, fpos);
  const Eigen::MatrixXd xneg = encode(model_, fneg);
  Prototypes<double> protos;
  const EmOptions opt = cfg_.em();
  protos.of(Class::Positive) = em_fit(xpos, std::min<int>(cfg_.M, static_cast<int>(n_pos)), opt).centers;
  protos.of(Class::Negative) = em_fit(xneg, std::min<int>(cfg_.M, static_cast<int>(n_neg)), opt).centers;
  ++em_calls_;
  reinit_empty(bank_, protos, cfg_.sigma_perturb, rng_);
}

EpochStats Trainer::train_epoch(int epoch) {
  EpochStats st;
  st.epoch = epoch;
  st.lr = lr_at(epoch);
  bank_.reset_membership();
  for (const auto& q : data_.query) {
    std::uniform_int_distribution<std::size_t> pick(0, data_.support.size() - 1);
    const auto& s = data_.support[pick(rng_)];
    const StepLoss l = step(q, s, epoch);
    steps_.push_back({step_count_, epoch, l.reg, l.seg, l.unsup, l.total});
    st.loss_total += l.total;
    st.loss_reg += l.reg;
    st.loss_seg += l.seg;
    st.loss_unsup += l.unsup;
  }
  const double n = static_cast<double>(data_.query.size());
  st.loss_total /= n;
  st.loss_reg /= n;
  st.loss_seg /= n;
  st.loss_unsup /= n;

  if (uses_proxies(cfg_.mode)) {
    st.empty_proxies = bank_.empty_count();
    const bool may_reinit = cfg_.mode == TrainMode::Full || cfg_.mode == TrainMode::ProxyNoUnlabeled;
    if (st.empty_proxies > 0 && may_reinit) {
      reinitialize();
      st.reinitialized = true;
    }
  }
  return st;
}

std::vector<EpochStats> Trainer::train(std::ostream* metrics_csv, std::ostream* steps_csv) {
  if (metrics_csv) *metrics_csv << kMetricsHeader << '\n';
  if (steps_csv) *steps_csv << kStepsHeader << '\n';
  std::vector<EvalScene> eval;
  for (const auto& e : data_.eval) eval.push_back({e.name, &e.scene, &e.feats});

  std::vector<EpochStats> all;
  for (int e = 0; e < cfg_.epochs; ++e) {
    const std::size_t first_step = steps_.size();
    EpochStats st = train_epoch(e);
    if (!eval.empty()) {
      const EvalReport r = evaluate_dataset(model_, bank_, cfg_.mode, eval);
      st.miou_eval = r.iou.miou;
      st.tpe_eval = r.tpe;
    }
    if (metrics_csv) write_metrics_row(*metrics_csv, st);
    if (steps_csv)
      for (std::size_t i = first_step; i < steps_.size(); ++i) {
        const auto& s = steps_[i];
        *steps_csv << s.step << ',' << s.epoch << ',' << format_double(s.reg) << ',' << format_double(s.seg) << ','
                   << format_double(s.unsup) << ',' << format_double(s.total) << '\n';
      }
    all.push_back(st);
  }
  return all;
}

void write_metrics_row(std::ostream& out, const EpochStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << s.epoch << ',' << format_double(s.lr) << ',' << format_double(s.loss_total) << ','
      << format_double(s.loss_reg) << ',' << format_double(s.loss_seg) << ',' << format_double(s.loss_unsup) << ','
      << s.empty_proxies << ',' << opt(s.miou_eval) << ',' << opt(s.tpe_eval) << '\n';
}

}  // namespace travproxy

#pragma once

#include "travproxy/checkpoint.hpp"
#include "travproxy/encoder.hpp"
#include "travproxy/eval.hpp"
#include "travproxy/losses.hpp"
#include "travproxy/pointcloud.hpp"
#include "travproxy/proxybank.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace travproxy {

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-4;
  double lr_decay = 0.95;
  int proxy_warmup_epochs = 5;
  int K = 128;
  double lambda = 20.0;
  double delta = 0.01;
  double temperature = 0.05;
  int M = 16;
  double sigma_perturb = 0.01;
  std::size_t n_query = 2048;
  std::size_t n_support = 512;
  TrainMode mode = TrainMode::Full;
  std::uint64_t seed = 1;

  int k_enc = 8;
  int dim = 16;
  int hidden = 64;
  int head_hidden = 16;
  int em_iters = 100;
  double em_tol = 1e-9;
  double em_variance = 0.05;
  PseudoLabelRule pseudo_label = PseudoLabelRule::SoftSimilarity;
  bool augment_z = false;

  /// Throws ConfigError.
  void validate() const;
  /// Sets one field from its config-file key. Throws ConfigError on unknown
  /// keys or malformed values.
  void set(const std::string& key, const std::string& value);
  /// key=value text, one per line, in a fixed order.
  std::string to_text() const;

  LossHyper hyper() const { return {lambda, delta, temperature}; }
  EncoderShape shape() const { return {hidden, dim, head_hidden}; }
  EmOptions em() const { return {em_iters, em_tol, em_variance}; }
};

/// Parses `key=value` lines; `#` starts a comment. Unknown keys are rejected.
TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Adam with bias correction, one instance per parameter group.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Eigen::VectorXd> m, v;
};

/// A flat view of one parameter tensor and its gradient.
struct ParamSlot {
  double* value;
  const double* grad;
  Eigen::Index size;
};

/// One Adam update over all slots. Non-finite gradients throw NumericError
/// before any parameter changes.
void adam_step(std::span<const ParamSlot> slots, AdamState& state, double lr);

std::vector<ParamSlot> param_slots(EncoderModel<double>& model, const EncoderModel<double>& grads);
std::vector<ParamSlot> param_slots(ProxyBank<double>& bank, const std::array<Eigen::MatrixXd, 2>& grads);

/// Raw features and labels of one sampled episode.
struct EpisodeBatch {
  Eigen::MatrixXd query_feats, support_feats;
  std::vector<Label> query_labels;
  std::vector<double> query_targets;  // NaN where absent
  std::vector<Label> support_labels;
};

struct EpisodeResult {
  EpisodeOutputs<double> outputs;
  LossBreakdown<double> loss;
  EncoderModel<double> model_grads;  // empty tensors unless requested
};

/// Forward pass, the mode's objective, and (optionally) encoder and head
/// parameter gradients for one episode. Proxy gradients are in loss.d_proxies.
EpisodeResult episode_loss(const EncoderModel<double>& model, const ProxyBank<double>& bank,
                           const EpisodeBatch& batch, TrainMode mode, const LossHyper& hyper,
                           PseudoLabelRule rule = PseudoLabelRule::SoftSimilarity, bool model_grads = true);

/// A scene with its encoder features computed once.
struct PreparedScene {
  std::string name;
  Scene scene;
  PointFeatures feats;
};

struct Dataset {
  std::vector<PreparedScene> query, support, eval;
};

/// Reads query_*.txt, support_*.txt and eval_*.txt (sorted by name) from a
/// directory. Eval scenes are optional.
Dataset load_dataset(const std::filesystem::path& dir, std::size_t k_enc);
Dataset prepare_dataset(std::vector<NamedScene> query,
                        std::vector<NamedScene> support,
                        std::vector<NamedScene> eval, std::size_t k_enc);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0, loss_reg = 0.0, loss_seg = 0.0, loss_unsup = 0.0;
  std::size_t empty_proxies = 0;  // before re-initialisation
  bool reinitialized = false;
  std::optional<double> miou_eval, tpe_eval;
};

struct StepRecord {
  std::int64_t step;
  int epoch;
  double reg, seg, unsup, total;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data);

  /// One pass over the query scenes (one episode each), then membership
  /// accounting and, where the mode allows, empty-proxy re-initialisation.
  EpochStats train_epoch(int epoch);

  /// All epochs; rows go to the optional CSV streams as they complete.
  std::vector<EpochStats> train(std::ostream* metrics_csv = nullptr, std::ostream* steps_csv = nullptr);

  double lr_at(int epoch) const;
  bool warming_up(int epoch) const;

  const TrainConfig& config() const { return cfg_; }
  const EncoderModel<double>& model() const { return model_; }
  const ProxyBank<double>& bank() const { return bank_; }
  ProxyBank<double>& bank() { return bank_; }
  Checkpoint checkpoint() const { return {model_, bank_, cfg_.mode}; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  std::int64_t em_calls() const { return em_calls_; }

 private:
  struct StepLoss {
    double reg, seg, unsup, total;
  };
  StepLoss step(const PreparedScene& query, const PreparedScene& support, int epoch);
  void reinitialize();

  TrainConfig cfg_;
  const Dataset& data_;
  Rng rng_;
  EncoderModel<double> model_;
  ProxyBank<double> bank_;
  AdamState adam_model_, adam_bank_;
  std::int64_t step_count_ = 0;
  std::int64_t em_calls_ = 0;
  std::vector<StepRecord> steps_;
};

inline constexpr const char* kMetricsHeader =
    "epoch,lr,loss_total,loss_reg,loss_seg,loss_unsup,empty_proxies_before_reinit,miou_eval,tpe_eval";
inline constexpr const char* kStepsHeader = "step,epoch,reg,seg,unsup,total";

void write_metrics_row(std::ostream& out, const EpochStats& s);

}  // namespace travproxy

#pragma once

#include "travproxy/checkpoint.hpp"
#include "travproxy/encoder.hpp"
#include "travproxy/pointcloud.hpp"
#include "travproxy/proxybank.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace travproxy {

/// Per-point inference output. masked = t * s.
struct Prediction {
  std::vector<std::uint8_t> s;
  Eigen::RowVectorXd t;
  Eigen::RowVectorXd masked;

  std::size_t size() const { return s.size(); }
};

/// Builds a prediction from a segmentation decision and a traversability map.
Prediction make_prediction(std::vector<std::uint8_t> s, Eigen::RowVectorXd t);

/// s = 1 iff S_P > S_N (proxy modes) or g(x) > 0.5 (supervised mode).
Prediction infer_features(const EncoderModel<double>& model, const ProxyBank<double>& bank,
                          const PointFeatures& feats, TrainMode mode);
Prediction infer_scene(const EncoderModel<double>& model, const ProxyBank<double>& bank, const Scene& scene,
                       TrainMode mode);

/// Confusion counts for the traversable (Positive) class over labelled points.
struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double fp_untrav = 0.0;  // sum over FP of (1 - t)
  double fp_trav = 0.0;    // sum over FP of t

  std::size_t labelled() const { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o);
};

Confusion confusion(const Prediction& pred, std::span<const Label> gt);

enum class TpeWeighting {
  AsPrinted,  // FP weighted by (1 - t)
  Prose,      // FP weighted by t
};

/// TN / (TN + sum_FP w_i + FN); 1 when the denominator is zero.
double tpe(const Confusion& c, TpeWeighting w = TpeWeighting::AsPrinted);
double tpe(const Prediction& pred, std::span<const Label> gt, TpeWeighting w = TpeWeighting::AsPrinted);

/// Per-class IoU = TP / (TP + FP + FN). A class absent from the ground truth
/// has no IoU and is left out of the mean.
struct IouResult {
  std::optional<double> positive, negative;
  double miou = 0.0;
};

IouResult iou_from(const Confusion& c);
IouResult miou(std::span<const std::uint8_t> s, std::span<const Label> gt);

struct SceneReport {
  std::string name;
  Confusion counts;
  double tpe = 0.0;
  IouResult iou;
};

struct EvalReport {
  std::vector<SceneReport> scenes;
  Confusion total;
  double tpe = 0.0;
  IouResult iou;
  std::vector<std::string> warnings;
};

struct EvalScene {
  std::string name;
  const Scene* scene = nullptr;
  const PointFeatures* feats = nullptr;  // optional precomputed features
};

/// Metrics from counts pooled over all scenes (micro-average).
EvalReport evaluate_predictions(std::span<const Prediction> preds, std::span<const Scene> gts,
                                std::span<const std::string> names, TpeWeighting w = TpeWeighting::AsPrinted);
EvalReport evaluate_dataset(const EncoderModel<double>& model, const ProxyBank<double>& bank, TrainMode mode,
                            std::span<const EvalScene> scenes, TpeWeighting w = TpeWeighting::AsPrinted);
EvalReport evaluate_dataset(const Checkpoint& ck, std::span<const EvalScene> scenes,
                            TpeWeighting w = TpeWeighting::AsPrinted);

/// One row per scene plus a TOTAL row.
void write_report_csv(const EvalReport& r, std::ostream& out);
void write_report_text(const EvalReport& r, std::ostream& out);

/// `x y z s t T` per line.
void save_predictions(const Points& points, const Prediction& pred, const std::filesystem::path& path);
std::pair<Points, Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace travproxy

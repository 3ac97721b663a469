#pragma once

#include "travproxy/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace travproxy {

enum class Label : std::uint8_t { Positive, Negative, Unlabeled };
enum class SceneKind { Query, Support, Eval };

char label_char(Label l);

/// A point cloud with per-point label status.
///
/// `trav` is either empty or holds one value per point; entries are NaN
/// wherever no traversability target exists. Targets only exist on Positive
/// points of Query scenes.
struct Scene {
  Points points;
  std::vector<Label> labels;
  std::vector<double> trav;
  SceneKind kind = SceneKind::Eval;

  std::size_t size() const { return labels.size(); }
  bool has_trav(std::size_t i) const;
  std::size_t count(Label l) const;

  /// Throws DataError if any scene invariant is broken.
  void validate() const;
};

struct Episode {
  std::vector<std::size_t> query_indices;
  std::vector<std::size_t> support_indices;
  std::size_t query_scene_id = 0;
  std::size_t support_scene_id = 0;
};

struct SyntheticSpec {
  double extent = 16.0;  // side of the square patch, meters
  std::size_t n_points = 6000;
  // Large-scale undulation amplitude and wavelength of the ground.
  double terrain_amplitude = 0.35;
  double terrain_wavelength = 7.0;
  // Peak small-scale height noise in the roughest ground patches.
  double roughness = 0.06;
  std::size_t trees = 2;
  std::size_t rocks = 3;
  std::size_t bushes = 2;
  // Additional obstacle family (fallen logs); used to build data with four
  // sub-clusters per class.
  std::size_t logs = 0;
  // Distinct ground textures (1..4): smooth, gravel, grass, washboard.
  int ground_types = 1;
  double path_width = 1.6;
  // Fraction of the support scene's evident points that keep their label.
  double support_label_fraction = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticScenes {
  Scene query;
  Scene support;
  Scene eval;
  // Per point: ground covered by the robot path (query Positive set).
  std::vector<bool> on_path;
  // Per point: belongs to an obstacle.
  std::vector<bool> obstacle;
  // Path centreline polyline in the xy-plane, used by brute-force checks.
  std::vector<Eigen::Vector2d> path;
};

struct NamedScene {
  std::string name;
  Scene scene;
};

struct SyntheticDataset {
  std::vector<NamedScene> query, support, eval;
};

/// Independent synthetic scenes: query scenes keep the query labelling,
/// support scenes the support labelling, eval scenes the full ground truth.
/// Per-scene seeds are drawn in that order from one generator seeded with
/// `seed`; `base.seed` is ignored.
SyntheticDataset generate_dataset(const SyntheticSpec& base, std::size_t n_query, std::size_t n_support,
                                  std::size_t n_eval, std::uint64_t seed);

Scene load_scene(const std::filesystem::path& path, SceneKind kind);
void save_scene(const Scene& scene, const std::filesystem::path& path);

SyntheticScenes generate_synthetic_scene(const SyntheticSpec& spec);

/// Distance from `p` to the polyline `path` in the xy-plane.
double distance_to_path(const Eigen::Vector2d& p, std::span<const Eigen::Vector2d> path);

/// Uniform-grid spatial index for exact k-nearest-neighbour queries.
class GridIndex {
 public:
  explicit GridIndex(const Points& points);

  /// Indices of the k nearest points to `center`, nearest first, ties broken
  /// by lower index. Throws std::invalid_argument if k exceeds the point count.
  std::vector<std::size_t> knn(const Vec3& center, std::size_t k) const;

  std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }

 private:
  Points points_;
  Vec3 origin_;
  double cell_ = 1.0;
  Eigen::Vector3i dims_;
  std::vector<std::size_t> cell_start_;
  std::vector<std::size_t> cell_points_;

  Eigen::Vector3i cell_of(const Vec3& p) const;
};

/// Exact k nearest neighbours. Exhaustive below 1000 points, grid index above.
std::vector<std::size_t> knn(const Points& points, const Vec3& center, std::size_t k);

std::vector<std::size_t> knn_exhaustive(const Points& points, const Vec3& center, std::size_t k);

Episode sample_episode(const Scene& query, const Scene& support, std::size_t n_query,
                       std::size_t n_support, Rng& rng);

}  // namespace travproxy

#include "travproxy/pointcloud.hpp"

#include "travproxy/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <cstdio>

namespace travproxy {

char label_char(Label l) {
  switch (l) {
    case Label::Positive: return 'P';
    case Label::Negative: return 'N';
    case Label::Unlabeled: return 'U';
  }
  return '?';
}

bool Scene::has_trav(std::size_t i) const { return !trav.empty() && !std::isnan(trav[i]); }

std::size_t Scene::count(Label l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

void Scene::validate() const {
  if (static_cast<std::size_t>(points.cols()) != labels.size())
    throw DataError("scene: point/label count mismatch");
  if (!trav.empty() && trav.size() != labels.size())
    throw DataError("scene: traversability count mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (kind == SceneKind::Query && labels[i] == Label::Negative)
      throw DataError("scene: Negative label in a query scene at point " + std::to_string(i));
    if (has_trav(i)) {
      if (kind != SceneKind::Query || labels[i] != Label::Positive)
        throw DataError("scene: traversability on a non-positive or non-query point " +
                        std::to_string(i));
      if (!(trav[i] >= 0.0 && trav[i] <= 1.0))
        throw DataError("scene: traversability outside [0,1] at point " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Scene files

Scene load_scene(const std::filesystem::path& path, SceneKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path.string());

  std::vector<Vec3> pts;
  Scene scene;
  scene.kind = kind;
  bool any_trav = false;
  std::vector<double> trav;

  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(line);
    if (fields.empty() || fields[0].front() == '#') continue;
    if (fields.size() != 4 && fields.size() != 5) fail("expected `x y z label [trav]`");
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      auto v = parse_double(fields[a]);
      if (!v || !std::isfinite(*v)) fail("bad coordinate '" + std::string(fields[a]) + "'");
      p[a] = *v;
    }
    Label label;
    if (fields[3] == "P") label = Label::Positive;
    else if (fields[3] == "N") label = Label::Negative;
    else if (fields[3] == "U") label = Label::Unlabeled;
    else fail("unknown label '" + std::string(fields[3]) + "'");

    if (kind == SceneKind::Query && label == Label::Negative) fail("Negative label in a query scene");

    double t = std::numeric_limits<double>::quiet_NaN();
    if (fields.size() == 5) {
      if (kind != SceneKind::Query || label != Label::Positive)
        fail("traversability only allowed on Positive points of a query scene");
      auto v = parse_double(fields[4]);
      if (!v) fail("bad traversability '" + std::string(fields[4]) + "'");
      if (!(*v >= 0.0 && *v <= 1.0)) fail("traversability outside [0,1]");
      t = *v;
      any_trav = true;
    }
    pts.push_back(p);
    scene.labels.push_back(label);
    trav.push_back(t);
  }
  scene.points.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) scene.points.col(static_cast<Eigen::Index>(i)) = pts[i];
  if (any_trav) scene.trav = std::move(trav);
  return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scene file " + path.string());
  std::string buf;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    buf.clear();
    const auto c = scene.points.col(static_cast<Eigen::Index>(i));
    buf += format_double(c.x());
    buf += ' ';
    buf += format_double(c.y());
    buf += ' ';
    buf += format_double(c.z());
    buf += ' ';
    buf += label_char(scene.labels[i]);
    if (scene.has_trav(i)) {
      buf += ' ';
      buf += format_double(scene.trav[i]);
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Nearest neighbours

namespace {

struct Candidate {
  double d2;
  std::size_t idx;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

std::vector<std::size_t> take_sorted(std::vector<Candidate>& cand, std::size_t k) {
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].idx;
  return out;
}

}  // namespace

std::vector<std::size_t> knn_exhaustive(const Points& points, const Vec3& center, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.cols());
  if (k > n) throw std::invalid_argument("knn: k exceeds point count");
  std::vector<Candidate> cand(n);
  for (std::size_t i = 0; i < n; ++i)
    cand[i] = {(points.col(static_cast<Eigen::Index>(i)) - center).squaredNorm(), i};
  return take_sorted(cand, k);
}

GridIndex::GridIndex(const Points& points) : points_(points) {
  const auto n = static_cast<std::size_t>(points.cols());
  if (n == 0) {
    origin_.setZero();
    dims_.setOnes();
    cell_start_.assign(2, 0);
    return;
  }
  Vec3 lo = points.rowwise().minCoeff();
  Vec3 hi = points.rowwise().maxCoeff();
  Vec3 ext = (hi - lo).cwiseMax(1e-9);
  // Roughly four points per cell if the cloud filled its bounding box.
  cell_ = std::cbrt(ext.prod() * 4.0 / static_cast<double>(n));
  // Flat clouds: fall back to an area-based size.
  cell_ = std::max(cell_, std::sqrt(ext.x() * ext.y() * 4.0 / static_cast<double>(n)) * 0.5);
  cell_ = std::max(cell_, ext.maxCoeff() / 256.0);
  origin_ = lo;
  for (int a = 0; a < 3; ++a)
    dims_[a] = std::max(1, static_cast<int>(std::floor(ext[a] / cell_)) + 1);

  const std::size_t ncells = static_cast<std::size_t>(dims_.x()) * dims_.y() * dims_.z();
  std::vector<std::size_t> cell_id(n);
  cell_start_.assign(ncells + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3i c = cell_of(points.col(static_cast<Eigen::Index>(i)));
    cell_id[i] = (static_cast<std::size_t>(c.z()) * dims_.y() + c.y()) * dims_.x() + c.x();
    ++cell_start_[cell_id[i] + 1];
  }
  for (std::size_t c = 0; c < ncells; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_points_.resize(n);
  std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < n; ++i) cell_points_[fill[cell_id[i]]++] = i;
}

Eigen::Vector3i GridIndex::cell_of(const Vec3& p) const {
  Eigen::Vector3i c;
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - origin_[a]) / cell_);
    c[a] = static_cast<int>(std::clamp(f, 0.0, static_cast<double>(dims_[a] - 1)));
  }
  return c;
}

std::vector<std::size_t> GridIndex::knn(const Vec3& center, std::size_t k) const {
  if (k > size()) throw std::invalid_argument("knn: k exceeds point count");
  if (k == 0) return {};
  const Eigen::Vector3i c = cell_of(center);
  std::vector<Candidate> cand;
  const int max_r = dims_.maxCoeff();
  for (int r = 0; r <= max_r; ++r) {
    for (int z = c.z() - r; z <= c.z() + r; ++z) {
      if (z < 0 || z >= dims_.z()) continue;
      for (int y = c.y() - r; y <= c.y() + r; ++y) {
        if (y < 0 || y >= dims_.y()) continue;
        for (int x = c.x() - r; x <= c.x() + r; ++x) {
          if (x < 0 || x >= dims_.x()) continue;
          const int cheb = std::max({std::abs(x - c.x()), std::abs(y - c.y()), std::abs(z - c.z())});
          if (cheb != r) continue;
          const std::size_t id = (static_cast<std::size_t>(z) * dims_.y() + y) * dims_.x() + x;
          for (std::size_t j = cell_start_[id]; j < cell_start_[id + 1]; ++j) {
            const std::size_t i = cell_points_[j];
            cand.push_back({(points_.col(static_cast<Eigen::Index>(i)) - center).squaredNorm(), i});
          }
        }
      }
    }
    // Any point outside the searched block is at least `bound` away.
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (c[a] - r > 0) bound = std::min(bound, center[a] - (origin_[a] + (c[a] - r) * cell_));
      if (c[a] + r < dims_[a] - 1) bound = std::min(bound, origin_[a] + (c[a] + r + 1) * cell_ - center[a]);
    }
    if (std::isinf(bound)) break;
    if (cand.size() >= k && bound > 0.0) {
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
      if (cand[k - 1].d2 < bound * bound) break;
    }
  }
  return take_sorted(cand, k);
}

std::vector<std::size_t> knn(const Points& points, const Vec3& center, std::size_t k) {
  if (points.cols() < 1000) return knn_exhaustive(points, center, k);
  return GridIndex(points).knn(center, k);
}

// ---------------------------------------------------------------------------
// Episodes

namespace {

std::vector<std::size_t> knn_within(const Scene& scene, Label label, std::size_t k, Rng& rng) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (scene.labels[i] == label) members.push_back(i);
  if (members.empty()) throw DataError("support scene has no points of one class");
  Points sub(3, static_cast<Eigen::Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j)
    sub.col(static_cast<Eigen::Index>(j)) = scene.points.col(static_cast<Eigen::Index>(members[j]));
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  const Vec3 center = sub.col(static_cast<Eigen::Index>(pick(rng)));
  auto local = knn(sub, center, std::min(k, members.size()));
  for (auto& i : local) i = members[i];
  return local;
}

}  // namespace

Episode sample_episode(const Scene& query, const Scene& support, std::size_t n_query,
                       std::size_t n_support, Rng& rng) {
  if (query.size() == 0 || support.size() == 0) throw DataError("sample_episode: empty scene");
  if (n_support % 2 != 0 || n_support == 0)
    throw std::invalid_argument("sample_episode: n_support must be even and positive");
  Episode ep;
  std::uniform_int_distribution<std::size_t> pick(0, query.size() - 1);
  const Vec3 center = query.points.col(static_cast<Eigen::Index>(pick(rng)));
  ep.query_indices = knn(query.points, center, std::min(n_query, query.size()));
  ep.support_indices = knn_within(support, Label::Positive, n_support / 2, rng);
  auto neg = knn_within(support, Label::Negative, n_support / 2, rng);
  ep.support_indices.insert(ep.support_indices.end(), neg.begin(), neg.end());
  return ep;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SyntheticSpec::validate() const {
  if (!(extent > 0.0)) throw ConfigError("synthetic spec: extent must be > 0");
  if (n_points == 0) throw ConfigError("synthetic spec: n_points must be > 0");
  if (ground_types < 1 || ground_types > 4) throw ConfigError("synthetic spec: ground_types in 1..4");
  if (!(path_width > 0.0)) throw ConfigError("synthetic spec: path_width must be > 0");
  if (!(support_label_fraction > 0.0 && support_label_fraction <= 1.0))
    throw ConfigError("synthetic spec: support_label_fraction in (0,1]");
  if (roughness < 0.0 || terrain_amplitude < 0.0) throw ConfigError("synthetic spec: negative amplitude");
}

double distance_to_path(const Eigen::Vector2d& p, std::span<const Eigen::Vector2d> path) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s + 1 < path.size(); ++s) {
    const Eigen::Vector2d a = path[s], ab = path[s + 1] - path[s];
    const double len2 = ab.squaredNorm();
    const double u = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (a + u * ab - p).norm());
  }
  if (path.size() == 1) best = (p - path[0]).norm();
  return best;
}

namespace {

enum class ObstacleKind { Tree, Rock, Bush, Log };

struct Obstacle {
  ObstacleKind kind;
  Eigen::Vector2d center;
  double radius;     // footprint radius
  double height;
  double aux = 0.0;  // trunk radius (tree) or yaw (log)
  double length = 0.0;
};

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Terrain {
  double amp, wl;
  double ph[6];
  Eigen::Vector2d seeds[8];
  int types = 1;
  std::size_t n_seeds = 1;

  double height(double x, double y) const {
    return amp * (0.6 * std::sin(kTwoPi * x / wl + ph[0]) * std::cos(kTwoPi * y / wl + ph[1]) +
                  0.4 * std::sin(kTwoPi * (x + y) / (1.7 * wl) + ph[2]));
  }
  // Smooth roughness field in [0, 1].
  double rough(double x, double y) const {
    const double v = std::sin(kTwoPi * x / 5.3 + ph[3]) * std::cos(kTwoPi * y / 4.1 + ph[4]);
    return 0.5 * (1.0 + v);
  }
  int texture(double x, double y) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const double d = (seeds[s] - Eigen::Vector2d(x, y)).squaredNorm();
      if (d < bd) { bd = d; best = s; }
    }
    return static_cast<int>(best % static_cast<std::size_t>(types));
  }
};

double surface_area(const Obstacle& o) {
  switch (o.kind) {
    case ObstacleKind::Tree: {
      const double crown = 0.5 * o.radius;
      return kTwoPi * o.aux * o.height + 2.0 * kTwoPi * crown * crown;
    }
    case ObstacleKind::Rock: return 0.5 * 2.0 * kTwoPi * o.radius * std::max(o.radius, o.height) * 0.8;
    case ObstacleKind::Bush: return 2.0 * kTwoPi * o.radius * o.radius * 0.8;
    case ObstacleKind::Log: return kTwoPi * o.radius * o.length;
  }
  return 1.0;
}

// Unit vector uniform on the sphere.
Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v;
  do { v = {g(rng), g(rng), g(rng)}; } while (v.norm() < 1e-9);
  return v.normalized();
}

// Samples one surface point of an obstacle; returns the point and whether it
// belongs to the obstacle core (clearly above the surrounding ground).
std::pair<Vec3, bool> sample_obstacle_point(const Obstacle& o, const Terrain& terrain, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const double gz = terrain.height(o.center.x(), o.center.y());
  Vec3 p = Vec3::Zero();
  switch (o.kind) {
    case ObstacleKind::Tree: {
      const double crown = 0.5 * o.radius;
      const double trunk_area = kTwoPi * o.aux * o.height;
      const double crown_area = 2.0 * kTwoPi * crown * crown;
      if (u01(rng) * (trunk_area + crown_area) < trunk_area) {
        const double a = kTwoPi * u01(rng);
        p = {o.center.x() + o.aux * std::cos(a), o.center.y() + o.aux * std::sin(a), gz + o.height * u01(rng)};
      } else {
        const double shell = 0.55 + 0.45 * u01(rng);
        p = Vec3(o.center.x(), o.center.y(), gz + o.height + 0.6 * crown) + shell * crown * random_direction(rng);
        p += 0.08 * Vec3(g(rng), g(rng), g(rng));
      }
      break;
    }
    case ObstacleKind::Rock: {
      Vec3 d = random_direction(rng);
      d.z() = std::abs(d.z());
      p = {o.center.x() + o.radius * d.x(), o.center.y() + o.radius * d.y(), gz + o.height * d.z()};
      p += 0.05 * Vec3(g(rng), g(rng), g(rng));
      break;
    }
    case ObstacleKind::Bush: {
      Vec3 d = random_direction(rng);
      d.z() = std::abs(d.z());
      const double shell = 0.75 + 0.25 * u01(rng);
      p = {o.center.x() + shell * o.radius * d.x(), o.center.y() + shell * o.radius * d.y(),
           gz + shell * o.height * d.z()};
      p += 0.05 * Vec3(g(rng), g(rng), g(rng));
      break;
    }
    case ObstacleKind::Log: {
      const double s = (u01(rng) - 0.5) * o.length;
      const double a = std::numbers::pi * u01(rng);  // upper half of the cylinder
      const Eigen::Vector2d axis(std::cos(o.aux), std::sin(o.aux));
      const Eigen::Vector2d side(-axis.y(), axis.x());
      const Eigen::Vector2d xy = o.center + s * axis + o.radius * std::cos(a) * side;
      p = {xy.x(), xy.y(), terrain.height(xy.x(), xy.y()) + o.radius * (1.0 + std::sin(a))};
      break;
    }
  }
  const double above = p.z() - terrain.height(p.x(), p.y());
  const double core_height = o.kind == ObstacleKind::Log ? 0.2 : 0.25;
  return {p, above > core_height};
}

bool under_obstacle(const Eigen::Vector2d& xy, const Obstacle& o) {
  switch (o.kind) {
    case ObstacleKind::Tree: return (xy - o.center).norm() < o.aux;
    case ObstacleKind::Log: {
      const Eigen::Vector2d axis(std::cos(o.aux), std::sin(o.aux));
      const Eigen::Vector2d r = xy - o.center;
      return std::abs(r.dot(axis)) < 0.5 * o.length &&
             std::abs(r.dot(Eigen::Vector2d(-axis.y(), axis.x()))) < o.radius;
    }
    default: return (xy - o.center).norm() < o.radius;
  }
}

}  // namespace

SyntheticScenes generate_synthetic_scene(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const double E = spec.extent;

  Terrain terrain{};
  terrain.amp = spec.terrain_amplitude;
  terrain.wl = spec.terrain_wavelength;
  for (double& ph : terrain.ph) ph = kTwoPi * u01(rng);
  terrain.types = spec.ground_types;
  terrain.n_seeds = static_cast<std::size_t>(2 * spec.ground_types);
  for (std::size_t s = 0; s < terrain.n_seeds; ++s) terrain.seeds[s] = {E * u01(rng), E * u01(rng)};

  SyntheticScenes out;
  // Path: left edge to right edge through random waypoints.
  const int n_way = 5;
  for (int w = 0; w <= n_way; ++w) {
    const double x = E * (0.02 + 0.96 * w / n_way);
    const double y = E * (0.2 + 0.6 * u01(rng));
    out.path.emplace_back(x, y);
  }

  // Obstacles, kept clear of the path and of each other.
  std::vector<Obstacle> obstacles;
  auto place = [&](ObstacleKind kind, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      Obstacle o{kind, {}, 0.0, 0.0};
      switch (kind) {
        case ObstacleKind::Tree:
          o.radius = 2.0 + 0.8 * u01(rng);
          o.height = 2.0 + 1.5 * u01(rng);
          o.aux = 0.15 + 0.1 * u01(rng);
          break;
        case ObstacleKind::Rock:
          o.radius = 0.4 + 0.4 * u01(rng);
          o.height = 0.35 + 0.35 * u01(rng);
          break;
        case ObstacleKind::Bush:
          o.radius = 0.6 + 0.4 * u01(rng);
          o.height = 0.6 + 0.4 * u01(rng);
          break;
        case ObstacleKind::Log:
          o.radius = 0.2 + 0.1 * u01(rng);
          o.length = 2.0 + 1.0 * u01(rng);
          o.aux = std::numbers::pi * u01(rng);
          o.height = 2.0 * o.radius;
          break;
      }
      const double reach = kind == ObstacleKind::Log ? 0.5 * o.length
                           : kind == ObstacleKind::Tree ? 0.5 * o.radius
                                                        : o.radius;
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Eigen::Vector2d c(E * (0.06 + 0.88 * u01(rng)), E * (0.06 + 0.88 * u01(rng)));
        if (distance_to_path(c, out.path) < 0.5 * spec.path_width + reach + 0.6) continue;
        bool clash = false;
        for (const auto& other : obstacles) {
          const double oreach = other.kind == ObstacleKind::Log ? 0.5 * other.length
                                : other.kind == ObstacleKind::Tree ? 0.5 * other.radius
                                                                   : other.radius;
          if ((other.center - c).norm() < reach + oreach + 0.4) { clash = true; break; }
        }
        if (clash) continue;
        o.center = c;
        obstacles.push_back(o);
        break;
      }
    }
  };
  place(ObstacleKind::Tree, spec.trees);
  place(ObstacleKind::Rock, spec.rocks);
  place(ObstacleKind::Bush, spec.bushes);
  place(ObstacleKind::Log, spec.logs);

  // Point budget: obstacles get a surface density matching the ground, capped
  // at half of the cloud.
  const double ground_density = static_cast<double>(spec.n_points) / (E * E);
  std::vector<std::size_t> obs_counts;
  double total_obs = 0.0;
  for (const auto& o : obstacles) total_obs += surface_area(o) * ground_density;
  const double scale = total_obs > 0.5 * spec.n_points ? 0.5 * spec.n_points / total_obs : 1.0;
  std::size_t n_obs = 0;
  for (const auto& o : obstacles) {
    obs_counts.push_back(static_cast<std::size_t>(std::llround(surface_area(o) * ground_density * scale)));
    n_obs += obs_counts.back();
  }
  const std::size_t n_ground = spec.n_points - n_obs;

  std::vector<Vec3> pts;
  std::vector<bool> core;
  pts.reserve(spec.n_points);
  for (std::size_t j = 0; j < obstacles.size(); ++j)
    for (std::size_t c = 0; c < obs_counts[j]; ++c) {
      auto [p, is_core] = sample_obstacle_point(obstacles[j], terrain, rng);
      pts.push_back(p);
      core.push_back(is_core);
    }
  out.obstacle.assign(n_obs, true);
  out.obstacle.resize(spec.n_points, false);

  for (std::size_t i = 0; i < n_ground; ++i) {
    Eigen::Vector2d xy;
    bool hidden;
    do {
      xy = {E * u01(rng), E * u01(rng)};
      hidden = false;
      for (const auto& o : obstacles) hidden = hidden || under_obstacle(xy, o);
    } while (hidden);
    double z = terrain.height(xy.x(), xy.y());
    const double r = terrain.rough(xy.x(), xy.y());
    switch (terrain.texture(xy.x(), xy.y())) {
      case 0: z += spec.roughness * r * g(rng); break;
      case 1: z += spec.roughness * (0.6 + 0.8 * r) * g(rng); break;
      case 2: z += spec.roughness * r * g(rng) + 0.4 * spec.roughness * std::abs(g(rng)); break;
      default: z += 0.5 * spec.roughness * std::sin(kTwoPi * xy.x() / 0.6) + spec.roughness * 0.5 * r * g(rng); break;
    }
    pts.emplace_back(xy.x(), xy.y(), z);
    core.push_back(true);
  }

  Points points(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) points.col(static_cast<Eigen::Index>(i)) = pts[i];

  const std::size_t n = pts.size();
  out.on_path.assign(n, false);
  for (std::size_t i = n_obs; i < n; ++i)
    out.on_path[i] = distance_to_path(pts[i].head<2>(), out.path) <= 0.5 * spec.path_width;

  // Traversability along the path from local height variance.
  GridIndex index(points);
  const double var_ref = 1.5 * spec.roughness * spec.roughness + 1e-12;
  std::vector<double> trav(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.on_path[i]) continue;
    auto nb = index.knn(pts[i], std::min<std::size_t>(12, n));
    double mean = 0.0, sq = 0.0;
    for (auto j : nb) mean += pts[j].z();
    mean /= static_cast<double>(nb.size());
    for (auto j : nb) sq += (pts[j].z() - mean) * (pts[j].z() - mean);
    const double var = sq / static_cast<double>(nb.size());
    trav[i] = std::clamp(1.0 - var / var_ref, 0.0, 1.0);
  }

  out.query.kind = SceneKind::Query;
  out.support.kind = SceneKind::Support;
  out.eval.kind = SceneKind::Eval;
  for (Scene* s : {&out.query, &out.support, &out.eval}) s->points = points;
  out.query.trav = trav;
  out.query.labels.resize(n);
  out.support.labels.resize(n);
  out.eval.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.query.labels[i] = out.on_path[i] ? Label::Positive : Label::Unlabeled;
    out.eval.labels[i] = out.obstacle[i] ? Label::Negative : Label::Positive;
    Label sup = Label::Unlabeled;
    if (out.obstacle[i]) {
      if (core[i]) sup = Label::Negative;
    } else if (distance_to_path(pts[i].head<2>(), out.path) <= 0.25 * spec.path_width) {
      sup = Label::Positive;
    }
    // Draw unconditionally so the stream does not depend on labels.
    const double keep = u01(rng);
    if (keep >= spec.support_label_fraction) sup = Label::Unlabeled;
    out.support.labels[i] = sup;
  }
  return out;
}

SyntheticDataset generate_dataset(const SyntheticSpec& base, std::size_t n_query, std::size_t n_support,
                                  std::size_t n_eval, std::uint64_t seed) {
  base.validate();
  Rng master(seed);
  SyntheticDataset out;
  auto name = [](const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
    return std::string(buf);
  };
  auto make = [&] {
    SyntheticSpec spec = base;
    spec.seed = master();
    return generate_synthetic_scene(spec);
  };
  for (std::size_t i = 0; i < n_query; ++i) out.query.push_back({name("query", i), make().query});
  for (std::size_t i = 0; i < n_support; ++i) out.support.push_back({name("support", i), make().support});
  for (std::size_t i = 0; i < n_eval; ++i) out.eval.push_back({name("eval", i), make().eval});
  return out;
}

}  // namespace travproxy

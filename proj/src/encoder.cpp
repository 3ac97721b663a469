#include "travproxy/encoder.hpp"

#include "travproxy/pointcloud.hpp"

#include <memory>

namespace travproxy {

PointFeatures featurize(const Points& points, std::size_t k_enc) {
  const auto n = static_cast<std::size_t>(points.cols());
  if (k_enc == 0) throw std::invalid_argument("featurize: k_enc must be >= 1");
  if (n < k_enc) throw DataError("featurize: fewer points than k_enc");
  PointFeatures feats(kFeatureDim, static_cast<Eigen::Index>(n));
  std::unique_ptr<GridIndex> index;
  if (n >= 1000) index = std::make_unique<GridIndex>(points);
  Eigen::Matrix<double, 3, Eigen::Dynamic> off(3, static_cast<Eigen::Index>(k_enc));
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = points.col(static_cast<Eigen::Index>(i));
    const auto nb = index ? index->knn(p, k_enc) : knn_exhaustive(points, p, k_enc);
    for (std::size_t j = 0; j < k_enc; ++j)
      off.col(static_cast<Eigen::Index>(j)) = points.col(static_cast<Eigen::Index>(nb[j])) - p;
    const Vec3 mean = off.rowwise().mean();
    const Vec3 sd = ((off.colwise() - mean).array().square().rowwise().mean()).sqrt();
    auto f = feats.col(static_cast<Eigen::Index>(i));
    f.segment<3>(0) = mean;
    f.segment<3>(3) = sd;
    f(6) = off.row(2).maxCoeff() - off.row(2).minCoeff();
    f(7) = off.colwise().norm().mean();
  }
  return feats;
}

}  // namespace travproxy

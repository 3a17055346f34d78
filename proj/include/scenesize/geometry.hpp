#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace scenesize::geometry {

// Conventions used throughout: image ordinates are measured in pixels from
// the optical center with positive y pointing UP, angles are radians, metric
// lengths are meters. Ground contact points of objects standing in front of
// the camera therefore come out negative (below the horizon) for positive
// camera heights. Raster (top-left, y-down) conversion lives in boxes.hpp.

/// Simplified perspective camera: focal length in pixels, tilt about the
/// x-axis, and height above the ground plane. Roll is assumed corrected.
struct CameraModel {
  double focal_px;
  double tilt_rad;
  double height_m;

  CameraModel(double focal_px_, double tilt_rad_, double height_m_)
      : focal_px(focal_px_), tilt_rad(tilt_rad_), height_m(height_m_) {
    if (!(focal_px > 0.0)) throw std::invalid_argument("CameraModel: focal length must be > 0");
    if (!(height_m > 0.0)) throw std::invalid_argument("CameraModel: camera height must be > 0");
    if (!(std::fabs(tilt_rad) < std::numbers::pi / 4.0))
      throw std::invalid_argument("CameraModel: |tilt| must be < pi/4");
  }
};

/// Point in the camera-centered world frame: y axis aligned with the ground
/// normal, z pointing along the camera axis. The ground plane sits at
/// y = -height_m.
struct WorldPoint {
  double x_m;
  double y_m;
  double z_m;
};

/// Pixel ordinate measured from the optical center, positive up.
struct ImageOrdinate {
  double px;
};

struct ImagePoint {
  double x_px;
  double y_px;
};

/// Horizon position for a given tilt: y_h = f * tilt.
inline double horizon_from_tilt(double focal_px, double tilt_rad) {
  if (!(focal_px > 0.0)) throw std::invalid_argument("horizon_from_tilt: focal length must be > 0");
  return focal_px * tilt_rad;
}

/// Small-tilt ground contact ordinate of a point at depth d on the ground
/// plane: y_b = -f*h_c/d + f*tilt.
inline double ground_point_approx(const CameraModel& cam, double depth_m) {
  if (!(depth_m > 0.0)) throw std::invalid_argument("ground_point_approx: depth must be > 0");
  return -cam.focal_px * cam.height_m / depth_m + cam.focal_px * cam.tilt_rad;
}

/// Unapproximated ground contact ordinate:
/// y_b = f * (-h_c/d + tan t) / (1 + (h_c/d) * tan t).
inline double ground_point_exact(const CameraModel& cam, double depth_m) {
  if (!(depth_m > 0.0)) throw std::invalid_argument("ground_point_exact: depth must be > 0");
  const double ratio = cam.height_m / depth_m;
  const double tan_tilt = std::tan(cam.tilt_rad);
  const double denom = 1.0 + ratio * tan_tilt;
  if (std::fabs(denom) < 1e-12)
    throw std::domain_error("ground_point_exact: projection denominator vanishes");
  return cam.focal_px * (-ratio + tan_tilt) / denom;
}

/// Full perspective projection of a world point under the tilted camera.
/// Pre: the point must lie in front of the image plane.
inline ImagePoint project(const CameraModel& cam, const WorldPoint& p) {
  const double c = std::cos(cam.tilt_rad);
  const double s = std::sin(cam.tilt_rad);
  const double depth = -p.y_m * s + p.z_m * c;  // camera-frame z after tilt
  if (!(depth > 1e-12)) throw std::domain_error("project: point behind the image plane");
  return {cam.focal_px * p.x_m / depth, cam.focal_px * (p.y_m * c + p.z_m * s) / depth};
}

/// Apparent height in pixels of an object of metric height H at depth d:
/// h = f*H/d.
inline double image_height(double focal_px, double height_m, double depth_m) {
  if (!(depth_m > 0.0)) throw std::invalid_argument("image_height: depth must be > 0");
  if (height_m < 0.0) throw std::invalid_argument("image_height: height must be >= 0");
  return focal_px * height_m / depth_m;
}

/// Familiar-size depth readout, the inverse of image_height: d = f*H/h.
inline double depth_from_height(double focal_px, double height_m, double image_height_px) {
  if (!(image_height_px > 0.0))
    throw std::invalid_argument("depth_from_height: image height must be > 0");
  if (!(height_m > 0.0)) throw std::invalid_argument("depth_from_height: height must be > 0");
  if (!(focal_px > 0.0)) throw std::invalid_argument("depth_from_height: focal length must be > 0");
  return focal_px * height_m / image_height_px;
}

}  // namespace scenesize::geometry

#pragma once

#include <cmath>

#include "regalign/geometry.hpp"
#include "regalign/image.hpp"
#include "regalign/rng.hpp"

namespace regalign::testing {

inline CameraIntrinsics desk_camera() {
  CameraIntrinsics k;
  k.fx = 105.0;
  k.fy = 105.0;
  k.cx = 63.5;
  k.cy = 47.5;
  k.width = 128;
  k.height = 96;
  return k;
}

inline Twist random_twist(Rng& rng, double max_angle, double max_trans) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  Twist t;
  t.omega = axis * rng.uniform(0.0, max_angle);
  t.nu = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * max_trans;
  return t;
}

/// Smooth textured image: sum of a few sinusoids in [0.1, 0.9].
inline FeatureMap smooth_texture(int w, int h, int channels, unsigned seed) {
  Rng rng(seed, 99);
  FeatureMap m(w, h, channels);
  for (int c = 0; c < channels; ++c) {
    double a[4], fx[4], fy[4], ph[4];
    for (int i = 0; i < 4; ++i) {
      a[i] = rng.uniform(0.05, 0.1);
      fx[i] = rng.uniform(0.05, 0.25);
      fy[i] = rng.uniform(0.05, 0.25);
      ph[i] = rng.uniform(0, 6.28);
    }
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        double s = 0.5;
        for (int i = 0; i < 4; ++i) s += a[i] * std::sin(fx[i] * u + fy[i] * v + ph[i]);
        m.at(u, v, c) = static_cast<float>(s);
      }
  }
  return m;
}

}  // namespace regalign::testing

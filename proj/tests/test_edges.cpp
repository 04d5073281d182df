#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <queue>

#include "vipnav/edge_detect.hpp"
#include "vipnav/rng.hpp"

using namespace vipnav;

namespace {

DepthImage transpose(const DepthImage& img) {
  DepthImage t(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) t(y, x) = img(x, y);
  }
  return t;
}

EdgeMask transpose(const EdgeMask& img) {
  EdgeMask t(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) t(y, x) = img(x, y);
  }
  return t;
}

DepthImage vertical_step(int w, int h, int column) {
  DepthImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img(x, y) = x < column ? 1.0f : 2.0f;
  }
  return img;
}

}  // namespace

TEST(GaussianBlur, ConstantImageUnchanged) {
  const DepthImage img(20, 15, 3.25f);
  const DepthImage out = gaussian_blur(img, 1.4);
  for (float d : out.pixels()) EXPECT_NEAR(d, 3.25f, 1e-6);
}

TEST(GaussianBlur, KernelSumsToOne) {
  for (double sigma : {0.3, 0.8, 1.0, 1.4, 2.7, 5.0}) {
    const auto k = detail::gaussian_kernel(sigma);
    EXPECT_EQ(static_cast<int>(k.size()), 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1);
    EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(GaussianBlur, ImpulseCentreMatchesSampledGaussian) {
  // Oracle: the 2-D kernel is the outer product of the 1-D sampled Gaussian
  // over [-3, 3], normalized; centre weight = (1 / sum_i exp(-i^2 / 2))^2.
  double s = 0.0;
  for (int i = -3; i <= 3; ++i) s += std::exp(-0.5 * i * i);
  const double centre = 1.0 / (s * s);
  EXPECT_NEAR(centre, 0.1592, 1e-4);
  // A 1 m background keeps every pixel valid; the impulse adds 1 m.
  DepthImage img(15, 15, 1.0f);
  img(7, 7) = 2.0f;
  const DepthImage out = gaussian_blur(img, 1.0);
  EXPECT_NEAR(out(7, 7) - 1.0, centre, 1e-6);
}

TEST(GaussianBlur, InvalidPixelsStayInvalidAndDoNotBleed) {
  DepthImage img(10, 10, 2.0f);
  img(4, 4) = 0.0f;
  img(5, 4) = 0.0f;
  const DepthImage out = gaussian_blur(img, 1.4);
  EXPECT_EQ(out(4, 4), 0.0f);
  EXPECT_EQ(out(5, 4), 0.0f);
  EXPECT_NEAR(out(3, 4), 2.0f, 1e-6);
  EXPECT_THROW(gaussian_blur(img, 0.0), std::invalid_argument);
}

TEST(Canny, ConstantImageHasNoEdges) {
  const EdgeMask m = canny(DepthImage(32, 24, 1.7f), {1.4, 0.05, 0.2});
  for (auto v : m.pixels()) EXPECT_EQ(v, 0);
}

TEST(Canny, RejectsBadThresholds) {
  EXPECT_THROW(canny(DepthImage(4, 4, 1.0f), {1.4, 0.2, 0.1}), std::invalid_argument);
  EXPECT_THROW(canny(DepthImage(4, 4, 1.0f), {1.4, 0.0, 0.1}), std::invalid_argument);
}

TEST(Canny, VerticalStepGivesOnePixelPerRow) {
  const int w = 40, h = 30, c = 20;
  const EdgeMask m = canny(vertical_step(w, h, c), {1.4, 0.05, 0.2});
  for (int y = 0; y < h; ++y) {
    int count = 0;
    for (int x = 0; x < w; ++x) {
      if (!m(x, y)) continue;
      EXPECT_GE(x, c - 1);
      EXPECT_LE(x, c + 1);
      ++count;
    }
    if (y > 0 && y < h - 1) EXPECT_EQ(count, 1) << "row " << y;
  }
}

TEST(Canny, NarrowRangeImageHasNoEdges) {
  RngStream rng(8);
  DepthImage img(24, 24);
  for (float& d : img.pixels()) d = static_cast<float>(1.0 + rng.uniform(0.0, 0.049));
  const EdgeMask m = canny(img, {1.4, 0.05, 0.15});
  for (auto v : m.pixels()) EXPECT_EQ(v, 0);
}

TEST(Canny, TransposeSymmetry) {
  RngStream rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    DepthImage img(16, 16);
    for (float& d : img.pixels()) d = static_cast<float>(rng.uniform(0.5, 4.0));
    const CannyParams p{1.0, 0.05, 0.15};
    ASSERT_EQ(transpose(canny(img, p)), canny(transpose(img), p)) << "trial " << trial;
  }
}

TEST(Canny, EveryEdgeReachesAStrongPixel) {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    DepthImage img(32, 24);
    for (float& d : img.pixels()) d = rng.bernoulli(0.05) ? 0.0f : static_cast<float>(rng.uniform(0.5, 3.0));
    const CannyParams p{1.4, 0.05, 0.15};
    const EdgeMask m = canny(img, p);
    const auto mag = gradient_magnitude(img, p.sigma);
    // Flood the mask from strong, valid edge pixels; it must cover the mask.
    std::vector<std::uint8_t> seen(m.size(), 0);
    std::queue<int> q;
    for (int i = 0; i < static_cast<int>(m.size()); ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (m.pixels()[u] && mag[u] >= p.high && img.pixels()[u] > 0.0f) {
        seen[u] = 1;
        q.push(i);
      }
    }
    while (!q.empty()) {
      const int j = q.front();
      q.pop();
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = j % 32 + dx, y = j / 32 + dy;
          if (x < 0 || y < 0 || x >= 32 || y >= 24) continue;
          const auto k = static_cast<std::size_t>(y * 32 + x);
          if (m.pixels()[k] && !seen[k]) {
            seen[k] = 1;
            q.push(static_cast<int>(k));
          }
        }
      }
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m.pixels()[i]) ASSERT_TRUE(seen[i]);
      if (m.pixels()[i]) ASSERT_GE(mag[i], p.low);
    }
  }
}

TEST(Canny, Deterministic) {
  RngStream rng(6);
  DepthImage img(30, 20);
  for (float& d : img.pixels()) d = static_cast<float>(rng.uniform(0.5, 3.0));
  EXPECT_EQ(canny(img), canny(img));
}

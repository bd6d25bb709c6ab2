#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "unicon/exchange.hpp"
#include "unicon/trainer.hpp"

namespace unicon::toolkit {

struct CropWindow {
  int x = 0, y = 0;  // origin
  int w = 0, h = 0;  // size
  bool flipped = false;

  auto key() const { return std::tie(flipped, y, x, h, w); }
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

// Four corners and the center (floor division), each unflipped then flipped.
inline std::vector<CropWindow> tta_windows(int src_w, int src_h, int crop_w, int crop_h) {
  if (crop_w < 1 || crop_h < 1 || crop_w > src_w || crop_h > src_h)
    throw ValidationError("tta_windows: crop must fit inside the source");
  const int dx = src_w - crop_w, dy = src_h - crop_h;
  const std::pair<int, int> origins[] = {{0, 0}, {dx, 0}, {0, dy}, {dx, dy}, {dx / 2, dy / 2}};
  std::vector<CropWindow> out;
  for (bool flip : {false, true})
    for (auto [x, y] : origins) out.push_back({x, y, crop_w, crop_h, flip});
  return out;
}

// Produces one scene's features as seen through a crop window.
using WindowFeatureFn = std::function<SceneFeatures(const CropWindow&, const VideoDoc&, std::size_t scene)>;

// Runs full inference once per window, averages the raw logits per frame and
// applies the sigmoid. Windows are reduced in a canonical order, so the
// result is bitwise independent of the order they are passed in.
inline std::vector<std::vector<Vec>> tta_infer(const neural::ParamStore& params, const VideoDoc& video,
                                               const exchange::ExchangeConfig& config,
                                               std::vector<CropWindow> windows, const WindowFeatureFn& feature_fn) {
  if (windows.empty()) throw ValidationError("tta_infer: no windows");
  std::stable_sort(windows.begin(), windows.end(), [](const CropWindow& a, const CropWindow& b) { return a.key() < b.key(); });
  std::vector<std::vector<Vec>> sum;
  for (const CropWindow& win : windows) {
    VideoDoc view = video;
    for (std::size_t s = 0; s < view.scenes.size(); ++s) view.scenes[s].features = feature_fn(win, video, s);
    const auto logits = trainer::infer_logits(params, view, config);
    if (sum.empty()) {
      sum = logits;
      continue;
    }
    for (std::size_t s = 0; s < sum.size(); ++s)
      for (std::size_t i = 0; i < sum[s].size(); ++i) axpy(1.0, logits[s][i], sum[s][i]);
  }
  const double inv = 1.0 / static_cast<double>(windows.size());
  for (auto& scene : sum)
    for (auto& cand : scene)
      for (double& x : cand) x = neural::sigmoid(x * inv);
  return sum;
}

// Window-ignoring stub: every crop sees the stored features.
inline WindowFeatureFn identity_features() {
  return [](const CropWindow&, const VideoDoc& v, std::size_t s) { return v.scenes[s].features; };
}

namespace detail {
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace detail

// Window-sensitive stub: adds deterministic Gaussian jitter of the given scale,
// seeded by (window, video, scene), to r_v and r_av.
inline WindowFeatureFn jitter_features(double scale, std::uint64_t seed) {
  return [scale, seed](const CropWindow& w, const VideoDoc& v, std::size_t s) {
    SceneFeatures f = v.scenes[s].features;
    const std::string key = std::to_string(w.x) + "," + std::to_string(w.y) + "," + std::to_string(w.w) + "," +
                            std::to_string(w.h) + "," + (w.flipped ? "f" : "n") + "|" + v.video_id + "|" +
                            std::to_string(s);
    std::mt19937_64 rng(detail::fnv1a(key, seed ^ 1469598103934665603ULL));
    std::normal_distribution<double> n(0.0, scale);
    for (double& x : f.r_v) x += n(rng);
    for (double& x : f.r_av) x += n(rng);
    return f;
  };
}

}  // namespace unicon::toolkit

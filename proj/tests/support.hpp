#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "unicon/exchange.hpp"
#include "unicon/neural/params.hpp"

namespace testing_support {

using namespace unicon;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("unicon_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// A structurally valid random video. person_of(s, i) gives the 1-based identity.
template <typename PersonFn>
VideoDoc random_video(std::mt19937_64& rng, std::size_t scenes, std::size_t candidates, std::size_t frames,
                      std::size_t dim, int identities, PersonFn person_of) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VideoDoc v;
  v.video_id = "v" + std::to_string(rng() % 100000);
  v.identity_count = identities;
  for (std::size_t s = 0; s < scenes; ++s) {
    Scene sc;
    sc.index = static_cast<int>(s + 1);
    sc.scene_id = "s" + std::to_string(s + 1);
    sc.features = SceneFeatures(candidates, frames, dim);
    for (double& x : sc.features.r_v) x = n(rng);
    for (double& x : sc.features.r_av) x = n(rng);
    for (double& x : sc.features.p) x = u(rng);
    for (std::size_t i = 0; i < candidates; ++i) {
      FaceTrack t;
      t.track_id = sc.scene_id + "_" + std::to_string(i);
      t.person_id = person_of(s, i);
      for (std::size_t f = 0; f < frames; ++f) {
        const double w = 20.0 + 200.0 * u(rng);
        t.frames.push_back({static_cast<std::int64_t>(s * 10000 + f * 40), {10, 10, 10 + w, 10 + w},
                            u(rng) < 0.5 ? 1 : 0});
      }
      sc.candidates.push_back(std::move(t));
    }
    v.scenes.push_back(std::move(sc));
  }
  return v;
}

// He-initialized model with small noise on every entry (biases and h_init
// included), so no parameter is trivially zero.
inline neural::ParamStore noisy_model(const exchange::ModelDims& dims, std::uint64_t seed, double noise = 0.2) {
  neural::ParamStore p = exchange::make_model(dims);
  neural::he_init(p, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> n(0.0, noise);
  for (auto& [name, t] : p)
    for (double& x : t.values()) x += n(rng);
  return p;
}

// Independent scalar GRU step, written straight from the gate equations.
inline Vec reference_gru_step(const neural::ParamStore& p, const std::string& prefix, const Vec& x, const Vec& h) {
  const Tensor& wz = p[prefix + ".w_z"];
  const std::size_t H = wz.dim(0), I = wz.dim(1);
  auto affine = [&](const std::string& w, const std::string& u, const std::string& b, std::size_t k, bool with_u) {
    double a = 0.0;
    for (std::size_t j = 0; j < I; ++j) a += p[prefix + "." + w].at(k, j) * x[j];
    if (with_u)
      for (std::size_t j = 0; j < H; ++j) a += p[prefix + "." + u].at(k, j) * h[j];
    return a + (b.empty() ? 0.0 : p[prefix + "." + b][k]);
  };
  Vec out(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double z = 1.0 / (1.0 + std::exp(-affine("w_z", "u_z", "b_z", k, true)));
    const double r = 1.0 / (1.0 + std::exp(-affine("w_r", "u_r", "b_r", k, true)));
    double q = p[prefix + ".b_n"][k];
    for (std::size_t j = 0; j < H; ++j) q += p[prefix + ".u_n"].at(k, j) * h[j];
    const double n = std::tanh(affine("w_n", "", "", k, false) + r * q);
    out[k] = (1.0 - z) * n + z * h[k];
  }
  return out;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing_support

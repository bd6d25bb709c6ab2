#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "unicon/datamodel.hpp"
#include "unicon/toolkit/config.hpp"

namespace unicon::toolkit {

// Synthetic multi-scene corpus in which an identity's speech polarity is only
// weakly visible inside one scene but accumulates across its scenes.
//
//   b_k  ~ uniform{-delta, +delta}           per identity
//   y_t  ~ Bernoulli(speaking_rate)          per frame
//   r_av = (2 y_t - 1) b_k u + N(0, sigma^2 I)
//   r_v  = y_t gain v + N(0, sigma^2 I)
//
// u and v are fixed random unit directions. r_av separates speaking from
// silent frames strongly, but which side is "speaking" depends on sign(b_k);
// only the weak r_v channel ties the sides to labels.
struct SynthConfig {
  std::size_t videos = 40;
  std::size_t identities = 4;  // K per video
  std::size_t scenes = 8;      // S per video
  std::size_t candidates = 2;  // N per scene
  std::size_t frames = 20;     // T per scene
  std::size_t dim = 8;         // D
  double gain = 0.2;
  double delta = 0.7;
  double sigma = 0.5;
  double speaking_rate = 0.5;
  double label_flip = 0.0;
  double ambiguous_rate = 0.0;
  std::size_t val_videos = 4;
  std::size_t test_videos = 8;
  std::int64_t frame_ms = 40;
  std::uint64_t seed = 1;

  void validate() const {
    if (videos < 1 || identities < 1 || scenes < 1 || candidates < 1 || frames < 1 || dim < 1)
      throw ValidationError("synth: all counts must be >= 1");
    if (candidates > identities) throw ValidationError("synth: candidates per scene cannot exceed identities");
    if (!(delta > 0.0)) throw ValidationError("synth: delta must be > 0");
    if (!(sigma >= 0.0)) throw ValidationError("synth: sigma must be >= 0");
    for (double r : {speaking_rate, label_flip, ambiguous_rate})
      if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("synth: rates must lie in [0,1]");
    if (val_videos + test_videos > videos) throw ValidationError("synth: split larger than corpus");
    if (frame_ms < 1) throw ValidationError("synth: frame_ms must be >= 1");
  }
};

inline SynthConfig synth_config_from(KeyValues& kv) {
  SynthConfig c;
  kv.get("videos", c.videos);
  kv.get("identities", c.identities);
  kv.get("scenes", c.scenes);
  kv.get("candidates", c.candidates);
  kv.get("frames", c.frames);
  kv.get("dim", c.dim);
  kv.get("gain", c.gain);
  kv.get("delta", c.delta);
  kv.get("sigma", c.sigma);
  kv.get("speaking_rate", c.speaking_rate);
  kv.get("label_flip", c.label_flip);
  kv.get("ambiguous_rate", c.ambiguous_rate);
  kv.get("val_videos", c.val_videos);
  kv.get("test_videos", c.test_videos);
  kv.get("frame_ms", c.frame_ms);
  kv.get("seed", c.seed);
  return c;
}

struct SynthTruth {
  Vec u;                         // r_av direction
  Vec v;                         // r_v direction
  std::vector<Vec> bias;         // [video][person_id - 1]
  std::vector<std::vector<std::vector<std::vector<int>>>> true_labels;  // [video][scene][cand][t]
};

struct SynthCorpus {
  Corpus corpus;
  SynthTruth truth;
};

namespace detail {

inline Vec random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec out(d);
  double s = 0.0;
  do {
    s = 0.0;
    for (double& x : out) {
      x = n(rng);
      s += x * x;
    }
  } while (s == 0.0);
  for (double& x : out) x /= std::sqrt(s);
  return out;
}

inline std::string pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace detail

inline SynthCorpus gen_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SynthCorpus out;
  out.truth.u = detail::random_unit(cfg.dim, rng);
  out.truth.v = detail::random_unit(cfg.dim, rng);
  const std::int64_t scene_gap_ms = 1000;
  const std::size_t n_train = cfg.videos - cfg.val_videos - cfg.test_videos;

  for (std::size_t vi = 0; vi < cfg.videos; ++vi) {
    VideoDoc v;
    v.video_id = "vid" + detail::pad(vi, 3);
    v.split = vi < n_train ? "train" : (vi < n_train + cfg.val_videos ? "val" : "test");
    Vec bias(cfg.identities);
    for (double& b : bias) b = unif(rng) < 0.5 ? -cfg.delta : cfg.delta;
    std::vector<std::vector<std::vector<int>>> video_truth;
    for (std::size_t s = 0; s < cfg.scenes; ++s) {
      Scene scene;
      scene.index = static_cast<int>(s + 1);
      scene.scene_id = "s" + detail::pad(s + 1, 2);
      scene.features = SceneFeatures(cfg.candidates, cfg.frames, cfg.dim);
      std::vector<std::size_t> ids(cfg.identities);
      for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
      for (std::size_t i = 0; i < cfg.candidates; ++i) {
        std::uniform_int_distribution<std::size_t> j(i, ids.size() - 1);
        std::swap(ids[i], ids[j(rng)]);
      }
      const std::int64_t start = static_cast<std::int64_t>(s) *
                                 (static_cast<std::int64_t>(cfg.frames) * cfg.frame_ms + scene_gap_ms);
      std::vector<std::vector<int>> scene_truth;
      for (std::size_t i = 0; i < cfg.candidates; ++i) {
        FaceTrack tr;
        tr.track_id = scene.scene_id + "c" + std::to_string(i);
        tr.ambiguous = unif(rng) < cfg.ambiguous_rate;
        double b = bias[ids[i]];
        if (tr.ambiguous) {
          // An unrelated one-off person with its own polarity.
          b = unif(rng) < 0.5 ? -cfg.delta : cfg.delta;
          bias.push_back(b);
          tr.person_id = static_cast<int>(bias.size());
        } else {
          tr.person_id = static_cast<int>(ids[i] + 1);
        }
        const double width = 32.0 + 192.0 * unif(rng);
        const double cx = 200.0 + 880.0 * unif(rng), cy = 200.0 + 320.0 * unif(rng);
        std::vector<int> truth_labels;
        for (std::size_t t = 0; t < cfg.frames; ++t) {
          const int y = unif(rng) < cfg.speaking_rate ? 1 : 0;
          truth_labels.push_back(y);
          const std::size_t off = (i * cfg.frames + t) * cfg.dim;
          for (std::size_t d = 0; d < cfg.dim; ++d) {
            scene.features.r_av[off + d] = (2.0 * y - 1.0) * b * out.truth.u[d] + cfg.sigma * noise(rng);
            scene.features.r_v[off + d] = y * cfg.gain * out.truth.v[d] + cfg.sigma * noise(rng);
          }
          scene.features.p[i * cfg.frames + t] = 0.5;
          FrameObs f;
          f.timestamp_ms = start + static_cast<std::int64_t>(t) * cfg.frame_ms;
          const double jitter = std::round((unif(rng) - 0.5) * 4.0);
          f.bbox = {std::round(cx - width / 2) + jitter, std::round(cy - 0.6 * width),
                    std::round(cx - width / 2) + jitter + std::round(width), std::round(cy + 0.6 * width)};
          f.label = unif(rng) < cfg.label_flip ? 1 - y : y;
          tr.frames.push_back(f);
        }
        scene_truth.push_back(std::move(truth_labels));
        scene.candidates.push_back(std::move(tr));
      }
      video_truth.push_back(std::move(scene_truth));
      v.scenes.push_back(std::move(scene));
    }
    v.identity_count = static_cast<int>(bias.size());
    out.truth.bias.push_back(std::move(bias));
    out.truth.true_labels.push_back(std::move(video_truth));
    out.corpus.push_back(std::move(v));
  }
  return out;
}

inline std::vector<const VideoDoc*> videos_in_split(const Corpus& c, const std::string& split) {
  std::vector<const VideoDoc*> out;
  for (const VideoDoc& v : c)
    if (split.empty() || split == "all" || v.split == split) out.push_back(&v);
  return out;
}

}  // namespace unicon::toolkit

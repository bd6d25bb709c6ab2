#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "unicon/error.hpp"
#include "unicon/tensor.hpp"

namespace unicon {

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct FrameObs {
  std::int64_t timestamp_ms = 0;
  BBox bbox;
  int label = 0;

  double seconds() const { return static_cast<double>(timestamp_ms) / 1000.0; }
  double face_width_px() const { return bbox.x2 - bbox.x1; }

  friend bool operator==(const FrameObs&, const FrameObs&) = default;
};

struct FaceTrack {
  std::string track_id;
  int person_id = 0;  // 1-based identity index; 0 means unassigned
  bool ambiguous = false;
  std::vector<FrameObs> frames;

  friend bool operator==(const FaceTrack&, const FaceTrack&) = default;
};

// Per-candidate contextual features of one scene. r_v and r_av are
// [N x T x D], p is [N x T].
struct SceneFeatures {
  std::size_t candidates = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  Vec r_v;
  Vec r_av;
  Vec p;

  SceneFeatures() = default;
  SceneFeatures(std::size_t n, std::size_t t, std::size_t d)
      : candidates(n), frames(t), dim(d), r_v(n * t * d), r_av(n * t * d), p(n * t) {}

  ConstMatrix rv(std::size_t i) const {
    return {std::span<const double>(r_v).subspan(i * frames * dim, frames * dim), frames, dim};
  }
  ConstMatrix rav(std::size_t i) const {
    return {std::span<const double>(r_av).subspan(i * frames * dim, frames * dim), frames, dim};
  }
  std::span<const double> scores(std::size_t i) const {
    return std::span<const double>(p).subspan(i * frames, frames);
  }

  friend bool operator==(const SceneFeatures&, const SceneFeatures&) = default;
};

struct Scene {
  std::string scene_id;
  int index = 0;  // 1-based position in the video
  std::vector<FaceTrack> candidates;
  SceneFeatures features;

  std::size_t frame_count() const {
    return candidates.empty() ? 0 : candidates.front().frames.size();
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct VideoDoc {
  std::string video_id;
  int identity_count = 0;  // K
  std::string split;       // free-form tag ("train", "val", "test" or empty)
  std::vector<Scene> scenes;

  friend bool operator==(const VideoDoc&, const VideoDoc&) = default;
};

using Corpus = std::vector<VideoDoc>;

namespace detail {
inline void fail(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}
}  // namespace detail

// Checks every structural invariant. When require_identities is false,
// person_id 0 (unassigned) is accepted.
inline void validate(const VideoDoc& v, bool require_identities = true) {
  const std::string vw = "video " + v.video_id;
  if (v.video_id.empty()) detail::fail("video", "empty video_id");
  if (require_identities && v.identity_count < 1) detail::fail(vw, "identity_count must be >= 1");
  std::set<std::string> track_ids;
  std::map<int, std::string> ambiguous_owner;
  std::map<int, int> person_uses;
  int prev_index = 0;
  for (const Scene& s : v.scenes) {
    const std::string sw = vw + " scene " + s.scene_id;
    if (s.index != prev_index + 1)
      detail::fail(sw, "scene indices must be contiguous from 1, got " + std::to_string(s.index));
    prev_index = s.index;
    if (s.candidates.empty()) detail::fail(sw, "scene has no candidates");
    const std::size_t t = s.frame_count();
    if (t < 1) detail::fail(sw, "scene has no frames");
    for (const FaceTrack& tr : s.candidates) {
      const std::string tw = vw + " track " + tr.track_id;
      if (!track_ids.insert(tr.track_id).second) detail::fail(tw, "duplicate track id");
      if (tr.frames.size() != t)
        detail::fail(tw, "track length " + std::to_string(tr.frames.size()) +
                             " differs from scene length " + std::to_string(t));
      if (require_identities || tr.person_id != 0) {
        if (tr.person_id < 1 || tr.person_id > v.identity_count)
          detail::fail(tw, "person_id " + std::to_string(tr.person_id) + " outside [1," +
                               std::to_string(v.identity_count) + "]");
        ++person_uses[tr.person_id];
        if (tr.ambiguous) ambiguous_owner[tr.person_id] = tr.track_id;
      }
      for (std::size_t f = 0; f < tr.frames.size(); ++f) {
        const FrameObs& fo = tr.frames[f];
        if (!(fo.bbox.x2 > fo.bbox.x1) || !(fo.bbox.y2 > fo.bbox.y1))
          detail::fail(tw, "bbox invariant violated at frame " + std::to_string(f) +
                               " (need x2 > x1 and y2 > y1)");
        if (fo.label != 0 && fo.label != 1)
          detail::fail(tw, "label must be 0 or 1");
        if (f > 0 && fo.timestamp_ms <= tr.frames[f - 1].timestamp_ms)
          detail::fail(tw, "timestamps must be strictly increasing");
      }
    }
    const SceneFeatures& sf = s.features;
    if (sf.candidates != s.candidates.size() || sf.frames != t)
      detail::fail(sw, "feature block shape [" + std::to_string(sf.candidates) + "x" +
                           std::to_string(sf.frames) + "] does not match scene [" +
                           std::to_string(s.candidates.size()) + "x" + std::to_string(t) + "]");
    if (sf.dim < 1) detail::fail(sw, "feature dimension must be >= 1");
    const std::size_t n = sf.candidates * sf.frames;
    if (sf.r_v.size() != n * sf.dim || sf.r_av.size() != n * sf.dim || sf.p.size() != n)
      detail::fail(sw, "feature arrays have inconsistent sizes");
    for (double x : sf.p)
      if (!(x >= 0.0 && x <= 1.0)) detail::fail(sw, "scene score outside [0,1]");
  }
  for (const auto& [pid, owner] : ambiguous_owner)
    if (person_uses[pid] > 1)
      detail::fail(vw + " track " + owner, "ambiguous track shares its identity with another track");
}

inline void validate(const Corpus& c, bool require_identities = true) {
  std::set<std::string> ids;
  for (const VideoDoc& v : c) {
    if (!ids.insert(v.video_id).second) throw ValidationError("duplicate video id " + v.video_id);
    validate(v, require_identities);
  }
  if (!c.empty()) {
    const std::size_t d = c.front().scenes.empty() ? 0 : c.front().scenes.front().features.dim;
    for (const VideoDoc& v : c)
      for (const Scene& s : v.scenes)
        if (s.features.dim != d)
          throw ValidationError("video " + v.video_id + " scene " + s.scene_id +
                                ": feature dimension differs across the corpus");
  }
}

// Assigns person ids from a track -> cluster map. Cluster labels are
// renumbered 1..K' in first-appearance order; ambiguous tracks always get
// fresh singleton identities after that.
inline VideoDoc build_identity_map(const VideoDoc& video, const std::map<std::string, int>& assignment) {
  std::set<std::string> known;
  for (const Scene& s : video.scenes)
    for (const FaceTrack& t : s.candidates) known.insert(t.track_id);
  for (const auto& [track, cluster] : assignment)
    if (!known.count(track)) throw ValidationError("assignment references unknown track " + track);

  VideoDoc out = video;
  std::map<int, int> renumber;
  int next = 1;
  for (Scene& s : out.scenes)
    for (FaceTrack& t : s.candidates) {
      if (t.ambiguous) continue;
      auto it = assignment.find(t.track_id);
      if (it == assignment.end()) throw ValidationError("assignment is missing track " + t.track_id);
      auto [slot, inserted] = renumber.emplace(it->second, next);
      if (inserted) ++next;
      t.person_id = slot->second;
    }
  for (Scene& s : out.scenes)
    for (FaceTrack& t : s.candidates)
      if (t.ambiguous) t.person_id = next++;
  out.identity_count = next - 1;
  return out;
}

}  // namespace unicon

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "unicon/datamodel.hpp"
#include "unicon/tensor.hpp"

namespace unicon::cluster {

inline constexpr double kDefaultThreshold = 0.55;
inline constexpr double kDefaultPenalty = 10.0;

struct TrackEmbedding {
  std::string track_id;
  Vec vector;
  std::size_t frame_count = 1;
};

// Unordered pairs of overlapping track indices.
class OverlapGraph {
 public:
  void add(std::size_t a, std::size_t b) {
    if (a == b) throw ValidationError("overlap graph: a track cannot overlap itself");
    edges_.insert(std::pair<std::size_t, std::size_t>(std::minmax(a, b)));
  }
  bool contains(std::size_t a, std::size_t b) const { return edges_.count(std::pair<std::size_t, std::size_t>(std::minmax(a, b))) > 0; }
  std::size_t size() const { return edges_.size(); }
  const std::set<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }

 private:
  std::set<std::pair<std::size_t, std::size_t>> edges_;
};

struct Merge {
  std::size_t a = 0;  // cluster node ids: 0..n-1 are tracks, n+k is the k-th merge
  std::size_t b = 0;
  double distance = 0.0;
};

struct ClusterResult {
  std::vector<int> labels;  // per track, contiguous from 1 in order of first member
  std::vector<Merge> trace;

  int cluster_count() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()); }
};

inline Vec average_frames(ConstMatrix frames) {
  if (frames.rows == 0) throw ValidationError("average_frames: need at least one frame");
  Vec out(frames.cols, 0.0);
  for (std::size_t m = 0; m < frames.rows; ++m)
    for (std::size_t e = 0; e < frames.cols; ++e) {
      const double x = frames(m, e);
      if (!std::isfinite(x)) throw ValidationError("average_frames: non-finite embedding value");
      out[e] += x;
    }
  for (double& x : out) x /= static_cast<double>(frames.rows);
  return out;
}

// d(a,b) = 1 - cos(a,b) + penalty * [a and b overlap]; zero diagonal.
inline Tensor pairwise_distances(const std::vector<TrackEmbedding>& emb, const OverlapGraph& overlap,
                                 double penalty) {
  if (penalty < 0.0) throw ValidationError("pairwise_distances: penalty must be >= 0");
  const std::size_t n = emb.size();
  Vec norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double x : emb[i].vector) s += x * x;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw ValidationError("zero-norm embedding for track " + emb[i].track_id);
    if (emb[i].vector.size() != emb[0].vector.size())
      throw ValidationError("embedding width differs for track " + emb[i].track_id);
  }
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t e = 0; e < emb[i].vector.size(); ++e) dot += emb[i].vector[e] * emb[j].vector[e];
      const double cos = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      const double v = (1.0 - cos) + (overlap.contains(i, j) ? penalty : 0.0);
      d.at(i, j) = d.at(j, i) = v;
    }
  return d;
}

// Average-linkage agglomeration; stops once the closest pair of clusters is
// farther apart than threshold. Ties go to the pair with the smallest
// (min member index, min member index).
inline ClusterResult ahc(const Tensor& distances, double threshold) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1))
    throw ValidationError("ahc: distance matrix must be square");
  const std::size_t n = distances.dim(0);
  struct Node {
    std::size_t id;
    std::size_t size;
    std::size_t min_member;
    std::vector<std::size_t> members;
  };
  std::vector<Node> active;
  for (std::size_t i = 0; i < n; ++i) active.push_back({i, 1, i, {i}});
  // linkage[a][b] between active slots, kept in sync with `active`.
  std::vector<Vec> link(n, Vec(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) link[i][j] = distances.at(i, j);

  ClusterResult res;
  std::size_t next_id = n;
  while (active.size() > 1) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> best_key{n, n};
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double v = link[i][j];
        const std::pair<std::size_t, std::size_t> key = std::minmax(active[i].min_member, active[j].min_member);
        if (v < best || (v == best && key < best_key)) {
          best = v;
          best_key = key;
          bi = i;
          bj = j;
        }
      }
    if (!(best <= threshold)) break;
    res.trace.push_back({active[bi].id, active[bj].id, best});
    // Lance-Williams update for average linkage.
    const double wi = static_cast<double>(active[bi].size), wj = static_cast<double>(active[bj].size);
    for (std::size_t k = 0; k < active.size(); ++k) {
      if (k == bi || k == bj) continue;
      const double v = (wi * link[bi][k] + wj * link[bj][k]) / (wi + wj);
      link[bi][k] = link[k][bi] = v;
    }
    Node merged{next_id++, active[bi].size + active[bj].size,
                std::min(active[bi].min_member, active[bj].min_member), active[bi].members};
    merged.members.insert(merged.members.end(), active[bj].members.begin(), active[bj].members.end());
    active[bi] = std::move(merged);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
    link.erase(link.begin() + static_cast<std::ptrdiff_t>(bj));
    for (auto& row : link) row.erase(row.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  std::sort(active.begin(), active.end(), [](const Node& a, const Node& b) { return a.min_member < b.min_member; });
  res.labels.assign(n, 0);
  for (std::size_t c = 0; c < active.size(); ++c)
    for (std::size_t m : active[c].members) res.labels[m] = static_cast<int>(c + 1);
  return res;
}

// Tracks overlap when their frame time spans intersect.
inline OverlapGraph temporal_overlaps(const std::vector<const FaceTrack*>& tracks) {
  OverlapGraph g;
  for (std::size_t i = 0; i < tracks.size(); ++i)
    for (std::size_t j = i + 1; j < tracks.size(); ++j) {
      const auto& a = tracks[i]->frames;
      const auto& b = tracks[j]->frames;
      if (a.empty() || b.empty()) continue;
      if (a.front().timestamp_ms <= b.back().timestamp_ms && b.front().timestamp_ms <= a.back().timestamp_ms)
        g.add(i, j);
    }
  return g;
}

// Clusters the non-ambiguous tracks of a video and turns clusters into
// identities; ambiguous tracks stay singletons.
inline VideoDoc assign(const VideoDoc& video, const std::map<std::string, Vec>& embeddings,
                       double threshold = kDefaultThreshold, double penalty = kDefaultPenalty) {
  std::vector<const FaceTrack*> tracks;
  std::vector<TrackEmbedding> emb;
  for (const Scene& s : video.scenes)
    for (const FaceTrack& t : s.candidates) {
      if (t.ambiguous) continue;
      auto it = embeddings.find(t.track_id);
      if (it == embeddings.end()) throw ValidationError("missing embedding for track " + t.track_id);
      tracks.push_back(&t);
      emb.push_back({t.track_id, it->second, t.frames.size()});
    }
  std::map<std::string, int> assignment;
  if (!tracks.empty()) {
    const ClusterResult res = ahc(pairwise_distances(emb, temporal_overlaps(tracks), penalty), threshold);
    for (std::size_t i = 0; i < tracks.size(); ++i) assignment[tracks[i]->track_id] = res.labels[i];
  }
  return build_identity_map(video, assignment);
}

}  // namespace unicon::cluster

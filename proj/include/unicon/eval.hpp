#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unicon/corpus_io.hpp"
#include "unicon/csv.hpp"
#include "unicon/format.hpp"

namespace unicon::eval {

struct PredictionRecord {
  std::string video_id;
  std::string track_id;
  std::int64_t timestamp_ms = 0;
  double score = 0.0;
  int label = 0;
  double face_width_px = 0.0;
};

// Piecewise-linear interpolation of a track's scores onto annotation
// timestamps, clamped to the end values outside the predicted span.
// model_ts must be strictly increasing.
inline Vec interpolate(std::span<const std::int64_t> model_ts, std::span<const double> scores,
                       std::span<const std::int64_t> annotation_ts) {
  if (model_ts.empty()) throw ValidationError("interpolate: empty prediction track");
  if (model_ts.size() != scores.size()) throw ValidationError("interpolate: timestamp/score length mismatch");
  Vec out;
  out.reserve(annotation_ts.size());
  for (std::int64_t t : annotation_ts) {
    if (t <= model_ts.front()) {
      out.push_back(scores.front());
      continue;
    }
    if (t >= model_ts.back()) {
      out.push_back(scores.back());
      continue;
    }
    const auto hi = static_cast<std::size_t>(std::upper_bound(model_ts.begin(), model_ts.end(), t) - model_ts.begin());
    const std::size_t lo = hi - 1;
    if (model_ts[lo] == t) {
      out.push_back(scores[lo]);
      continue;
    }
    const double w = static_cast<double>(t - model_ts[lo]) / static_cast<double>(model_ts[hi] - model_ts[lo]);
    out.push_back(scores[lo] + w * (scores[hi] - scores[lo]));
  }
  return out;
}

// Rank order: score descending, ties kept in record order.
inline std::vector<std::size_t> ranking(std::span<const PredictionRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].score > records[b].score; });
  return order;
}

// Step-wise AP: sum over recall increments of (R_k - R_{k-1}) * P_k.
inline double average_precision(std::span<const PredictionRecord> records) {
  std::size_t positives = 0;
  for (const auto& r : records) positives += r.label == 1;
  if (positives == 0) throw ValidationError("average_precision: no positive labels, AP undefined");
  double ap = 0.0;
  std::size_t tp = 0, rank = 0;
  for (std::size_t idx : ranking(records)) {
    ++rank;
    if (records[idx].label != 1) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(rank);
  }
  return ap / static_cast<double>(positives);
}

// Single-class AP pooled over every record of every video.
inline double mean_ap(std::span<const PredictionRecord> records) { return average_precision(records); }

struct CurvePoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct Curves {
  std::vector<CurvePoint> points;  // one per distinct score, descending threshold
  double auc = 0.0;
  CurvePoint balanced;  // operating point at threshold 0.5
  double balanced_accuracy = 0.0;
};

inline Curves roc_pr_curves(std::span<const PredictionRecord> records) {
  std::size_t pos = 0, neg = 0;
  for (const auto& r : records) (r.label == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) throw ValidationError("roc_pr_curves: both classes must be present");
  const auto order = ranking(records);
  Curves c;
  std::size_t tp = 0, fp = 0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double thr = records[order[k]].score;
    while (k < order.size() && records[order[k]].score == thr) {
      (records[order[k]].label == 1 ? tp : fp)++;
      ++k;
    }
    CurvePoint p;
    p.threshold = thr;
    p.tpr = p.recall = static_cast<double>(tp) / static_cast<double>(pos);
    p.fpr = static_cast<double>(fp) / static_cast<double>(neg);
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    c.auc += (p.fpr - prev_fpr) * (p.tpr + prev_tpr) * 0.5;
    prev_tpr = p.tpr;
    prev_fpr = p.fpr;
    c.points.push_back(p);
  }
  std::size_t tp5 = 0, fp5 = 0;
  for (const auto& r : records)
    if (r.score >= 0.5) (r.label == 1 ? tp5 : fp5)++;
  c.balanced.threshold = 0.5;
  c.balanced.tpr = c.balanced.recall = static_cast<double>(tp5) / static_cast<double>(pos);
  c.balanced.fpr = static_cast<double>(fp5) / static_cast<double>(neg);
  c.balanced.precision = tp5 + fp5 ? static_cast<double>(tp5) / static_cast<double>(tp5 + fp5) : 1.0;
  c.balanced_accuracy = 0.5 * (c.balanced.tpr + 1.0 - c.balanced.fpr);
  return c;
}

enum class FaceSize { small, medium, large };

inline const char* to_string(FaceSize s) {
  switch (s) {
    case FaceSize::small: return "small";
    case FaceSize::medium: return "medium";
    case FaceSize::large: return "large";
  }
  return "?";
}

// small: w < 64, medium: 64 <= w < 128, large: w >= 128.
inline FaceSize face_size_bucket(double width_px) {
  if (!(width_px >= 0.0)) throw ValidationError("negative face width");
  if (width_px < 64.0) return FaceSize::small;
  if (width_px < 128.0) return FaceSize::medium;
  return FaceSize::large;
}

struct FaceSizePartition {
  std::vector<PredictionRecord> small, medium, large;
};

inline FaceSizePartition partition_by_face_size(std::span<const PredictionRecord> records) {
  FaceSizePartition out;
  for (const auto& r : records) {
    switch (face_size_bucket(r.face_width_px)) {
      case FaceSize::small: out.small.push_back(r); break;
      case FaceSize::medium: out.medium.push_back(r); break;
      case FaceSize::large: out.large.push_back(r); break;
    }
  }
  return out;
}

// ---- reports and files ---------------------------------------------------

struct PartitionSummary {
  std::string name;
  std::size_t records = 0;
  double map = std::numeric_limits<double>::quiet_NaN();
  double auc = std::numeric_limits<double>::quiet_NaN();
  double bal_acc_fpr = std::numeric_limits<double>::quiet_NaN();
  double bal_acc_tpr = std::numeric_limits<double>::quiet_NaN();
  std::vector<CurvePoint> curve;
};

inline PartitionSummary summarize(std::string name, std::span<const PredictionRecord> records) {
  PartitionSummary s;
  s.name = std::move(name);
  s.records = records.size();
  std::size_t pos = 0;
  for (const auto& r : records) pos += r.label == 1;
  if (pos > 0) s.map = mean_ap(records);
  if (pos > 0 && pos < records.size()) {
    Curves c = roc_pr_curves(records);
    s.auc = c.auc;
    s.bal_acc_fpr = c.balanced.fpr;
    s.bal_acc_tpr = c.balanced.tpr;
    s.curve = std::move(c.points);
  }
  return s;
}

// "all" followed by the three face-size partitions.
inline std::vector<PartitionSummary> evaluate(std::span<const PredictionRecord> records) {
  const FaceSizePartition parts = partition_by_face_size(records);
  return {summarize("all", records), summarize("small", parts.small), summarize("medium", parts.medium),
          summarize("large", parts.large)};
}

inline std::string pr_csv(std::span<const CurvePoint> curve) {
  std::string out = "recall,precision\n";
  for (const auto& p : curve) out += format_double(p.recall) + "," + format_double(p.precision) + "\n";
  return out;
}

inline std::string roc_csv(std::span<const CurvePoint> curve) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : curve) out += format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
  return out;
}

inline std::string summary_csv(std::span<const PartitionSummary> parts) {
  std::string out = "partition,records,map,auc,bal_acc_fpr,bal_acc_tpr\n";
  for (const auto& p : parts)
    out += p.name + "," + std::to_string(p.records) + "," + format_double(p.map) + "," + format_double(p.auc) + "," +
           format_double(p.bal_acc_fpr) + "," + format_double(p.bal_acc_tpr) + "\n";
  return out;
}

// Writes pr.csv / roc.csv for the first partition ("all"), per-partition
// pr_<name>.csv / roc_<name>.csv for the rest, and summary.csv.
inline void emit_curves(std::span<const PartitionSummary> parts, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string suffix = i == 0 ? "" : "_" + parts[i].name;
    csv::write_file((dir / ("pr" + suffix + ".csv")).string(), pr_csv(parts[i].curve));
    csv::write_file((dir / ("roc" + suffix + ".csv")).string(), roc_csv(parts[i].curve));
  }
  csv::write_file((dir / "summary.csv").string(), summary_csv(parts));
}

// ---- prediction / annotation files ----------------------------------------

struct ScoredFrame {
  std::string video_id;
  std::string track_id;
  std::int64_t timestamp_ms = 0;
  double score = 0.0;
};

inline std::string predictions_csv(std::span<const ScoredFrame> rows) {
  std::string out = "video_id,track_id,timestamp,score\n";
  for (const auto& r : rows)
    out += r.video_id + "," + r.track_id + "," + format_ms(r.timestamp_ms) + "," + format_double(r.score) + "\n";
  return out;
}

inline std::vector<ScoredFrame> read_predictions(const std::string& path) {
  const csv::Table t = csv::read(path);
  const std::size_t cv = t.column("video_id"), ct = t.column("track_id"), cts = t.column("timestamp"),
                    cs = t.column("score");
  std::vector<ScoredFrame> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    try {
      ScoredFrame f{t.rows[i][cv], t.rows[i][ct], parse_ms(t.rows[i][cts]), parse_double(t.rows[i][cs])};
      if (!std::isfinite(f.score) || f.score < 0.0 || f.score > 1.0) throw ValidationError("score outside [0,1]");
      out.push_back(std::move(f));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(t.line_numbers[i]) + ": " + e.what());
    }
  }
  return out;
}

struct AnnotatedTrack {
  std::string video_id;
  std::string track_id;
  std::vector<FrameObs> frames;
};

// Annotations from a corpus directory (every <video>/labels.csv) or from a
// single CSV with a leading video_id column.
inline std::vector<AnnotatedTrack> read_annotations(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<AnnotatedTrack> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_directory() && fs::exists(e.path() / "labels.csv")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs)
      for (auto& [track, frames] : read_labels((d / "labels.csv").string()))
        out.push_back({d.filename().string(), track, std::move(frames)});
    return out;
  }
  if (!fs::exists(path)) throw IoError("annotation path not found: " + path.string());
  const csv::Table t = csv::read(path.string());
  const std::size_t cv = t.column("video_id"), ct = t.column("track_id"), cts = t.column("timestamp"),
                    c1 = t.column("x1"), c2 = t.column("y1"), c3 = t.column("x2"), c4 = t.column("y2"),
                    cl = t.column("label");
  std::map<std::pair<std::string, std::string>, std::vector<FrameObs>> grouped;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      FrameObs f;
      f.timestamp_ms = parse_ms(row[cts]);
      f.bbox = {parse_double(row[c1]), parse_double(row[c2]), parse_double(row[c3]), parse_double(row[c4])};
      f.label = static_cast<int>(parse_int(row[cl]));
      grouped[{row[cv], row[ct]}].push_back(f);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(t.line_numbers[i]) + ": " + e.what());
    }
  }
  for (auto& [key, frames] : grouped) out.push_back({key.first, key.second, std::move(frames)});
  return out;
}

// Interpolates predictions onto every annotated frame. Annotated tracks
// without any prediction are an error.
inline std::vector<PredictionRecord> join(std::span<const ScoredFrame> predictions,
                                          std::span<const AnnotatedTrack> annotations) {
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::int64_t, double>>> tracks;
  for (const auto& p : predictions) tracks[{p.video_id, p.track_id}].emplace_back(p.timestamp_ms, p.score);
  std::vector<PredictionRecord> out;
  for (const auto& a : annotations) {
    auto it = tracks.find({a.video_id, a.track_id});
    if (it == tracks.end())
      throw ValidationError("no predictions for video " + a.video_id + " track " + a.track_id);
    auto pts = it->second;
    std::sort(pts.begin(), pts.end());
    std::vector<std::int64_t> ts;
    Vec sc;
    for (const auto& [t, s] : pts) {
      if (!ts.empty() && ts.back() == t) throw ValidationError("duplicate prediction timestamp in track " + a.track_id);
      ts.push_back(t);
      sc.push_back(s);
    }
    std::vector<std::int64_t> ann_ts;
    for (const auto& f : a.frames) ann_ts.push_back(f.timestamp_ms);
    const Vec scores = interpolate(ts, sc, ann_ts);
    for (std::size_t i = 0; i < a.frames.size(); ++i)
      out.push_back({a.video_id, a.track_id, a.frames[i].timestamp_ms, scores[i], a.frames[i].label,
                     a.frames[i].face_width_px()});
  }
  return out;
}

}  // namespace unicon::eval

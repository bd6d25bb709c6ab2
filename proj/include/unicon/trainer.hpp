#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unicon/eval.hpp"
#include "unicon/exchange.hpp"
#include "unicon/neural/optim.hpp"
#include "unicon/neural/params.hpp"

namespace unicon::trainer {

using exchange::ExchangeConfig;
using neural::ParamStore;

struct LossBreakdown {
  double l_av = 0.0;
  double l_v = 0.0;
  double l_joint = 0.0;
  double l_cross = 0.0;
  double total = 0.0;
};

// A training example: an ordered subset of one video's scenes.
struct VideoSlice {
  const VideoDoc* video = nullptr;
  std::vector<std::size_t> scenes;
};

namespace detail {

inline double aux_logit(const neural::LinearView& head, std::span<const double> x) {
  double out = 0.0;
  neural::linear_forward(head, x, std::span<double>(&out, 1));
  return out;
}

}  // namespace detail

// L = L_av + L_v + L_joint + L_cross, each a frame-averaged BCE over every
// candidate frame of the slice:
//   l_cross: exchange classifier logits
//   l_joint: scene scorer logits
//   l_v / l_av: per-frame linear heads on r_v / r_av
// When grads is given, grad_scale * dL/dtheta is added to it.
inline LossBreakdown total_loss(const ParamStore& params, const VideoSlice& slice, const ExchangeConfig& config,
                                ParamStore* grads = nullptr, double grad_scale = 1.0) {
  const exchange::ForwardPass fp = exchange::forward(params, *slice.video, slice.scenes, config);
  const auto head_v = neural::linear_view(params, "head_v");
  const auto head_av = neural::linear_view(params, "head_av");
  Vec cls, joint, lv, lav;
  std::vector<int> labels;
  for (std::size_t si = 0; si < fp.cand.size(); ++si) {
    const SceneFeatures& feats = slice.video->scenes[fp.scenes[si]].features;
    for (std::size_t i = 0; i < fp.cand[si].size(); ++i) {
      const auto& c = fp.cand[si][i];
      cls.insert(cls.end(), c.logits.begin(), c.logits.end());
      joint.insert(joint.end(), c.scorer_logits.begin(), c.scorer_logits.end());
      labels.insert(labels.end(), c.labels.begin(), c.labels.end());
      const ConstMatrix rv = feats.rv(i), rav = feats.rav(i);
      for (std::size_t t = 0; t < rv.rows; ++t) {
        lv.push_back(detail::aux_logit(head_v, rv.row(t)));
        lav.push_back(detail::aux_logit(head_av, rav.row(t)));
      }
    }
  }
  const auto b_cross = neural::bce_mean(cls, labels);
  const auto b_joint = neural::bce_mean(joint, labels);
  const auto b_v = neural::bce_mean(lv, labels);
  const auto b_av = neural::bce_mean(lav, labels);
  LossBreakdown out{b_av.loss, b_v.loss, b_joint.loss, b_cross.loss, 0.0};
  out.total = out.l_av + out.l_v + out.l_joint + out.l_cross;
  if (!grads) return out;

  ParamStore local = params.zeros_like();
  exchange::LogitGrads up;
  up.cls.resize(fp.cand.size());
  up.scorer.resize(fp.cand.size());
  const auto gv = neural::linear_grad(local, "head_v");
  const auto gav = neural::linear_grad(local, "head_av");
  std::size_t offset = 0;
  for (std::size_t si = 0; si < fp.cand.size(); ++si) {
    const SceneFeatures& feats = slice.video->scenes[fp.scenes[si]].features;
    for (std::size_t i = 0; i < fp.cand[si].size(); ++i) {
      const std::size_t t_len = fp.cand[si][i].logits.size();
      const auto at = [&](const Vec& g) {
        return Vec(g.begin() + static_cast<std::ptrdiff_t>(offset),
                   g.begin() + static_cast<std::ptrdiff_t>(offset + t_len));
      };
      up.cls[si].push_back(at(b_cross.grad_logits));
      up.scorer[si].push_back(at(b_joint.grad_logits));
      const ConstMatrix rv = feats.rv(i), rav = feats.rav(i);
      for (std::size_t t = 0; t < t_len; ++t) {
        neural::linear_backward(head_v, rv.row(t), std::span<const double>(&b_v.grad_logits[offset + t], 1), gv);
        neural::linear_backward(head_av, rav.row(t), std::span<const double>(&b_av.grad_logits[offset + t], 1), gav);
      }
      offset += t_len;
    }
  }
  exchange::backward(params, fp, up, local);
  for (auto& [name, g] : *grads) axpy(grad_scale, local[name].span(), g.span());
  return out;
}

// ---- inference helpers -------------------------------------------------------

// Classifier logits for every candidate frame of a full video: [scene][candidate][frame].
inline std::vector<std::vector<Vec>> infer_logits(const ParamStore& params, const VideoDoc& video,
                                                  const ExchangeConfig& config) {
  const exchange::ForwardPass fp = exchange::forward(params, video, exchange::all_scenes(video), config);
  std::vector<std::vector<Vec>> out(fp.cand.size());
  for (std::size_t si = 0; si < fp.cand.size(); ++si)
    for (const auto& c : fp.cand[si]) out[si].push_back(c.logits);
  return out;
}

// Builds evaluation records straight from the model, one per annotated frame.
inline std::vector<eval::PredictionRecord> records_from_logits(const VideoDoc& video,
                                                               const std::vector<std::vector<Vec>>& logits) {
  std::vector<eval::PredictionRecord> out;
  for (std::size_t s = 0; s < video.scenes.size(); ++s)
    for (std::size_t i = 0; i < video.scenes[s].candidates.size(); ++i) {
      const FaceTrack& tr = video.scenes[s].candidates[i];
      for (std::size_t t = 0; t < tr.frames.size(); ++t)
        out.push_back({video.video_id, tr.track_id, tr.frames[t].timestamp_ms, neural::sigmoid(logits[s][i][t]),
                       tr.frames[t].label, tr.frames[t].face_width_px()});
    }
  return out;
}

inline std::vector<eval::PredictionRecord> predict_records(const ParamStore& params,
                                                           const std::vector<const VideoDoc*>& videos,
                                                           const ExchangeConfig& config) {
  std::vector<eval::PredictionRecord> out;
  for (const VideoDoc* v : videos) {
    auto recs = records_from_logits(*v, infer_logits(params, *v, config));
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

// Pooled mAP, or NaN when the records contain no positive label.
inline double map_or_nan(const std::vector<eval::PredictionRecord>& records) {
  for (const auto& r : records)
    if (r.label == 1) return eval::mean_ap(records);
  return std::numeric_limits<double>::quiet_NaN();
}

// ---- batch sampling ----------------------------------------------------------

struct IdentityOccurrences {
  const VideoDoc* video = nullptr;
  int person_id = 0;
  std::vector<std::size_t> scenes;  // ascending, each scene listed once
};

inline std::vector<IdentityOccurrences> index_identities(const std::vector<const VideoDoc*>& videos) {
  std::vector<IdentityOccurrences> out;
  for (const VideoDoc* v : videos) {
    std::vector<IdentityOccurrences> per(static_cast<std::size_t>(std::max(v->identity_count, 0)));
    for (std::size_t s = 0; s < v->scenes.size(); ++s)
      for (const FaceTrack& t : v->scenes[s].candidates) {
        auto& occ = per.at(static_cast<std::size_t>(t.person_id - 1));
        if (occ.scenes.empty() || occ.scenes.back() != s) occ.scenes.push_back(s);
      }
    for (std::size_t k = 0; k < per.size(); ++k) {
      if (per[k].scenes.empty()) continue;
      per[k].video = v;
      per[k].person_id = static_cast<int>(k + 1);
      out.push_back(std::move(per[k]));
    }
  }
  return out;
}

// Each example: one identity drawn uniformly, then up to scenes_per_example of
// its scenes drawn without replacement, kept in temporal order.
inline std::vector<VideoSlice> sample_batch(const std::vector<IdentityOccurrences>& identities,
                                            std::size_t scenes_per_example, std::size_t batch_size,
                                            std::mt19937_64& rng) {
  if (identities.empty()) throw ValidationError("sample_batch: corpus has no identity occurrences");
  if (scenes_per_example < 1) throw ValidationError("sample_batch: scenes_per_example must be >= 1");
  std::vector<VideoSlice> out;
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::uniform_int_distribution<std::size_t> pick(0, identities.size() - 1);
    const IdentityOccurrences& id = identities[pick(rng)];
    std::vector<std::size_t> pool = id.scenes;
    const std::size_t take = std::min(scenes_per_example, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> j(i, pool.size() - 1);
      std::swap(pool[i], pool[j(rng)]);
    }
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    out.push_back({id.video, std::move(pool)});
  }
  return out;
}

// ---- training loop -----------------------------------------------------------

struct TrainConfig {
  double total_epochs = 60;
  double warmup_epochs = 10;
  std::optional<double> max_lr;  // unset: chosen by select_max_lr
  std::size_t scenes_per_example = 4;
  std::size_t batch_size = 8;
  std::size_t examples_per_epoch = 512;
  int patience = 10;  // counted only once warmup is over
  std::size_t keep_best = 5;
  std::uint64_t seed = 1;
  double weight_decay = 0.01;
  exchange::ModelDims dims;
};

// 5e-4 for single-candidate or multi-scene training, 1e-4 for single-scene
// multi-candidate training.
inline double select_max_lr(std::size_t scenes_per_example, bool multi_candidate) {
  if (scenes_per_example > 1 || !multi_candidate) return 5e-4;
  return 1e-4;
}

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double val_map = std::numeric_limits<double>::quiet_NaN();
};

inline std::string epoch_log_header() { return "epoch,lr,train_loss,l_av,l_v,l_joint,l_cross,val_map"; }

inline std::string epoch_log_line(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.loss.total) + "," +
         format_double(e.loss.l_av) + "," + format_double(e.loss.l_v) + "," + format_double(e.loss.l_joint) + "," +
         format_double(e.loss.l_cross) + "," + format_double(e.val_map);
}

struct RankedCheckpoint {
  int epoch = 0;
  double val_map = 0.0;
  ParamStore params;
};

struct TrainResult {
  ParamStore best;
  int best_epoch = 0;
  double best_map = std::numeric_limits<double>::quiet_NaN();
  double initial_map = std::numeric_limits<double>::quiet_NaN();
  std::vector<RankedCheckpoint> top;  // best first
  std::vector<EpochLog> trace;        // epoch 0 is the untrained model
  int epochs_run = 0;
  bool stopped_early = false;
};

namespace detail {

inline bool better(double a, double b) {
  if (std::isnan(a)) return false;
  return std::isnan(b) || a > b;
}

inline void keep_top(std::vector<RankedCheckpoint>& top, RankedCheckpoint c, std::size_t keep) {
  if (std::isnan(c.val_map)) return;
  top.push_back(std::move(c));
  std::stable_sort(top.begin(), top.end(), [](const RankedCheckpoint& a, const RankedCheckpoint& b) {
    return a.val_map > b.val_map || (a.val_map == b.val_map && a.epoch < b.epoch);
  });
  if (top.size() > keep) top.resize(keep);
}

}  // namespace detail

inline TrainResult train(const std::vector<const VideoDoc*>& train_videos, const std::vector<const VideoDoc*>& val_videos,
                         const TrainConfig& cfg, ParamStore initial,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (cfg.scenes_per_example < 1 || cfg.scenes_per_example > 4)
    throw ValidationError("scenes_per_example must be in [1,4]");
  if (cfg.batch_size < 1 || cfg.examples_per_epoch < cfg.batch_size)
    throw ValidationError("examples_per_epoch must be >= batch_size >= 1");
  const auto identities = index_identities(train_videos);
  bool multi_candidate = false;
  for (const VideoDoc* v : train_videos)
    for (const Scene& s : v->scenes) multi_candidate |= s.candidates.size() > 1;
  const neural::LrSchedule schedule{cfg.max_lr.value_or(select_max_lr(cfg.scenes_per_example, multi_candidate)),
                                    cfg.warmup_epochs, cfg.total_epochs};
  const ExchangeConfig train_mode{exchange::Mode::bidirectional, 0};
  const ExchangeConfig val_mode{exchange::Mode::bidirectional, 0};

  TrainResult res;
  ParamStore params = std::move(initial);
  neural::AdamWState opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);

  EpochLog e0;
  e0.loss = {std::nan(""), std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  e0.val_map = map_or_nan(predict_records(params, val_videos, val_mode));
  res.initial_map = res.best_map = e0.val_map;
  res.best = params;
  res.trace.push_back(e0);
  detail::keep_top(res.top, {0, e0.val_map, params}, cfg.keep_best);
  if (on_epoch) on_epoch(e0);

  const std::size_t steps = cfg.examples_per_epoch / cfg.batch_size;
  const int total = static_cast<int>(cfg.total_epochs);
  int since_best = 0;
  for (int epoch = 1; epoch <= total; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t step = 0; step < steps; ++step) {
      const double e = (epoch - 1) + static_cast<double>(step + 1) / static_cast<double>(steps);
      log.lr = neural::cosine_warmup_lr(schedule, std::min(e, cfg.total_epochs));
      ParamStore grads = params.zeros_like();
      const auto batch = sample_batch(identities, cfg.scenes_per_example, cfg.batch_size, rng);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (const VideoSlice& ex : batch) {
        const LossBreakdown l = total_loss(params, ex, train_mode, &grads, scale);
        if (!std::isfinite(l.total))
          throw ValidationError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                std::to_string(step) + " (video " + ex.video->video_id + ")");
        log.loss.l_av += l.l_av;
        log.loss.l_v += l.l_v;
        log.loss.l_joint += l.l_joint;
        log.loss.l_cross += l.l_cross;
        log.loss.total += l.total;
      }
      neural::adamw_step(params, grads, opt, log.lr);
    }
    const double n = static_cast<double>(steps * cfg.batch_size);
    for (double* x : {&log.loss.l_av, &log.loss.l_v, &log.loss.l_joint, &log.loss.l_cross, &log.loss.total}) *x /= n;
    log.val_map = map_or_nan(predict_records(params, val_videos, val_mode));
    res.trace.push_back(log);
    res.epochs_run = epoch;
    if (on_epoch) on_epoch(log);
    detail::keep_top(res.top, {epoch, log.val_map, params}, cfg.keep_best);
    if (detail::better(log.val_map, res.best_map)) {
      res.best_map = log.val_map;
      res.best_epoch = epoch;
      res.best = params;
      since_best = 0;
    } else if (epoch > cfg.warmup_epochs && ++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

// ---- checkpoint averaging ----------------------------------------------------

// Element-wise mean. Values are sorted before reduction, so the result does
// not depend on input order, and identical inputs reproduce themselves exactly.
inline ParamStore average_checkpoints(const std::vector<ParamStore>& inputs) {
  if (inputs.empty()) throw ValidationError("average_checkpoints: no inputs");
  for (const auto& p : inputs)
    if (!p.same_layout(inputs.front()))
      throw ValidationError("average_checkpoints: parameter names or shapes differ between inputs");
  if (inputs.size() != 5)
    std::cerr << "warning: averaging " << inputs.size() << " checkpoints (expected 5)\n";
  ParamStore out = inputs.front().zeros_like();
  std::vector<double> vals(inputs.size());
  for (auto& [name, t] : out)
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t c = 0; c < inputs.size(); ++c) vals[c] = inputs[c][name][i];
      std::sort(vals.begin(), vals.end());
      double acc = 0.0;
      for (double v : vals) acc += v - vals.front();
      t[i] = vals.front() + acc / static_cast<double>(vals.size());
    }
  return out;
}

struct AveragedCheckpoint {
  ParamStore params;
  std::vector<std::string> sources;
};

inline AveragedCheckpoint average_checkpoint_files(const std::vector<std::string>& paths) {
  std::vector<ParamStore> stores;
  for (const auto& p : paths) stores.push_back(neural::load_checkpoint(p));
  return {average_checkpoints(stores), paths};
}

}  // namespace unicon::trainer

#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unicon/aggregate.hpp"
#include "unicon/datamodel.hpp"
#include "unicon/neural/layers.hpp"
#include "unicon/neural/params.hpp"

namespace unicon::exchange {

using neural::ParamStore;

enum class Mode { bidirectional, forward_only, per_scene };
enum class Direction { forward, backward };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::bidirectional: return "bidirectional";
    case Mode::forward_only: return "forward-only";
    case Mode::per_scene: return "per-scene";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "bidirectional") return Mode::bidirectional;
  if (s == "forward-only" || s == "forward_only") return Mode::forward_only;
  if (s == "per-scene" || s == "per_scene") return Mode::per_scene;
  throw ValidationError("unknown exchange mode '" + s + "'");
}

struct ExchangeConfig {
  Mode mode = Mode::bidirectional;
  int reset_period = 0;  // 0 disables memory resets
  double epsilon = aggregate::kEpsilon;
};

// Layer sizes of the whole model. head_width 0 means "same as hidden".
struct ModelDims {
  std::size_t feature_dim = 8;  // D, per modality
  std::size_t hidden = 32;      // H, per direction per layer
  std::size_t layers = 2;       // L
  std::size_t head_width = 0;   // F

  std::size_t width() const { return head_width ? head_width : hidden; }
  std::size_t joint_dim() const { return 2 * feature_dim; }
  std::size_t exchange_input_dim() const { return 4 * feature_dim; }

  static ModelDims full_scale(std::size_t feature_dim) { return {feature_dim, 576, 2, 0}; }
};

inline std::string gru_prefix(Direction d, std::size_t layer) {
  return std::string("gru.") + (d == Direction::forward ? "fwd." : "bwd.") + std::to_string(layer);
}

// Names and shapes of every trainable parameter, in serialization order.
inline std::vector<std::pair<std::string, Shape>> model_layout(const ModelDims& dims) {
  if (dims.feature_dim < 1 || dims.hidden < 1 || dims.layers < 1)
    throw ValidationError("model dimensions must be positive");
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t h = dims.hidden, f = dims.width(), j = dims.joint_dim();
  auto linear = [&](const std::string& prefix, std::size_t o, std::size_t i) {
    out.emplace_back(prefix + ".w", Shape{o, i});
    out.emplace_back(prefix + ".b", Shape{o});
  };
  out.emplace_back("h_init", Shape{h});
  for (Direction d : {Direction::forward, Direction::backward})
    for (std::size_t l = 0; l < dims.layers; ++l) {
      const std::string p = gru_prefix(d, l);
      const std::size_t in = l == 0 ? dims.exchange_input_dim() : h;
      for (const char* g : {"w_z", "w_r", "w_n"}) out.emplace_back(p + "." + g, Shape{h, in});
      for (const char* g : {"u_z", "u_r", "u_n"}) out.emplace_back(p + "." + g, Shape{h, h});
      for (const char* g : {"b_z", "b_r", "b_n"}) out.emplace_back(p + "." + g, Shape{h});
    }
  linear("cls.fc1", f, j + h);
  linear("cls.fc2", 1, f);
  linear("scorer.fc1", f, j);
  linear("scorer.fc2", 1, f);
  linear("head_v", 1, dims.feature_dim);
  linear("head_av", 1, dims.feature_dim);
  return out;
}

// Declares every trainable parameter (all zero; see neural::he_init).
inline ParamStore make_model(const ModelDims& dims) {
  ParamStore s;
  for (auto& [name, shape] : model_layout(dims)) s.add(name, shape);
  return s;
}

// Recovers the layer sizes from a parameter store (e.g. a loaded checkpoint).
inline ModelDims dims_of(const ParamStore& s) {
  ModelDims d;
  d.hidden = s["h_init"].size();
  d.feature_dim = s["head_v.w"].dim(1);
  d.head_width = s["cls.fc1.b"].size();
  d.layers = 0;
  while (s.contains(gru_prefix(Direction::forward, d.layers) + ".w_z")) ++d.layers;
  const auto layout = model_layout(d);
  bool ok = layout.size() == s.size();
  std::size_t i = 0;
  for (auto it = s.begin(); ok && it != s.end(); ++it, ++i)
    ok = it->first == layout[i].first && it->second.shape() == layout[i].second;
  if (!ok) throw ValidationError("parameter store is not a valid model layout");
  return d;
}

// ---- per-frame heads ---------------------------------------------------------

// logit_t = fc2(relu(fc1(r_t (+) s_prime)))
inline Vec classify_frames(const ParamStore& params, ConstMatrix r, std::span<const double> s_prime) {
  const auto fc1 = neural::linear_view(params, "cls.fc1");
  const auto fc2 = neural::linear_view(params, "cls.fc2");
  if (r.cols + s_prime.size() != fc1.w.cols) throw ValidationError("classify_frames: input width mismatch");
  Vec in(fc1.w.cols), hidden(fc1.w.rows), logits(r.rows);
  std::copy(s_prime.begin(), s_prime.end(), in.begin() + static_cast<std::ptrdiff_t>(r.cols));
  for (std::size_t t = 0; t < r.rows; ++t) {
    std::copy(r.row(t).begin(), r.row(t).end(), in.begin());
    neural::linear_forward(fc1, in, hidden);
    for (double& x : hidden) x = std::max(x, 0.0);
    double out = 0.0;
    neural::linear_forward(fc2, hidden, std::span<double>(&out, 1));
    logits[t] = out;
  }
  return logits;
}

// Accumulates head gradients; adds d loss / d s_prime into grad_s_prime.
inline void classify_frames_backward(const ParamStore& params, ConstMatrix r, std::span<const double> s_prime,
                                     std::span<const double> grad_logits, ParamStore& grads,
                                     std::span<double> grad_s_prime) {
  const auto fc1 = neural::linear_view(params, "cls.fc1");
  const auto fc2 = neural::linear_view(params, "cls.fc2");
  const auto g1 = neural::linear_grad(grads, "cls.fc1");
  const auto g2 = neural::linear_grad(grads, "cls.fc2");
  Vec in(fc1.w.cols), pre(fc1.w.rows), act(fc1.w.rows), d_act(fc1.w.rows), d_in(fc1.w.cols);
  std::copy(s_prime.begin(), s_prime.end(), in.begin() + static_cast<std::ptrdiff_t>(r.cols));
  for (std::size_t t = 0; t < r.rows; ++t) {
    const double g = grad_logits[t];
    if (g == 0.0) continue;
    std::copy(r.row(t).begin(), r.row(t).end(), in.begin());
    neural::linear_forward(fc1, in, pre);
    for (std::size_t k = 0; k < pre.size(); ++k) act[k] = std::max(pre[k], 0.0);
    std::fill(d_act.begin(), d_act.end(), 0.0);
    neural::linear_backward(fc2, act, std::span<const double>(&g, 1), g2, d_act);
    for (std::size_t k = 0; k < pre.size(); ++k)
      if (pre[k] <= 0.0) d_act[k] = 0.0;
    std::fill(d_in.begin(), d_in.end(), 0.0);
    neural::linear_backward(fc1, in, d_act, g1, d_in);
    for (std::size_t k = 0; k < s_prime.size(); ++k) grad_s_prime[k] += d_in[r.cols + k];
  }
}

// Stand-in scene-level scorer: per-frame MLP on the joint features. Returns logits;
// p_t = sigmoid(logit_t).
inline Vec scene_scorer_logits(const ParamStore& params, ConstMatrix r) {
  const auto fc1 = neural::linear_view(params, "scorer.fc1");
  const auto fc2 = neural::linear_view(params, "scorer.fc2");
  Vec hidden(fc1.w.rows), logits(r.rows);
  for (std::size_t t = 0; t < r.rows; ++t) {
    neural::linear_forward(fc1, r.row(t), hidden);
    for (double& x : hidden) x = std::max(x, 0.0);
    double out = 0.0;
    neural::linear_forward(fc2, hidden, std::span<double>(&out, 1));
    logits[t] = out;
  }
  return logits;
}

inline Vec scene_scorer(const ParamStore& params, ConstMatrix r) {
  Vec p = scene_scorer_logits(params, r);
  for (double& x : p) x = neural::sigmoid(x);
  return p;
}

inline void scene_scorer_backward(const ParamStore& params, ConstMatrix r, std::span<const double> grad_logits,
                                  ParamStore& grads) {
  const auto fc1 = neural::linear_view(params, "scorer.fc1");
  const auto fc2 = neural::linear_view(params, "scorer.fc2");
  const auto g1 = neural::linear_grad(grads, "scorer.fc1");
  const auto g2 = neural::linear_grad(grads, "scorer.fc2");
  Vec pre(fc1.w.rows), act(fc1.w.rows), d_act(fc1.w.rows);
  for (std::size_t t = 0; t < r.rows; ++t) {
    const double g = grad_logits[t];
    if (g == 0.0) continue;
    neural::linear_forward(fc1, r.row(t), pre);
    for (std::size_t k = 0; k < pre.size(); ++k) act[k] = std::max(pre[k], 0.0);
    std::fill(d_act.begin(), d_act.end(), 0.0);
    neural::linear_backward(fc2, act, std::span<const double>(&g, 1), g2, d_act);
    for (std::size_t k = 0; k < pre.size(); ++k)
      if (pre[k] <= 0.0) d_act[k] = 0.0;
    neural::linear_backward(fc1, r.row(t), d_act, g1);
  }
}

// s_{i,s} = Id_i (+) Sp_i
inline Vec build_exchange_input(std::span<const double> id_vec, std::span<const double> sp_vec) {
  if (id_vec.size() != sp_vec.size()) throw ValidationError("build_exchange_input: Id and Sp widths differ");
  Vec out(id_vec.begin(), id_vec.end());
  out.insert(out.end(), sp_vec.begin(), sp_vec.end());
  return out;
}

// ---- history pool ------------------------------------------------------------

// Per-identity hidden column (one H-vector per GRU layer) for one direction.
class HistoryPool {
 public:
  HistoryPool() = default;
  HistoryPool(std::size_t identities, std::size_t layers, Vec h_init)
      : layers_(layers), hidden_(h_init.size()), h_init_(std::move(h_init)),
        state_(identities, Vec(layers * hidden_)), occurrences_(identities, 0) {
    for (std::size_t k = 0; k < identities; ++k) reset(k);
  }

  std::size_t identities() const { return state_.size(); }
  std::size_t layers() const { return layers_; }
  std::size_t hidden() const { return hidden_; }
  const Vec& h_init() const { return h_init_; }

  std::span<double> layer(std::size_t k, std::size_t l) {
    return std::span<double>(state_.at(k)).subspan(l * hidden_, hidden_);
  }
  std::span<const double> layer(std::size_t k, std::size_t l) const {
    return std::span<const double>(state_.at(k)).subspan(l * hidden_, hidden_);
  }
  int occurrences(std::size_t k) const { return occurrences_.at(k); }
  int count_occurrence(std::size_t k) { return ++occurrences_.at(k); }

  // Restores h_init in every layer; the occurrence counter keeps running.
  void reset(std::size_t k) {
    for (std::size_t l = 0; l < layers_; ++l) std::copy(h_init_.begin(), h_init_.end(), layer(k, l).begin());
  }
  void reset_all() {
    for (std::size_t k = 0; k < identities(); ++k) reset(k);
  }

 private:
  std::size_t layers_ = 0;
  std::size_t hidden_ = 0;
  Vec h_init_;
  std::vector<Vec> state_;
  std::vector<int> occurrences_;
};

inline HistoryPool init_pool(std::size_t identities, std::size_t layers, const Vec& h_init) {
  if (identities < 1) throw ValidationError("init_pool: need at least one identity");
  return HistoryPool(identities, layers, h_init);
}

// ---- sweeps ------------------------------------------------------------------

struct CandidateInput {
  int person_id = 0;  // 1-based
  Vec x;              // exchange input s_{i,s}
};

// Candidate inputs grouped by scene, in video order.
using SweepInputs = std::vector<std::vector<CandidateInput>>;

struct SweepEvent {
  enum class Kind { reset_all, reset_slot, visit };
  Kind kind = Kind::visit;
  std::size_t slot = 0;
  std::size_t scene = 0;
  std::size_t candidate = 0;
  std::vector<neural::GruCache> caches;  // per layer, visit only
};

// Replay log of one sweep, consumed by sweep_backward.
struct SweepTape {
  Direction direction = Direction::forward;
  std::vector<SweepEvent> events;
};

struct SweepResult {
  std::vector<std::vector<Vec>> outputs;  // [scene][candidate] -> H
  HistoryPool pool;
};

inline std::vector<neural::GruCellView> gru_stack(const ParamStore& params, Direction d, std::size_t layers) {
  std::vector<neural::GruCellView> out;
  for (std::size_t l = 0; l < layers; ++l) out.push_back(neural::gru_view(params, gru_prefix(d, l)));
  return out;
}

// Visits scenes in order (reverse order for Direction::backward). Each
// candidate reads its identity's hidden column, runs the layer stack on its
// exchange input and writes the new column back. The top layer is the
// candidate's output for this direction.
inline SweepResult exchange_sweep(const ParamStore& params, const SweepInputs& inputs, std::size_t identities,
                                  Direction direction, const ExchangeConfig& config, SweepTape* tape = nullptr) {
  const ModelDims dims = dims_of(params);
  const auto stack = gru_stack(params, direction, dims.layers);
  SweepResult res;
  res.pool = init_pool(identities, dims.layers, params["h_init"].values());
  res.outputs.resize(inputs.size());
  if (tape) {
    tape->direction = direction;
    tape->events.clear();
    tape->events.push_back({SweepEvent::Kind::reset_all, 0, 0, 0, {}});
  }
  const std::size_t n_scenes = inputs.size();
  for (std::size_t step = 0; step < n_scenes; ++step) {
    const std::size_t s = direction == Direction::forward ? step : n_scenes - 1 - step;
    if (config.mode == Mode::per_scene && step > 0) {
      res.pool.reset_all();
      if (tape) tape->events.push_back({SweepEvent::Kind::reset_all, 0, s, 0, {}});
    }
    res.outputs[s].resize(inputs[s].size());
    for (std::size_t i = 0; i < inputs[s].size(); ++i) {
      const CandidateInput& c = inputs[s][i];
      if (c.person_id < 1 || static_cast<std::size_t>(c.person_id) > identities)
        throw ValidationError("exchange_sweep: candidate with undefined identity " + std::to_string(c.person_id));
      const std::size_t k = static_cast<std::size_t>(c.person_id - 1);
      SweepEvent ev{SweepEvent::Kind::visit, k, s, i, {}};
      Vec x = c.x;
      for (std::size_t l = 0; l < dims.layers; ++l) {
        neural::GruCache cache = neural::gru_cell_forward(stack[l], x, res.pool.layer(k, l));
        std::copy(cache.h_new.begin(), cache.h_new.end(), res.pool.layer(k, l).begin());
        x = cache.h_new;
        if (tape) ev.caches.push_back(std::move(cache));
      }
      res.outputs[s][i] = std::move(x);
      if (tape) tape->events.push_back(std::move(ev));
      const int count = res.pool.count_occurrence(k);
      if (config.reset_period > 0 && count % config.reset_period == 0) {
        res.pool.reset(k);
        if (tape) tape->events.push_back({SweepEvent::Kind::reset_slot, k, s, i, {}});
      }
    }
  }
  return res;
}

// Reverse-mode pass through a recorded sweep. grad_outputs mirrors
// SweepResult::outputs; gradients are accumulated into grads (GRU weights and
// h_init) and grad_inputs (same layout as the sweep inputs).
inline void sweep_backward(const ParamStore& params, const SweepTape& tape, std::size_t identities,
                           const std::vector<std::vector<Vec>>& grad_outputs, ParamStore& grads,
                           std::vector<std::vector<Vec>>& grad_inputs) {
  const ModelDims dims = dims_of(params);
  const std::size_t h = dims.hidden, n_layers = dims.layers;
  const auto stack = gru_stack(params, tape.direction, n_layers);
  std::vector<neural::GruCellGrad> gstack;
  for (std::size_t l = 0; l < n_layers; ++l) gstack.push_back(neural::gru_grad(grads, gru_prefix(tape.direction, l)));
  auto grad_h_init = grads["h_init"].span();
  // slot_grad[k][l]: d loss / d (current value of slot k, layer l)
  std::vector<Vec> slot_grad(identities, Vec(n_layers * h, 0.0));
  auto flush = [&](std::size_t k) {
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t j = 0; j < h; ++j) {
        grad_h_init[j] += slot_grad[k][l * h + j];
        slot_grad[k][l * h + j] = 0.0;
      }
  };
  for (auto it = tape.events.rbegin(); it != tape.events.rend(); ++it) {
    const SweepEvent& ev = *it;
    switch (ev.kind) {
      case SweepEvent::Kind::reset_all:
        for (std::size_t k = 0; k < identities; ++k) flush(k);
        break;
      case SweepEvent::Kind::reset_slot:
        flush(ev.slot);
        break;
      case SweepEvent::Kind::visit: {
        Vec& sg = slot_grad[ev.slot];
        Vec d_new(sg.begin() + static_cast<std::ptrdiff_t>((n_layers - 1) * h), sg.end());
        axpy(1.0, grad_outputs[ev.scene][ev.candidate], d_new);
        for (std::size_t l = n_layers; l-- > 0;) {
          Vec d_x(stack[l].input_size(), 0.0), d_h(h, 0.0);
          neural::gru_cell_backward(stack[l], ev.caches[l], d_new, gstack[l], d_x, d_h);
          std::copy(d_h.begin(), d_h.end(), sg.begin() + static_cast<std::ptrdiff_t>(l * h));
          if (l > 0) {
            // Layer l-1 output fed layer l and was also written to the slot.
            d_new.assign(sg.begin() + static_cast<std::ptrdiff_t>((l - 1) * h),
                         sg.begin() + static_cast<std::ptrdiff_t>(l * h));
            axpy(1.0, d_x, d_new);
          } else {
            axpy(1.0, d_x, grad_inputs[ev.scene][ev.candidate]);
          }
        }
        break;
      }
    }
  }
}

// ---- full forward over a scene sequence -------------------------------------

struct CandidatePass {
  Tensor r;            // [T x 2D]
  Vec scorer_logits;   // [T]
  Vec p;               // [T]
  Vec id_vec, sp_vec;  // [2D]
  Vec s_prime;         // [H]
  Vec logits;          // [T]
  std::vector<int> labels;

  Vec probs() const {
    Vec out(logits);
    for (double& x : out) x = neural::sigmoid(x);
    return out;
  }
};

// Everything the loss and backward pass need from one forward evaluation.
struct ForwardPass {
  const VideoDoc* video = nullptr;
  std::vector<std::size_t> scenes;               // indices into video->scenes
  std::vector<std::vector<CandidatePass>> cand;  // [slice scene][candidate]
  ExchangeConfig config;
  SweepInputs inputs;
  SweepTape tape_fwd, tape_bwd;
  bool has_bwd = false;
};

inline std::vector<std::size_t> all_scenes(const VideoDoc& v) {
  std::vector<std::size_t> out(v.scenes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

inline ForwardPass forward(const ParamStore& params, const VideoDoc& video, std::vector<std::size_t> scenes,
                           const ExchangeConfig& config) {
  ForwardPass fp;
  fp.video = &video;
  fp.scenes = std::move(scenes);
  fp.config = config;
  const ModelDims dims = dims_of(params);
  fp.cand.resize(fp.scenes.size());
  fp.inputs.resize(fp.scenes.size());
  for (std::size_t si = 0; si < fp.scenes.size(); ++si) {
    const Scene& scene = video.scenes.at(fp.scenes[si]);
    if (scene.features.dim != dims.feature_dim)
      throw ValidationError("scene " + scene.scene_id + ": feature dimension differs from the model");
    for (std::size_t i = 0; i < scene.candidates.size(); ++i) {
      CandidatePass c;
      c.r = aggregate::concat_joint(scene.features.rv(i), scene.features.rav(i));
      const ConstMatrix r = as_matrix(c.r);
      c.scorer_logits = scene_scorer_logits(params, r);
      c.p = c.scorer_logits;
      for (double& x : c.p) x = neural::sigmoid(x);
      c.id_vec = aggregate::identity_pool(r);
      c.sp_vec = aggregate::speech_pool(r, c.p, config.epsilon);
      for (const FrameObs& f : scene.candidates[i].frames) c.labels.push_back(f.label);
      fp.inputs[si].push_back({scene.candidates[i].person_id, build_exchange_input(c.id_vec, c.sp_vec)});
      fp.cand[si].push_back(std::move(c));
    }
  }
  const std::size_t k = static_cast<std::size_t>(std::max(video.identity_count, 1));
  const SweepResult fwd = exchange_sweep(params, fp.inputs, k, Direction::forward, config, &fp.tape_fwd);
  fp.has_bwd = config.mode != Mode::forward_only;
  SweepResult bwd;
  if (fp.has_bwd) bwd = exchange_sweep(params, fp.inputs, k, Direction::backward, config, &fp.tape_bwd);
  for (std::size_t si = 0; si < fp.cand.size(); ++si)
    for (std::size_t i = 0; i < fp.cand[si].size(); ++i) {
      CandidatePass& c = fp.cand[si][i];
      c.s_prime = fwd.outputs[si][i];
      if (fp.has_bwd) axpy(1.0, bwd.outputs[si][i], c.s_prime);
      c.logits = classify_frames(params, as_matrix(c.r), c.s_prime);
    }
  return fp;
}

// Upstream gradients on the classifier logits and on the scene scorer logits,
// laid out like ForwardPass::cand.
struct LogitGrads {
  std::vector<std::vector<Vec>> cls;
  std::vector<std::vector<Vec>> scorer;
};

// Backpropagates through classifier, both sweeps, both poolings and the scene
// scorer (including the p-dependence of speech pooling).
inline void backward(const ParamStore& params, const ForwardPass& fp, const LogitGrads& up, ParamStore& grads) {
  const std::size_t k = static_cast<std::size_t>(std::max(fp.video->identity_count, 1));
  std::vector<std::vector<Vec>> d_sprime(fp.cand.size()), d_inputs(fp.cand.size());
  for (std::size_t si = 0; si < fp.cand.size(); ++si)
    for (std::size_t i = 0; i < fp.cand[si].size(); ++i) {
      const CandidatePass& c = fp.cand[si][i];
      Vec ds(c.s_prime.size(), 0.0);
      classify_frames_backward(params, as_matrix(c.r), c.s_prime, up.cls[si][i], grads, ds);
      d_sprime[si].push_back(std::move(ds));
      d_inputs[si].emplace_back(fp.inputs[si][i].x.size(), 0.0);
    }
  sweep_backward(params, fp.tape_fwd, k, d_sprime, grads, d_inputs);
  if (fp.has_bwd) sweep_backward(params, fp.tape_bwd, k, d_sprime, grads, d_inputs);
  for (std::size_t si = 0; si < fp.cand.size(); ++si)
    for (std::size_t i = 0; i < fp.cand[si].size(); ++i) {
      const CandidatePass& c = fp.cand[si][i];
      const ConstMatrix r = as_matrix(c.r);
      const std::size_t w = c.id_vec.size();
      // The Id half depends only on data; the Sp half reaches the scorer through p.
      std::span<const double> d_sp = std::span<const double>(d_inputs[si][i]).subspan(w, w);
      Vec d_p = aggregate::speech_pool_grad_p(r, c.p, c.sp_vec, d_sp, fp.config.epsilon);
      Vec d_logit = up.scorer[si][i];
      for (std::size_t t = 0; t < d_p.size(); ++t) d_logit[t] += d_p[t] * c.p[t] * (1.0 - c.p[t]);
      scene_scorer_backward(params, r, d_logit, grads);
    }
}

}  // namespace unicon::exchange

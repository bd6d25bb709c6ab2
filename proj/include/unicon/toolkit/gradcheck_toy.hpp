#pragma once

#include <random>

#include "unicon/neural/gradcheck.hpp"
#include "unicon/toolkit/synth.hpp"
#include "unicon/trainer.hpp"

namespace unicon::toolkit {

struct ToyProblem {
  VideoDoc video;
  neural::ParamStore params;
  std::vector<exchange::ExchangeConfig> configs;
};

// A seeded two-scene video with a tiny model whose parameters are all
// non-zero, so every gradient path is exercised.
inline ToyProblem make_toy_problem(std::uint64_t seed) {
  SynthConfig sc;
  sc.videos = 1;
  sc.val_videos = sc.test_videos = 0;
  sc.identities = 3;
  sc.scenes = 2;
  sc.candidates = 2;
  sc.frames = 4;
  sc.dim = 3;
  sc.seed = seed;
  ToyProblem toy;
  toy.video = gen_corpus(sc).corpus.front();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> p(0.1, 0.9);
  for (Scene& s : toy.video.scenes)
    for (double& x : s.features.p) x = p(rng);
  toy.params = exchange::make_model({3, 4, 2, 5});
  neural::he_init(toy.params, seed);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& [name, t] : toy.params)
    for (double& x : t.values()) x += n(rng);
  toy.configs = {{exchange::Mode::bidirectional, 0}, {exchange::Mode::forward_only, 1}, {exchange::Mode::per_scene, 0}};
  return toy;
}

inline double toy_loss(const ToyProblem& toy, const neural::ParamStore& params, neural::ParamStore* grads = nullptr) {
  const trainer::VideoSlice slice{&toy.video, exchange::all_scenes(toy.video)};
  double total = 0.0;
  for (const auto& c : toy.configs) total += trainer::total_loss(params, slice, c, grads).total;
  return total;
}

inline neural::GradCheckReport run_toy_gradcheck(std::uint64_t seed) {
  const ToyProblem toy = make_toy_problem(seed);
  neural::ParamStore grads = toy.params.zeros_like();
  toy_loss(toy, toy.params, &grads);
  return neural::grad_check([&](const neural::ParamStore& p) { return toy_loss(toy, p); }, toy.params, grads);
}

}  // namespace unicon::toolkit

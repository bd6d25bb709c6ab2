// Acceptance run: one PASS/FAIL line per criterion. argv[1] is the CLI binary.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"
#include "unicon/aggregate.hpp"
#include "unicon/cluster.hpp"
#include "unicon/eval.hpp"
#include "unicon/toolkit/gradcheck_toy.hpp"
#include "unicon/toolkit/synth.hpp"
#include "unicon/toolkit/tta.hpp"
#include "unicon/trainer.hpp"

using namespace unicon;
using exchange::Direction;
using exchange::Mode;
using exchange::SweepInputs;
using testing_support::max_abs_diff;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

exchange::ModelDims random_dims(std::mt19937_64& rng) {
  return {1 + rng() % 4, 2 + rng() % 5, 1 + rng() % 3, 2 + rng() % 4};
}

SweepInputs random_inputs(std::mt19937_64& rng, std::size_t scenes, std::size_t per_scene, int identities,
                          std::size_t width) {
  std::normal_distribution<double> n(0.0, 1.0);
  SweepInputs in(scenes);
  for (auto& s : in)
    for (std::size_t i = 0; i < per_scene; ++i) {
      exchange::CandidateInput c{static_cast<int>(rng() % static_cast<std::uint64_t>(identities)) + 1, Vec(width)};
      for (double& x : c.x) x = n(rng);
      s.push_back(std::move(c));
    }
  return in;
}

std::vector<Vec> reference_unroll(const neural::ParamStore& p, Direction d, const std::vector<Vec>& xs,
                                  std::size_t layers) {
  std::vector<Vec> h(layers, p["h_init"].values()), out;
  for (const Vec& x : xs) {
    Vec in = x;
    for (std::size_t l = 0; l < layers; ++l) {
      h[l] = testing_support::reference_gru_step(p, exchange::gru_prefix(d, l), in, h[l]);
      in = h[l];
    }
    out.push_back(in);
  }
  return out;
}

Outcome gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = toolkit::run_toy_gradcheck(7);
  const double dt = seconds_since(t0);
  return {rep.max_rel_error < 1e-6 && dt < 60.0,
          "max_rel_error " + fmt(rep.max_rel_error) + " over " + std::to_string(rep.checked) + " entries, " +
              fmt(dt) + " s"};
}

Outcome gru_unroll() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto dims = random_dims(rng);
    const auto params = testing_support::noisy_model(dims, 1000 + trial);
    const std::size_t S = 1 + rng() % 10;
    const SweepInputs in = random_inputs(rng, S, 1, 1, dims.exchange_input_dim());
    std::vector<Vec> xs;
    for (const auto& s : in) xs.push_back(s[0].x);
    const std::vector<Vec> rev(xs.rbegin(), xs.rend());
    const exchange::ExchangeConfig cfg{Mode::bidirectional, 0};
    const auto fwd = exchange::exchange_sweep(params, in, 1, Direction::forward, cfg);
    const auto bwd = exchange::exchange_sweep(params, in, 1, Direction::backward, cfg);
    const auto ref_f = reference_unroll(params, Direction::forward, xs, dims.layers);
    const auto ref_b = reference_unroll(params, Direction::backward, rev, dims.layers);
    for (std::size_t s = 0; s < S; ++s) {
      worst = std::max(worst, max_abs_diff(fwd.outputs[s][0], ref_f[s]));
      worst = std::max(worst, max_abs_diff(bwd.outputs[S - 1 - s][0], ref_b[s]));
    }
  }
  return {worst < 1e-12, "max abs diff " + fmt(worst) + " over 100 videos"};
}

Outcome per_scene_isolation() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  int broken = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto dims = random_dims(rng);
    const auto params = testing_support::noisy_model(dims, 2000 + trial);
    const std::size_t S = 2 + rng() % 6, N = 1 + rng() % 3;
    const int K = static_cast<int>(N + rng() % 3);
    VideoDoc v = testing_support::random_video(rng, S, N, 1 + rng() % 5, dims.feature_dim, K,
                                               [K](std::size_t s, std::size_t i) { return int((s + i) % K) + 1; });
    const exchange::ExchangeConfig cfg{Mode::per_scene, 0};
    const std::size_t target = rng() % S;
    const auto before = trainer::infer_logits(params, v, cfg);
    for (std::size_t s = 0; s < S; ++s) {
      if (s == target) continue;
      for (double& x : v.scenes[s].features.r_v) x += n(rng);
      for (double& x : v.scenes[s].features.r_av) x = n(rng);
    }
    const auto after = trainer::infer_logits(params, v, cfg);
    if (before[target] != after[target]) ++broken;
  }
  return {broken == 0, std::to_string(broken) + "/100 trials changed the target scene"};
}

Outcome reset_semantics() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto dims = random_dims(rng);
    const auto params = testing_support::noisy_model(dims, 3000 + trial);
    // identity 1 appears once in each of 5 scenes, next to other identities
    SweepInputs in = random_inputs(rng, 5, 1 + rng() % 3, 3, dims.exchange_input_dim());
    for (auto& s : in) {
      for (auto& c : s) c.person_id = 2 + static_cast<int>(rng() % 2);
      s[rng() % s.size()].person_id = 1;
    }
    const exchange::ExchangeConfig cfg{Mode::forward_only, 4};
    auto slot = [](const SweepInputs& x, std::size_t s) {
      for (std::size_t i = 0; i < x[s].size(); ++i)
        if (x[s][i].person_id == 1) return i;
      return std::size_t{0};
    };
    const auto fwd = exchange::exchange_sweep(params, in, 3, Direction::forward, cfg);
    const auto fresh_f = exchange::exchange_sweep(params, SweepInputs{in[4]}, 3, Direction::forward, cfg);
    worst = std::max(worst, max_abs_diff(fwd.outputs[4][slot(in, 4)], fresh_f.outputs[0][slot(in, 4)]));
    const auto bwd = exchange::exchange_sweep(params, in, 3, Direction::backward, cfg);
    const auto fresh_b = exchange::exchange_sweep(params, SweepInputs{in[0]}, 3, Direction::backward, cfg);
    worst = std::max(worst, max_abs_diff(bwd.outputs[0][slot(in, 0)], fresh_b.outputs[0][slot(in, 0)]));
  }
  return {worst < 1e-12, "max abs diff " + fmt(worst) + " (occurrence 5 vs fresh occurrence 1)"};
}

// Training recipe for the synthetic benchmark (README, "Synthetic benchmark").
trainer::TrainConfig benchmark_config() {
  trainer::TrainConfig c;
  c.patience = 60;
  c.dims.hidden = 16;
  return c;
}

Outcome cross_scene_benefit() {
  const auto t0 = std::chrono::steady_clock::now();
  const toolkit::SynthConfig sc;
  const auto sy = toolkit::gen_corpus(sc);
  const auto train_set = toolkit::videos_in_split(sy.corpus, "train");
  const auto val_set = toolkit::videos_in_split(sy.corpus, "val");
  const auto test_set = toolkit::videos_in_split(sy.corpus, "test");
  trainer::TrainConfig tc = benchmark_config();
  tc.dims.feature_dim = sc.dim;
  neural::ParamStore init = exchange::make_model(tc.dims);
  neural::he_init(init, tc.seed);
  const auto res = trainer::train(train_set, val_set, tc, std::move(init));
  const double bi = eval::mean_ap(trainer::predict_records(res.best, test_set, {Mode::bidirectional, 0}));
  const double fwd = eval::mean_ap(trainer::predict_records(res.best, test_set, {Mode::forward_only, 4}));
  const double per = eval::mean_ap(trainer::predict_records(res.best, test_set, {Mode::per_scene, 0}));
  const double dt = seconds_since(t0);
  const bool ok = bi - per >= 0.05 && fwd >= per && dt < 600.0;
  return {ok, "test mAP bidirectional " + fmt(bi) + ", forward_only " + fmt(fwd) + ", per_scene " + fmt(per) +
                  " (best epoch " + std::to_string(res.best_epoch) + ", " + fmt(dt) + " s)"};
}

std::vector<eval::PredictionRecord> random_records(std::mt19937_64& rng, std::size_t n, bool both) {
  std::uniform_int_distribution<int> level(0, 5), bit(0, 1);
  for (;;) {
    std::vector<eval::PredictionRecord> r;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int y = bit(rng);
      pos += y;
      r.push_back({"v", "t", 0, level(rng) / 5.0, y, 100.0});
    }
    if (pos > 0 && (!both || pos < n)) return r;
  }
}

// Enumerates ranks directly: no sorting shared with the implementation.
double brute_ap(const std::vector<eval::PredictionRecord>& r) {
  std::size_t pos = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i].label != 1) continue;
    ++pos;
    std::size_t rank = 0, hits = 0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const bool ahead = r[j].score > r[i].score || (r[j].score == r[i].score && j <= i);
      rank += ahead;
      hits += ahead && r[j].label == 1;
    }
    sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return sum / static_cast<double>(pos);
}

double pair_auc(const std::vector<eval::PredictionRecord>& r) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& a : r)
    for (const auto& b : r)
      if (a.label == 1 && b.label == 0) {
        pairs += 1.0;
        wins += a.score > b.score ? 1.0 : (a.score == b.score ? 0.5 : 0.0);
      }
  return wins / pairs;
}

Outcome ap_oracle() {
  std::mt19937_64 rng(6);
  double worst_ap = 0.0, worst_auc = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto r = random_records(rng, 1 + rng() % 12, false);
    worst_ap = std::max(worst_ap, std::abs(eval::average_precision(r) - brute_ap(r)));
    const auto q = random_records(rng, 2 + rng() % 11, true);
    worst_auc = std::max(worst_auc, std::abs(eval::roc_pr_curves(q).auc - pair_auc(q)));
  }
  return {worst_ap <= 1e-12 && worst_auc <= 1e-12,
          "max |AP - brute| " + fmt(worst_ap) + ", max |AUC - pairs| " + fmt(worst_auc) + " over 10000 sets"};
}

Outcome aggregation_algebra() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double eps = aggregate::kEpsilon;
  double worst_uniform = 0.0, worst_hot = 0.0;
  bool zero_ok = true, hot_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + rng() % 30, D = 1 + rng() % 16;
    Tensor r({T, D});
    for (double& x : r.values()) x = n(rng);
    const ConstMatrix m = as_matrix(r);
    const Vec id = aggregate::identity_pool(m);

    const double c = u(rng);
    const Vec p(T, c);
    const Vec sp = aggregate::speech_pool(m, p);
    const double factor = 1.0 - eps / (eps + c * static_cast<double>(T));
    for (std::size_t d = 0; d < D; ++d)
      worst_uniform = std::max(worst_uniform, std::abs(sp[d] - factor * id[d]) / (1.0 + std::abs(id[d])));

    const Vec z = aggregate::speech_pool(m, Vec(T, 0.0));
    for (double x : z) zero_ok &= x == 0.0 && !std::signbit(x);

    const std::size_t hot = rng() % T;
    Vec ph(T, 0.0);
    ph[hot] = 1.0;
    const Vec sh = aggregate::speech_pool(m, ph);
    for (std::size_t d = 0; d < D; ++d) {
      const double err = std::abs(sh[d] - r.at(hot, d));
      worst_hot = std::max(worst_hot, err);
      hot_ok &= err <= eps / (1.0 + eps) * std::abs(r.at(hot, d)) + 1e-15;
    }
  }
  const bool ok = worst_uniform < 1e-12 && zero_ok && hot_ok;
  return {ok, "uniform-p rel err " + fmt(worst_uniform) + ", zero-p exact " + (zero_ok ? "yes" : "no") +
                  ", one-hot max err " + fmt(worst_hot) + " within eps bound " + (hot_ok ? "yes" : "no")};
}

// Three instance families, 8-128 dimensional embeddings throughout:
// unstructured Gaussian embeddings with an arbitrary random overlap graph;
// embeddings around 1-6 identity centres where only different people overlap;
// three planted orthogonal identities, which must be recovered exactly.
Outcome clustering_safety() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double tau = cluster::kDefaultThreshold, penalty = tau + 2.0;
  int violations = 0, non_monotone = 0, planted = 0, planted_miss = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int family = trial % 3;
    const std::size_t m = 1 + rng() % 40, E = 8 + rng() % 121;
    const std::size_t K = family == 0 ? m : (family == 2 ? 3 : 1 + rng() % 6);
    std::vector<Vec> centers(K, Vec(E, 0.0));
    for (std::size_t k = 0; k < K; ++k) {
      if (family == 2)
        centers[k][k] = 1.0;
      else
        for (double& x : centers[k]) x = n(rng);
    }
    const double noise = family == 0 ? 0.0 : (family == 2 ? 0.02 : 1.5 * u(rng));
    std::vector<std::size_t> truth(m);
    std::vector<cluster::TrackEmbedding> emb;
    for (std::size_t i = 0; i < m; ++i) {
      truth[i] = family == 0 ? i : rng() % K;
      Vec e = centers[truth[i]];
      for (double& x : e) x += noise * n(rng);
      emb.push_back({"t" + std::to_string(i), e, 1});
    }
    cluster::OverlapGraph g;
    const double density = u(rng) * 0.3;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        if (u(rng) < density && truth[i] != truth[j]) g.add(i, j);
    const auto res = cluster::ahc(cluster::pairwise_distances(emb, g, penalty), tau);
    for (const auto& [a, b] : g.edges()) violations += res.labels[a] == res.labels[b];
    for (std::size_t k = 1; k < res.trace.size(); ++k)
      non_monotone += res.trace[k].distance < res.trace[k - 1].distance;
    if (family == 2) {
      bool exact = true;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) exact &= (truth[i] == truth[j]) == (res.labels[i] == res.labels[j]);
      ++planted;
      planted_miss += !exact;
    }
  }
  return {violations == 0 && non_monotone == 0 && planted_miss == 0,
          std::to_string(violations) + " overlapping pairs co-clustered, " + std::to_string(non_monotone) +
              " non-monotone merges, " + std::to_string(planted_miss) + "/" + std::to_string(planted) +
              " planted instances missed"};
}

Outcome ensembling_tta() {
  const auto params = testing_support::noisy_model({4, 6, 2, 5}, 9);
  const bool avg_ok = trainer::average_checkpoints(std::vector<neural::ParamStore>(5, params)) == params;

  std::mt19937_64 rng(9);
  double worst = 0.0;
  const auto windows = toolkit::tta_windows(144, 144, 128, 128);
  for (int trial = 0; trial < 20; ++trial) {
    const VideoDoc v = testing_support::random_video(rng, 1 + rng() % 6, 2, 1 + rng() % 6, 4, 3,
                                                     [](std::size_t s, std::size_t i) { return int((s + i) % 3) + 1; });
    for (Mode mode : {Mode::bidirectional, Mode::forward_only, Mode::per_scene}) {
      const exchange::ExchangeConfig cfg{mode, mode == Mode::forward_only ? 4 : 0};
      const auto single = trainer::infer_logits(params, v, cfg);
      const auto tta = toolkit::tta_infer(params, v, cfg, windows, toolkit::identity_features());
      for (std::size_t s = 0; s < single.size(); ++s)
        for (std::size_t i = 0; i < single[s].size(); ++i)
          for (std::size_t t = 0; t < single[s][i].size(); ++t)
            worst = std::max(worst, std::abs(tta[s][i][t] - neural::sigmoid(single[s][i][t])));
    }
  }
  std::set<std::pair<bool, std::pair<int, int>>> got, want;
  for (const auto& w : windows) got.insert({w.flipped, {w.x, w.y}});
  for (bool f : {false, true})
    for (auto o : {std::pair{0, 0}, {16, 0}, {0, 16}, {16, 16}, {8, 8}}) want.insert({f, o});
  bool sizes = windows.size() == 10;
  for (const auto& w : windows) sizes &= w.w == 128 && w.h == 128;
  const bool ok = avg_ok && worst < 1e-12 && got == want && sizes;
  return {ok, std::string("5-copy average exact ") + (avg_ok ? "yes" : "no") + ", TTA stub max diff " + fmt(worst) +
                  ", window set " + (got == want && sizes ? "matches" : "differs")};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& cli) {
  testing_support::TempDir tmp("accept");
  csv::write_file(tmp / "synth.cfg", "videos=10\nval_videos=2\ntest_videos=2\nseed=11\n");
  csv::write_file(tmp / "train.cfg", "total_epochs=6\nwarmup_epochs=2\nexamples_per_epoch=64\nhidden=8\nseed=5\n");
  std::vector<std::string> pred, summary;
  for (int run = 0; run < 2; ++run) {
    const std::string d = tmp / ("run" + std::to_string(run));
    const std::string cmds[] = {
        cli + " synth --config " + (tmp / "synth.cfg") + " --out " + d + "/corpus",
        cli + " train --corpus " + d + "/corpus --config " + (tmp / "train.cfg") + " --out-ckpt " + d + "/m.ckpt",
        cli + " infer --corpus " + d + "/corpus --ckpt " + d + "/m.ckpt --tta --out " + d + "/pred.csv",
        cli + " eval --pred " + d + "/pred.csv --ann " + d + "/corpus --out-dir " + d + "/eval",
    };
    for (const auto& c : cmds)
      if (std::system((c + " > /dev/null").c_str()) != 0) return {false, "command failed: " + c};
    pred.push_back(slurp(d + "/pred.csv"));
    summary.push_back(slurp(d + "/eval/summary.csv"));
  }
  const bool ok = !pred[0].empty() && pred[0] == pred[1] && summary[0] == summary[1];
  return {ok, "predictions " + std::to_string(pred[0].size()) + " bytes " + (pred[0] == pred[1] ? "identical" : "differ") +
                  ", summary " + (summary[0] == summary[1] ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path to unicon cli>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"GRU-unroll equivalence", gru_unroll},
      {"per-scene isolation", per_scene_isolation},
      {"reset semantics", reset_semantics},
      {"cross-scene benefit", cross_scene_benefit},
      {"AP oracle equivalence", ap_oracle},
      {"aggregation algebra", aggregation_algebra},
      {"clustering safety", clustering_safety},
      {"ensembling/TTA identities", ensembling_tta},
      {"determinism", [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

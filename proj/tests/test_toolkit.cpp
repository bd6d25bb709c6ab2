#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"
#include "unicon/eval.hpp"
#include "unicon/toolkit/cli.hpp"
#include "unicon/toolkit/synth.hpp"
#include "unicon/toolkit/tta.hpp"

using namespace unicon;
using namespace unicon::toolkit;
using testing_support::TempDir;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double logaddexp(double a, double b) { return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b))); }

// Exact log-likelihood of one frame under the generator, given y and b.
double frame_loglik(const SynthConfig& c, double a, double v, int y, double b) {
  const double s2 = c.sigma * c.sigma;
  return ((2 * y - 1) * b * a + y * (c.gain * v - 0.5 * c.gain * c.gain)) / s2 +
         std::log(y ? c.speaking_rate : 1 - c.speaking_rate);
}

struct BayesScores {
  std::vector<eval::PredictionRecord> known, scene;
};

// Frame posteriors P(y=1 | ...) with the identity bias known, and with the
// bias inferred from the current scene alone.
BayesScores bayes_scores(const SynthCorpus& sy, const SynthConfig& c) {
  BayesScores out;
  for (std::size_t vi = 0; vi < sy.corpus.size(); ++vi) {
    const VideoDoc& v = sy.corpus[vi];
    for (const Scene& s : v.scenes)
      for (std::size_t i = 0; i < s.candidates.size(); ++i) {
        const FaceTrack& t = s.candidates[i];
        const double bias = sy.truth.bias[vi][static_cast<std::size_t>(t.person_id - 1)];
        std::vector<double> av(c.frames), vv(c.frames);
        double ll[2] = {0, 0};
        for (std::size_t f = 0; f < c.frames; ++f) {
          av[f] = dot(s.features.rav(i).row(f), sy.truth.u);
          vv[f] = dot(s.features.rv(i).row(f), sy.truth.v);
          for (int k = 0; k < 2; ++k) {
            const double b = k ? c.delta : -c.delta;
            ll[k] += logaddexp(frame_loglik(c, av[f], vv[f], 0, b), frame_loglik(c, av[f], vv[f], 1, b));
          }
        }
        const double w_pos = 1.0 / (1.0 + std::exp(ll[0] - ll[1]));
        for (std::size_t f = 0; f < c.frames; ++f) {
          auto post = [&](double b) {
            return 1.0 / (1.0 + std::exp(frame_loglik(c, av[f], vv[f], 0, b) - frame_loglik(c, av[f], vv[f], 1, b)));
          };
          const int y = t.frames[f].label;
          out.known.push_back({v.video_id, t.track_id, 0, post(bias), y, 100});
          out.scene.push_back({v.video_id, t.track_id, 0, w_pos * post(c.delta) + (1 - w_pos) * post(-c.delta), y, 100});
        }
      }
  }
  return out;
}

}  // namespace

TEST(Config, ParseAndTypes) {
  KeyValues kv = KeyValues::parse("# comment\nhidden = 16\nmax_lr=0.001  # trailing\n\nflag=true\nneg=-3\n", "t");
  std::size_t h = 0;
  double lr = 0;
  bool flag = false;
  int neg = 0;
  std::size_t missing = 42;
  kv.get("hidden", h);
  kv.get("max_lr", lr);
  kv.get("flag", flag);
  kv.get("neg", neg);
  kv.get("absent", missing);
  EXPECT_EQ(h, 16u);
  EXPECT_EQ(lr, 0.001);
  EXPECT_TRUE(flag);
  EXPECT_EQ(neg, -3);
  EXPECT_EQ(missing, 42u);
  EXPECT_NO_THROW(kv.reject_unknown());

  KeyValues bad = KeyValues::parse("neg=-3\nhiden=4\n", "t");
  std::size_t u = 0;
  EXPECT_THROW(bad.get("neg", u), ValidationError);
  EXPECT_THROW(bad.reject_unknown(), ValidationError);
  EXPECT_THROW(KeyValues::parse("novalue\n", "t"), ValidationError);
  KeyValues word = KeyValues::parse("x=abc\n", "t");
  double x = 0;
  EXPECT_THROW(word.get("x", x), ValidationError);
  EXPECT_THROW(KeyValues::load("/nonexistent/cfg.txt"), IoError);
}

TEST(Synth, DeterministicAndValid) {
  SynthConfig c;
  c.videos = 6;
  c.val_videos = 1;
  c.test_videos = 2;
  c.ambiguous_rate = 0.2;
  const auto a = gen_corpus(c), b = gen_corpus(c);
  EXPECT_EQ(a.corpus, b.corpus);
  EXPECT_EQ(a.truth.u, b.truth.u);
  c.seed = 2;
  EXPECT_NE(gen_corpus(c).corpus, a.corpus);
  for (const VideoDoc& v : a.corpus) {
    EXPECT_NO_THROW(validate(v));
    EXPECT_EQ(v.scenes.size(), c.scenes);
    for (const Scene& s : v.scenes) {
      EXPECT_EQ(s.features.candidates, c.candidates);
      EXPECT_EQ(s.features.frames, c.frames);
      EXPECT_EQ(s.features.dim, c.dim);
      EXPECT_NE(s.candidates[0].person_id, s.candidates[1].person_id);
    }
  }
  EXPECT_EQ(videos_in_split(a.corpus, "train").size(), 3u);
  EXPECT_EQ(videos_in_split(a.corpus, "val").size(), 1u);
  EXPECT_EQ(videos_in_split(a.corpus, "test").size(), 2u);
  EXPECT_EQ(videos_in_split(a.corpus, "all").size(), 6u);

  TempDir tmp("synth");
  save_corpus(a.corpus, tmp.path());
  EXPECT_EQ(load_corpus(tmp.path()), a.corpus);
}

TEST(Synth, ConfigErrors) {
  SynthConfig c;
  c.delta = 0;
  EXPECT_THROW(gen_corpus(c), ValidationError);
  c = {};
  c.sigma = -1;
  EXPECT_THROW(gen_corpus(c), ValidationError);
  c = {};
  c.scenes = 0;
  EXPECT_THROW(gen_corpus(c), ValidationError);
  c = {};
  c.val_videos = 40;
  EXPECT_THROW(gen_corpus(c), ValidationError);
}

TEST(Synth, NoiselessFeaturesAreLinearlySeparable) {
  SynthConfig c;
  c.videos = 3;
  c.val_videos = c.test_videos = 0;
  c.sigma = 0;
  std::vector<eval::PredictionRecord> rec;
  const auto sy = gen_corpus(c);
  for (const VideoDoc& v : sy.corpus)
    for (const Scene& s : v.scenes)
      for (std::size_t i = 0; i < s.candidates.size(); ++i)
        for (std::size_t f = 0; f < c.frames; ++f)
          rec.push_back({v.video_id, "", 0, dot(s.features.rv(i).row(f), sy.truth.v), s.candidates[i].frames[f].label, 1});
  EXPECT_EQ(eval::average_precision(rec), 1.0);
}

TEST(Synth, PlantedCrossSceneSignal) {
  SynthConfig c;
  c.videos = 12;
  c.val_videos = c.test_videos = 0;
  const auto sy = gen_corpus(c);
  const BayesScores s = bayes_scores(sy, c);
  const double known = eval::average_precision(s.known), scene = eval::average_precision(s.scene);
  EXPECT_GT(known - scene, 0.05) << "known " << known << " per-scene " << scene;
}

TEST(Tta, Windows) {
  const auto w = tta_windows(144, 144, 128, 128);
  ASSERT_EQ(w.size(), 10u);
  const std::pair<int, int> origins[] = {{0, 0}, {16, 0}, {0, 16}, {16, 16}, {8, 8}};
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(std::make_pair(w[i].x, w[i].y), origins[i % 5]);
    EXPECT_EQ(w[i].flipped, i >= 5);
    EXPECT_EQ(w[i].w, 128);
    EXPECT_EQ(w[i].h, 128);
  }
  const auto same = tta_windows(100, 80, 100, 80);
  std::set<std::pair<bool, std::pair<int, int>>> distinct;
  for (const auto& x : same) distinct.insert({x.flipped, {x.x, x.y}});
  EXPECT_EQ(same.size(), 10u);
  EXPECT_EQ(distinct.size(), 2u);
  EXPECT_EQ(tta_windows(143, 128, 128, 128)[4].x, 7);
  EXPECT_THROW(tta_windows(100, 100, 101, 50), ValidationError);
  EXPECT_THROW(tta_windows(100, 100, 0, 50), ValidationError);
}

TEST(Tta, InferIdentities) {
  std::mt19937_64 rng(8);
  const VideoDoc v = testing_support::random_video(rng, 4, 2, 5, 3, 3, [](auto s, auto i) { return int((s + i) % 3) + 1; });
  const auto params = testing_support::noisy_model({3, 4, 2, 5}, 8);
  const exchange::ExchangeConfig cfg;
  const auto windows = tta_windows(144, 144, 128, 128);
  const auto single = trainer::infer_logits(params, v, cfg);
  const auto tta = tta_infer(params, v, cfg, windows, identity_features());
  for (std::size_t s = 0; s < single.size(); ++s)
    for (std::size_t i = 0; i < single[s].size(); ++i)
      for (std::size_t t = 0; t < single[s][i].size(); ++t)
        EXPECT_NEAR(tta[s][i][t], neural::sigmoid(single[s][i][t]), 1e-12);

  auto jitter = jitter_features(0.3, 5);
  const auto base = tta_infer(params, v, cfg, windows, jitter);
  for (int trial = 0; trial < 5; ++trial) {
    auto perm = windows;
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(tta_infer(params, v, cfg, perm, jitter), base);
  }
  for (const auto& s : base)
    for (const auto& c : s)
      for (double p : c) EXPECT_TRUE(p > 0.0 && p < 1.0);
  EXPECT_THROW(tta_infer(params, v, cfg, {}, jitter), ValidationError);
}

TEST(Tta, OpposingLogitsAverageToHalf) {
  std::mt19937_64 rng(9);
  const VideoDoc v = testing_support::random_video(rng, 3, 2, 4, 3, 2, [](auto, auto i) { return int(i) + 1; });
  auto params = exchange::make_model({3, 4, 1, 5});
  // logit = 2 relu(r_0) - 1: +1 when the first feature is 1, -1 when it is 0
  params["cls.fc1.w"].at(0, 0) = 1.0;
  params["cls.fc2.w"][0] = 2.0;
  params["cls.fc2.b"][0] = -1.0;
  const WindowFeatureFn fn = [](const CropWindow& w, const VideoDoc& video, std::size_t s) {
    SceneFeatures f = video.scenes[s].features;
    std::fill(f.r_v.begin(), f.r_v.end(), w.flipped ? 0.0 : 1.0);
    std::fill(f.r_av.begin(), f.r_av.end(), w.flipped ? 0.0 : 1.0);
    return f;
  };
  for (const auto& s : tta_infer(params, v, {}, tta_windows(144, 144, 128, 128), fn))
    for (const auto& c : s)
      for (double p : c) EXPECT_EQ(p, 0.5);
}

class Cli : public ::testing::Test {
 protected:
  int run(std::vector<std::string> args) {
    out.str("");
    err.str("");
    return run_cli(std::move(args), out, err);
  }
  std::ostringstream out, err;
  TempDir tmp{"cli"};
};

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"bogus"}), 1);
  EXPECT_EQ(run({"infer", "--corpus", "x"}), 1);
  EXPECT_EQ(run({"synth", "--config", tmp / "missing.cfg", "--out", tmp / "c"}), 2);
  csv::write_file(tmp / "bad.cfg", "videos=0\n");
  EXPECT_EQ(run({"synth", "--config", tmp / "bad.cfg", "--out", tmp / "c"}), 1);
  csv::write_file(tmp / "typo.cfg", "vidoes=3\n");
  EXPECT_EQ(run({"synth", "--config", tmp / "typo.cfg", "--out", tmp / "c"}), 1);
  EXPECT_NE(err.str().find("vidoes"), std::string::npos);
  EXPECT_EQ(run({"eval", "--pred", tmp / "none.csv", "--ann", tmp / "none", "--out-dir", tmp / "e"}), 2);
}

TEST_F(Cli, Gradcheck) {
  EXPECT_EQ(run({"gradcheck", "--seed", "7"}), 0);
  EXPECT_NE(out.str().find("max_rel_error"), std::string::npos);
}

TEST_F(Cli, EndToEnd) {
  csv::write_file(tmp / "s.cfg", "videos=4\nval_videos=1\ntest_videos=1\nscenes=3\nframes=4\ndim=3\n");
  ASSERT_EQ(run({"synth", "--config", tmp / "s.cfg", "--out", tmp / "c"}), 0);
  csv::write_file(tmp / "t.cfg", "total_epochs=3\nwarmup_epochs=1\nhidden=4\nlayers=1\nexamples_per_epoch=8\n");
  ASSERT_EQ(run({"train", "--corpus", tmp / "c", "--config", tmp / "t.cfg", "--out-ckpt", tmp / "m.ckpt", "--log",
                 tmp / "log.csv"}),
            0)
      << err.str();
  const csv::Table log = csv::read(tmp / "log.csv");
  EXPECT_EQ(log.header.size(), 8u);
  EXPECT_EQ(log.rows.size(), 4u);  // epoch 0 plus three trained epochs
  for (const char* mode : {"bidirectional", "forward-only", "per-scene"})
    ASSERT_EQ(run({"infer", "--corpus", tmp / "c", "--ckpt", tmp / "m.ckpt", "--mode", mode, "--out", tmp / "p.csv"}), 0);
  ASSERT_EQ(run({"infer", "--corpus", tmp / "c", "--ckpt", tmp / "m.ckpt", "--tta", "--out", tmp / "p.csv"}), 0);
  EXPECT_EQ(eval::read_predictions(tmp / "p.csv").size(), 3u * 2 * 4);
  ASSERT_EQ(run({"eval", "--pred", tmp / "p.csv", "--ann", tmp / "c", "--out-dir", tmp / "ev"}), 0) << err.str();
  EXPECT_TRUE(std::filesystem::exists(tmp / "ev/summary.csv"));
  EXPECT_TRUE(std::filesystem::exists(tmp / "ev/roc.csv"));
  EXPECT_EQ(run({"infer", "--corpus", tmp / "c", "--ckpt", tmp / "nope.ckpt", "--out", tmp / "q.csv"}), 2);
  EXPECT_EQ(run({"infer", "--corpus", tmp / "c", "--ckpt", tmp / "m.ckpt", "--mode", "sideways", "--out", tmp / "q.csv"}), 1);
}

TEST_F(Cli, AverageCheckpoints) {
  auto a = testing_support::noisy_model({3, 4, 1, 5}, 1);
  neural::save_checkpoint(a, tmp / "a.ckpt");
  std::string list;
  for (int i = 0; i < 5; ++i) list += (i ? "," : "") + tmp / "a.ckpt";
  ASSERT_EQ(run({"avg-ckpt", "--in", list, "--out", tmp / "avg.ckpt"}), 0) << err.str();
  EXPECT_EQ(neural::load_checkpoint(tmp / "avg.ckpt"), a);
  auto b = testing_support::noisy_model({3, 5, 1, 5}, 1);
  neural::save_checkpoint(b, tmp / "b.ckpt");
  EXPECT_EQ(run({"avg-ckpt", "--in", tmp / "a.ckpt," + tmp / "b.ckpt", "--out", tmp / "x.ckpt"}), 1);
  EXPECT_EQ(run({"avg-ckpt", "--in", tmp / "missing.ckpt", "--out", tmp / "x.ckpt"}), 2);
}

TEST_F(Cli, Cluster) {
  csv::write_file(tmp / "emb.csv",
                  "track_id,e0,e1,e2\na,1,0,0\nb,0.9,0.1,0\nb,1.1,-0.1,0\nc,0,1,0\nd,0,0.9,0.2\ne,1,0.05,0\n");
  csv::write_file(tmp / "ov.csv", "track_a,track_b\na,e\n");
  ASSERT_EQ(run({"cluster", "--embeddings", tmp / "emb.csv", "--overlaps", tmp / "ov.csv", "--out", tmp / "cl.csv"}), 0)
      << err.str();
  const csv::Table t = csv::read(tmp / "cl.csv");
  ASSERT_EQ(t.rows.size(), 5u);
  std::map<std::string, std::string> id;
  for (const auto& r : t.rows) id[r[0]] = r[1];
  EXPECT_EQ(id["a"], "1");
  EXPECT_EQ(id["c"], id["d"]);
  EXPECT_NE(id["a"], id["e"]);
  EXPECT_NE(id["a"], id["c"]);
  const csv::Table trace = csv::read(tmp / "cl.trace.csv");
  for (std::size_t k = 1; k < trace.rows.size(); ++k)
    EXPECT_GE(parse_double(trace.rows[k][3]), parse_double(trace.rows[k - 1][3]));
  csv::write_file(tmp / "ov2.csv", "track_a,track_b\na,zz\n");
  EXPECT_EQ(run({"cluster", "--embeddings", tmp / "emb.csv", "--overlaps", tmp / "ov2.csv", "--out", tmp / "x.csv"}), 1);
}

#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "unicon/cluster.hpp"
#include "unicon/corpus_io.hpp"
#include "unicon/eval.hpp"
#include "unicon/toolkit/config.hpp"
#include "unicon/toolkit/gradcheck_toy.hpp"
#include "unicon/toolkit/synth.hpp"
#include "unicon/toolkit/tta.hpp"
#include "unicon/trainer.hpp"

namespace unicon::toolkit {

inline trainer::TrainConfig train_config_from(KeyValues& kv) {
  trainer::TrainConfig c;
  kv.get("total_epochs", c.total_epochs);
  kv.get("warmup_epochs", c.warmup_epochs);
  if (kv.has("max_lr")) {
    double lr = 0.0;
    kv.get("max_lr", lr);
    c.max_lr = lr;
  }
  kv.get("scenes_per_example", c.scenes_per_example);
  kv.get("batch_size", c.batch_size);
  kv.get("examples_per_epoch", c.examples_per_epoch);
  kv.get("patience", c.patience);
  kv.get("keep_best", c.keep_best);
  kv.get("seed", c.seed);
  kv.get("weight_decay", c.weight_decay);
  kv.get("hidden", c.dims.hidden);
  kv.get("layers", c.dims.layers);
  kv.get("head_width", c.dims.head_width);
  return c;
}

namespace cli_detail {

inline std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

inline int cmd_synth(const std::string& config, const std::string& out_dir, std::ostream& out) {
  KeyValues kv = config.empty() ? KeyValues{} : KeyValues::load(config);
  const SynthConfig sc = synth_config_from(kv);
  kv.reject_unknown();
  const SynthCorpus sy = gen_corpus(sc);
  save_corpus(sy.corpus, out_dir);
  out << "wrote " << sy.corpus.size() << " videos to " << out_dir << "\n";
  return 0;
}

inline int cmd_train(const std::string& corpus_dir, const std::string& config, const std::string& out_ckpt,
                     const std::string& log_path, std::ostream& out) {
  KeyValues kv = config.empty() ? KeyValues{} : KeyValues::load(config);
  trainer::TrainConfig tc = train_config_from(kv);
  std::uint64_t init_seed = tc.seed;
  kv.get("init_seed", init_seed);
  kv.reject_unknown();
  const Corpus corpus = load_corpus(corpus_dir);
  const auto train_set = videos_in_split(corpus, "train");
  const auto val_set = videos_in_split(corpus, "val");
  if (train_set.empty()) throw ValidationError("corpus has no videos in split 'train'");
  if (val_set.empty()) throw ValidationError("corpus has no videos in split 'val'");
  tc.dims.feature_dim = train_set.front()->scenes.front().features.dim;
  neural::ParamStore init = exchange::make_model(tc.dims);
  neural::he_init(init, init_seed);

  std::string log = trainer::epoch_log_header() + "\n";
  const auto res = trainer::train(train_set, val_set, tc, std::move(init), [&](const trainer::EpochLog& e) {
    const std::string line = trainer::epoch_log_line(e);
    log += line + "\n";
    out << line << "\n";
  });
  if (!log_path.empty()) csv::write_file(log_path, log);
  neural::save_checkpoint(res.best, out_ckpt);
  for (std::size_t k = 0; k < res.top.size(); ++k)
    neural::save_checkpoint(res.top[k].params, sibling(out_ckpt, ".top" + std::to_string(k + 1) + ".ckpt"));
  out << "best epoch " << res.best_epoch << " val_map " << format_double(res.best_map) << "\n";
  return 0;
}

inline int cmd_infer(const std::string& corpus_dir, const std::string& ckpt, const std::string& mode_name,
                     std::optional<int> reset_period, bool tta, double tta_jitter, const std::string& split,
                     const std::string& out_path, std::ostream& out) {
  exchange::ExchangeConfig cfg;
  cfg.mode = exchange::parse_mode(mode_name);
  cfg.reset_period = reset_period.value_or(cfg.mode == exchange::Mode::forward_only ? 4 : 0);
  if (cfg.reset_period < 0) throw ValidationError("--reset-period must be >= 0");
  const neural::ParamStore params = neural::load_checkpoint(ckpt);
  const Corpus corpus = load_corpus(corpus_dir);
  std::vector<eval::ScoredFrame> rows;
  for (const VideoDoc* v : videos_in_split(corpus, split)) {
    std::vector<std::vector<Vec>> probs;
    if (tta) {
      probs = tta_infer(params, *v, cfg, tta_windows(144, 144, 128, 128),
                        tta_jitter > 0.0 ? jitter_features(tta_jitter, 0) : identity_features());
    } else {
      probs = trainer::infer_logits(params, *v, cfg);
      for (auto& s : probs)
        for (auto& c : s)
          for (double& x : c) x = neural::sigmoid(x);
    }
    for (std::size_t s = 0; s < v->scenes.size(); ++s)
      for (std::size_t i = 0; i < v->scenes[s].candidates.size(); ++i) {
        const FaceTrack& tr = v->scenes[s].candidates[i];
        for (std::size_t t = 0; t < tr.frames.size(); ++t)
          rows.push_back({v->video_id, tr.track_id, tr.frames[t].timestamp_ms, probs[s][i][t]});
      }
  }
  csv::write_file(out_path, eval::predictions_csv(rows));
  out << "wrote " << rows.size() << " predictions (" << exchange::to_string(cfg.mode) << ", reset_period "
      << cfg.reset_period << ") to " << out_path << "\n";
  return 0;
}

inline int cmd_eval(const std::string& pred, const std::string& ann, const std::string& out_dir, std::ostream& out) {
  const auto predictions = eval::read_predictions(pred);
  std::set<std::string> predicted_videos;
  for (const auto& p : predictions) predicted_videos.insert(p.video_id);
  // Only videos that were predicted are scored; a predicted video must cover
  // every annotated track.
  std::vector<eval::AnnotatedTrack> annotations;
  for (auto& a : eval::read_annotations(ann))
    if (predicted_videos.count(a.video_id)) annotations.push_back(std::move(a));
  const auto records = eval::join(predictions, annotations);
  const auto parts = eval::evaluate(records);
  std::filesystem::create_directories(out_dir);
  eval::emit_curves(parts, out_dir);
  out << eval::summary_csv(parts);
  return 0;
}

inline int cmd_cluster(const std::string& emb_path, const std::string& overlap_path, double tau, double penalty,
                       const std::string& out_path, std::string trace_path, std::ostream& out) {
  const csv::Table et = csv::read(emb_path);
  if (et.header.empty() || et.header.front() != "track_id" || et.header.size() < 2)
    throw ValidationError(emb_path + ": expected header track_id,e_0,...");
  std::vector<std::string> order;
  std::map<std::string, std::vector<Vec>> rows;
  for (std::size_t r = 0; r < et.rows.size(); ++r) {
    const auto& row = et.rows[r];
    Vec e;
    try {
      for (std::size_t c = 1; c < row.size(); ++c) e.push_back(parse_double(row[c]));
    } catch (const ValidationError& ex) {
      throw ValidationError(emb_path + ":" + std::to_string(et.line_numbers[r]) + ": " + ex.what());
    }
    if (!rows.count(row[0])) order.push_back(row[0]);
    rows[row[0]].push_back(std::move(e));
  }
  std::vector<cluster::TrackEmbedding> emb;
  std::map<std::string, std::size_t> index;
  for (const auto& id : order) {
    const auto& frames = rows[id];
    Vec flat;
    for (const Vec& f : frames) {
      if (f.size() != frames.front().size()) throw ValidationError("embedding width differs for track " + id);
      flat.insert(flat.end(), f.begin(), f.end());
    }
    index[id] = emb.size();
    emb.push_back({id, cluster::average_frames(ConstMatrix{std::span<const double>(flat), frames.size(), frames.front().size()}),
                   frames.size()});
  }
  cluster::OverlapGraph g;
  if (!overlap_path.empty()) {
    const csv::Table ot = csv::read(overlap_path);
    const std::size_t ca = ot.column("track_a"), cb = ot.column("track_b");
    for (std::size_t r = 0; r < ot.rows.size(); ++r) {
      auto a = index.find(ot.rows[r][ca]), b = index.find(ot.rows[r][cb]);
      if (a == index.end() || b == index.end())
        throw ValidationError(overlap_path + ":" + std::to_string(ot.line_numbers[r]) + ": unknown track");
      g.add(a->second, b->second);
    }
  }
  const auto res = cluster::ahc(cluster::pairwise_distances(emb, g, penalty), tau);
  std::string labels = "track_id,cluster_id\n";
  for (std::size_t i = 0; i < emb.size(); ++i) labels += emb[i].track_id + "," + std::to_string(res.labels[i]) + "\n";
  csv::write_file(out_path, labels);
  if (trace_path.empty()) trace_path = sibling(out_path, ".trace.csv");
  std::string trace = "step,a,b,distance\n";
  for (std::size_t k = 0; k < res.trace.size(); ++k)
    trace += std::to_string(k + 1) + "," + std::to_string(res.trace[k].a) + "," + std::to_string(res.trace[k].b) +
             "," + format_double(res.trace[k].distance) + "\n";
  csv::write_file(trace_path, trace);
  out << emb.size() << " tracks, " << res.cluster_count() << " clusters\n";
  return 0;
}

inline int cmd_avg(const std::vector<std::string>& inputs, const std::string& out_path, std::ostream& out) {
  const auto avg = trainer::average_checkpoint_files(inputs);
  neural::save_checkpoint(avg.params, out_path);
  std::string sources;
  for (const auto& s : avg.sources) sources += s + "\n";
  csv::write_file(out_path + ".sources", sources);
  out << "averaged " << inputs.size() << " checkpoints into " << out_path << "\n";
  return 0;
}

inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  const auto rep = run_toy_gradcheck(seed);
  out << "max_rel_error " << format_double(rep.max_rel_error) << " at " << rep.worst_param << "[" << rep.worst_index
      << "] over " << rep.checked << " entries\n";
  return rep.max_rel_error < 1e-6 ? 0 : 1;
}

}  // namespace cli_detail

// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"unicon: cross-scene active speaker detection toolkit", "unicon"};
  app.require_subcommand(1);

  std::string config, out_dir, corpus, out_ckpt, log, ckpt, mode = "bidirectional", split = "test", out_file, pred,
                                                         ann, emb, overlaps, trace;
  std::optional<int> reset_period;
  bool tta = false;
  double tta_jitter = 0.05, tau = cluster::kDefaultThreshold, penalty = cluster::kDefaultPenalty;
  std::vector<std::string> inputs;
  std::uint64_t seed = 7;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", config, "key=value config file");
  synth->add_option("--out", out_dir, "output corpus directory")->required();

  auto* train = app.add_subcommand("train", "train the exchange model");
  train->add_option("--corpus", corpus)->required();
  train->add_option("--config", config);
  train->add_option("--out-ckpt", out_ckpt)->required();
  train->add_option("--log", log);

  auto* infer = app.add_subcommand("infer", "score every candidate frame");
  infer->add_option("--corpus", corpus)->required();
  infer->add_option("--ckpt", ckpt)->required();
  infer->add_option("--mode", mode)->check(
      CLI::IsMember({"bidirectional", "forward-only", "per-scene", "forward_only", "per_scene"}));
  infer->add_option("--reset-period", reset_period, "default: 4 for forward-only, else 0");
  infer->add_flag("--tta", tta, "10-crop test-time augmentation");
  infer->add_option("--tta-jitter", tta_jitter, "per-window feature jitter of the TTA stub");
  infer->add_option("--split", split, "train, val, test or all");
  infer->add_option("--out", out_file)->required();

  auto* ev = app.add_subcommand("eval", "mAP, PR/ROC curves and face-size partitions");
  ev->add_option("--pred", pred)->required();
  ev->add_option("--ann", ann, "corpus directory or annotation CSV")->required();
  ev->add_option("--out-dir", out_dir)->required();

  auto* cl = app.add_subcommand("cluster", "identity assignment by constrained AHC");
  cl->add_option("--embeddings", emb)->required();
  cl->add_option("--overlaps", overlaps);
  cl->add_option("--tau", tau);
  cl->add_option("--penalty", penalty);
  cl->add_option("--out", out_file)->required();
  cl->add_option("--trace", trace, "merge trace CSV (default: <out>.trace.csv)");

  auto* avg = app.add_subcommand("avg-ckpt", "average checkpoints");
  avg->add_option("--in", inputs)->required()->delimiter(',');
  avg->add_option("--out", out_file)->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check on a toy corpus");
  gc->add_option("--seed", seed);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cli_detail::cmd_synth(config, out_dir, out);
    if (*train) return cli_detail::cmd_train(corpus, config, out_ckpt, log, out);
    if (*infer) return cli_detail::cmd_infer(corpus, ckpt, mode, reset_period, tta, tta_jitter, split, out_file, out);
    if (*ev) return cli_detail::cmd_eval(pred, ann, out_dir, out);
    if (*cl) return cli_detail::cmd_cluster(emb, overlaps, tau, penalty, out_file, trace, out);
    if (*avg) return cli_detail::cmd_avg(inputs, out_file, out);
    if (*gc) return cli_detail::cmd_gradcheck(seed, out);
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace unicon::toolkit

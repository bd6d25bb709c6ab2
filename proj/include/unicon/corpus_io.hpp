#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unicon/binio.hpp"
#include "unicon/csv.hpp"
#include "unicon/datamodel.hpp"
#include "unicon/format.hpp"

namespace unicon {

// On-disk layout:
//   <root>/<video_id>/meta.json
//   <root>/<video_id>/features/<scene_id>.bin   magic "UCPF", u32 version, N, T, D, then f64 r_v, r_av, p
//   <root>/<video_id>/labels.csv                track_id,timestamp,x1,y1,x2,y2,label
inline constexpr char kFeatureMagic[] = "UCPF";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string encode_features(const SceneFeatures& f) {
  binio::Writer w;
  w.bytes(std::string_view(kFeatureMagic, 4));
  w.uint<std::uint32_t>(kFeatureVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.candidates));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.frames));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(f.dim));
  for (double x : f.r_v) w.f64(x);
  for (double x : f.r_av) w.f64(x);
  for (double x : f.p) w.f64(x);
  return w.buffer();
}

inline SceneFeatures decode_features(std::string bytes, const std::string& source) {
  binio::Reader r(std::move(bytes), source);
  if (r.bytes(4) != std::string_view(kFeatureMagic, 4)) throw ValidationError(source + ": bad magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != kFeatureVersion)
    throw ValidationError(source + ": unsupported version " + std::to_string(version));
  const auto n = r.uint<std::uint32_t>();
  const auto t = r.uint<std::uint32_t>();
  const auto d = r.uint<std::uint32_t>();
  SceneFeatures f(n, t, d);
  for (double& x : f.r_v) x = r.f64();
  for (double& x : f.r_av) x = r.f64();
  for (double& x : f.p) x = r.f64();
  if (!r.at_end()) throw ValidationError(source + ": trailing bytes after feature block");
  return f;
}

inline std::string labels_csv(const VideoDoc& v) {
  std::string out = "track_id,timestamp,x1,y1,x2,y2,label\n";
  for (const Scene& s : v.scenes)
    for (const FaceTrack& t : s.candidates)
      for (const FrameObs& f : t.frames) {
        out += t.track_id + "," + format_ms(f.timestamp_ms) + "," + format_double(f.bbox.x1) + "," +
               format_double(f.bbox.y1) + "," + format_double(f.bbox.x2) + "," +
               format_double(f.bbox.y2) + "," + std::to_string(f.label) + "\n";
      }
  return out;
}

inline void save_video(const VideoDoc& v, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path dir = root / v.video_id;
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create " + (dir / "features").string() + ": " + ec.message());

  nlohmann::ordered_json meta;
  meta["video_id"] = v.video_id;
  meta["identity_count"] = v.identity_count;
  meta["split"] = v.split;
  meta["scenes"] = nlohmann::ordered_json::array();
  for (const Scene& s : v.scenes) {
    nlohmann::ordered_json js;
    js["scene_id"] = s.scene_id;
    js["index"] = s.index;
    js["tracks"] = nlohmann::ordered_json::array();
    for (const FaceTrack& t : s.candidates)
      js["tracks"].push_back({{"track_id", t.track_id}, {"person_id", t.person_id}, {"ambiguous", t.ambiguous}});
    meta["scenes"].push_back(std::move(js));
    binio::write_file((dir / "features" / (s.scene_id + ".bin")).string(), encode_features(s.features));
  }
  csv::write_file((dir / "meta.json").string(), meta.dump(2) + "\n");
  csv::write_file((dir / "labels.csv").string(), labels_csv(v));
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  for (const VideoDoc& v : corpus) save_video(v, root);
}

// Annotation rows of one labels.csv, grouped by track in file order.
inline std::map<std::string, std::vector<FrameObs>> read_labels(const std::string& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_track = t.column("track_id"), c_ts = t.column("timestamp"), c_x1 = t.column("x1"),
                    c_y1 = t.column("y1"), c_x2 = t.column("x2"), c_y2 = t.column("y2"),
                    c_label = t.column("label");
  std::map<std::string, std::vector<FrameObs>> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      FrameObs f;
      f.timestamp_ms = parse_ms(row[c_ts]);
      f.bbox = {parse_double(row[c_x1]), parse_double(row[c_y1]), parse_double(row[c_x2]),
                parse_double(row[c_y2])};
      f.label = static_cast<int>(parse_int(row[c_label]));
      out[row[c_track]].push_back(f);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(t.line_numbers[i]) + ": " + e.what());
    }
  }
  return out;
}

inline VideoDoc load_video(const std::filesystem::path& dir, bool require_identities = true) {
  const std::string meta_path = (dir / "meta.json").string();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(binio::read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path + ": " + e.what());
  }
  VideoDoc v;
  auto labels = read_labels((dir / "labels.csv").string());
  try {
    v.video_id = meta.at("video_id").get<std::string>();
    v.identity_count = meta.at("identity_count").get<int>();
    v.split = meta.value("split", std::string());
    for (const auto& js : meta.at("scenes")) {
      Scene s;
      s.scene_id = js.at("scene_id").get<std::string>();
      s.index = js.at("index").get<int>();
      for (const auto& jt : js.at("tracks")) {
        FaceTrack t;
        t.track_id = jt.at("track_id").get<std::string>();
        t.person_id = jt.at("person_id").get<int>();
        t.ambiguous = jt.value("ambiguous", false);
        auto it = labels.find(t.track_id);
        if (it == labels.end()) throw ValidationError("track " + t.track_id + " has no label rows");
        t.frames = std::move(it->second);
        labels.erase(it);
        s.candidates.push_back(std::move(t));
      }
      const auto feat_path = dir / "features" / (s.scene_id + ".bin");
      if (!std::filesystem::exists(feat_path))
        throw ValidationError("missing feature block for scene " + s.scene_id);
      s.features = decode_features(binio::read_file(feat_path.string()), feat_path.string());
      v.scenes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path + ": " + e.what());
  }
  if (!labels.empty())
    throw ValidationError((dir / "labels.csv").string() + ": rows for unknown track " + labels.begin()->first);
  validate(v, require_identities);
  return v;
}

// Loads every video directory under root, sorted by directory name.
inline Corpus load_corpus(const std::filesystem::path& root, bool require_identities = true) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("not a corpus directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  Corpus c;
  for (const auto& d : dirs) c.push_back(load_video(d, require_identities));
  validate(c, require_identities);
  return c;
}

}  // namespace unicon

#include "drivecap/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "drivecap/errors.hpp"
#include "drivecap/rng.hpp"
#include "drivecap/tensor_io.hpp"

namespace drivecap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ScenarioSpec {
  std::string id;
  std::string narration;
  std::string reasoning;
};

const std::vector<ScenarioSpec>& scenario_specs() {
  static const std::vector<ScenarioSpec> kSpecs = {
      {"accelerate_green", "the car accelerates", "because the traffic light turns green"},
      {"stop_red", "the car stops", "because the traffic light is red"},
      {"turn_left", "the car turns left", "because the road curves to the left"},
      {"turn_right", "the car turns right", "because the road curves to the right"},
      {"pull_over", "the car pulls over to the right side", "because the car is parking"},
      {"cruise", "the car maintains a steady speed", "because the road ahead is clear"},
  };
  return kSpecs;
}

constexpr double kMaxSpeed = 15.0;  // m/s ceiling across scenarios
constexpr double kScrollPerSpeed = 0.8;  // px of lane scroll per m/s per frame
constexpr double kLanePxPerDegree = 0.3;

struct Trajectory {
  std::vector<double> speed;
  std::vector<double> course;
};

Trajectory make_trajectory(const std::string& scenario, size_t frames, Rng& rng) {
  Trajectory t;
  t.speed.resize(frames);
  t.course.assign(frames, 0.0);
  const double last = static_cast<double>(frames - 1);
  auto ramp = [&](double from, double to, size_t i) {
    return from + (to - from) * static_cast<double>(i) / last;
  };
  if (scenario == "accelerate_green") {
    const double v0 = rng.uniform(0.0, 3.0);
    const double v1 = rng.uniform(10.0, kMaxSpeed);
    for (size_t i = 0; i < frames; ++i) t.speed[i] = ramp(v0, v1, i);
  } else if (scenario == "stop_red") {
    const double v0 = rng.uniform(8.0, kMaxSpeed);
    for (size_t i = 0; i < frames; ++i) t.speed[i] = ramp(v0, 0.0, i);
  } else if (scenario == "turn_left" || scenario == "turn_right") {
    const double v = rng.uniform(4.0, 8.0);
    const double peak = rng.uniform(40.0, 80.0) * (scenario == "turn_left" ? -1.0 : 1.0);
    for (size_t i = 0; i < frames; ++i) {
      t.speed[i] = v;
      t.course[i] = ramp(0.0, peak, i);
    }
  } else if (scenario == "pull_over") {
    const double v0 = rng.uniform(6.0, 10.0);
    const double bump = rng.uniform(10.0, 20.0);
    for (size_t i = 0; i < frames; ++i) {
      t.speed[i] = ramp(v0, 0.0, i);
      t.course[i] = bump * std::sin(M_PI * static_cast<double>(i) / last);
    }
  } else if (scenario == "cruise") {
    const double v = rng.uniform(8.0, kMaxSpeed);
    for (size_t i = 0; i < frames; ++i) t.speed[i] = v;
  } else {
    throw ContractError("unknown scenario '" + scenario + "'");
  }
  return t;
}

void fill_rect(std::vector<float>& frame, size_t size, size_t y0, size_t y1, size_t x0, size_t x1,
               float r, float g, float b) {
  y1 = std::min(y1, size);
  x1 = std::min(x1, size);
  for (size_t y = y0; y < y1; ++y) {
    float* row = frame.data() + (y * size + x0) * 3;
    for (size_t x = x0; x < x1; ++x) {
      row[0] = r;
      row[1] = g;
      row[2] = b;
      row += 3;
    }
  }
}

void fill_disc(std::vector<float>& frame, size_t size, double cy, double cx, double radius,
               float r, float g, float b) {
  const size_t y0 = static_cast<size_t>(std::max(0.0, cy - radius));
  const size_t y1 = std::min(size, static_cast<size_t>(cy + radius + 1.0));
  for (size_t y = y0; y < y1; ++y) {
    for (size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= radius * radius) {
        float* p = frame.data() + (y * size + x) * 3;
        p[0] = r;
        p[1] = g;
        p[2] = b;
      }
    }
  }
}

void render_frame(std::vector<float>& frame, size_t size, const std::string& scenario,
                  double speed, double course, double scroll_phase) {
  frame.assign(size * size * 3, 0.0f);
  const size_t half = size / 2;
  fill_rect(frame, size, 0, half, 0, size, 0.55f, 0.65f, 0.75f);   // sky
  fill_rect(frame, size, half, size, 0, size, 0.22f, 0.22f, 0.24f);  // road

  // dashed lane line, scrolled by integrated speed, shifted by course
  const long lane_center = static_cast<long>(size / 2) +
                           static_cast<long>(std::lround(course * kLanePxPerDegree));
  const long phase = static_cast<long>(std::lround(scroll_phase));
  for (size_t y = half; y < size; ++y) {
    const long cycle = (static_cast<long>(y) + phase) % 16;
    if (cycle < 0 || cycle >= 8) continue;
    for (long x = lane_center - 1; x <= lane_center + 1; ++x) {
      if (x < 0 || x >= static_cast<long>(size)) continue;
      float* p = frame.data() + (y * size + static_cast<size_t>(x)) * 3;
      p[0] = p[1] = p[2] = 0.95f;
    }
  }

  // scenario cue disc in the sky region
  const double radius = static_cast<double>(size) / 8.0;
  const double cy = static_cast<double>(size) / 4.0;
  if (scenario == "accelerate_green") {
    fill_disc(frame, size, cy, size / 2.0, radius, 0.10f, 0.90f, 0.20f);
  } else if (scenario == "stop_red") {
    fill_disc(frame, size, cy, size / 2.0, radius, 0.92f, 0.10f, 0.10f);
  } else if (scenario == "turn_left") {
    fill_disc(frame, size, cy, size / 4.0, radius, 0.90f, 0.80f, 0.10f);
  } else if (scenario == "turn_right") {
    fill_disc(frame, size, cy, 3.0 * size / 4.0, radius, 0.90f, 0.80f, 0.10f);
  } else if (scenario == "pull_over") {
    fill_disc(frame, size, cy, 3.0 * size / 4.0, radius, 0.20f, 0.30f, 0.90f);
  }
  // cruise renders no disc

  // dashboard-style overlays: a bottom strip whose brightness tracks speed,
  // a speed bar on the left edge, and a signed course bar along the top
  const float speed_level = static_cast<float>(speed / kMaxSpeed);
  fill_rect(frame, size, size - 4, size, 0, size, speed_level, speed_level, speed_level);
  const size_t speed_px =
      static_cast<size_t>(std::lround(speed / kMaxSpeed * static_cast<double>(size - 2)));
  if (speed_px > 0) fill_rect(frame, size, size - 1 - speed_px, size - 1, 1, 7, 0.98f, 0.98f, 0.98f);
  const float course_level = static_cast<float>(0.5 + 0.5 * course / 90.0);
  fill_rect(frame, size, 4, 8, 0, size, course_level, course_level, 0.0f);
  const long course_px = std::lround(course / 90.0 * (static_cast<double>(size) / 2.0 - 2.0));
  const long mid = static_cast<long>(size / 2);
  const long cx0 = course_px >= 0 ? mid : mid + course_px;
  const long cx1 = course_px >= 0 ? mid + course_px : mid;
  if (cx1 > cx0)
    fill_rect(frame, size, 0, 4, static_cast<size_t>(std::max(0L, cx0)),
              static_cast<size_t>(std::min<long>(size, cx1)), 0.98f, 0.60f, 0.10f);
}

json episode_to_json(const Episode& e) {
  json signals = json::array();
  for (const auto& s : e.signals) signals.push_back(json::array({s[0], s[1]}));
  return json{{"clip", e.clip_path},
              {"narration", e.narration},
              {"reasoning", e.reasoning},
              {"scenario", e.scenario},
              {"signals", signals}};
}

Episode episode_from_json(const json& j, size_t line_no) {
  static const std::set<std::string> kKeys = {"clip", "narration", "reasoning", "scenario",
                                              "signals"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kKeys.count(it.key()))
      throw IoError("manifest line " + std::to_string(line_no) + ": unknown field '" + it.key() +
                    "'");
  Episode e;
  try {
    e.clip_path = j.at("clip").get<std::string>();
    e.narration = j.at("narration").get<std::string>();
    e.reasoning = j.at("reasoning").get<std::string>();
    e.scenario = j.at("scenario").get<std::string>();
    for (const auto& s : j.at("signals")) {
      if (!s.is_array() || s.size() != kFileSignalChannels)
        throw IoError("manifest line " + std::to_string(line_no) + ": signal tuples must be " +
                      std::to_string(kFileSignalChannels) + "-wide");
      e.signals.push_back({s[0].get<double>(), s[1].get<double>()});
    }
  } catch (const json::exception& ex) {
    throw IoError("manifest line " + std::to_string(line_no) + ": " + ex.what());
  }
  if (e.narration.empty() || e.reasoning.empty())
    throw IoError("manifest line " + std::to_string(line_no) + ": empty caption");
  return e;
}

size_t worker_count(size_t jobs) {
  size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ADAPT_NUM_WORKERS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1) workers = static_cast<size_t>(parsed);
  }
  return std::min(workers, std::max<size_t>(jobs, 1));
}

}  // namespace

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> kNames = [] {
    std::vector<std::string> names;
    for (const auto& s : scenario_specs()) names.push_back(s.id);
    return names;
  }();
  return kNames;
}

Dataset gen_synthetic(const std::string& out_dir, const GenOptions& options) {
  if (options.clips == 0) throw ConfigError("gen_synthetic: clip count must be positive");
  if (options.frames < 2) throw ConfigError("gen_synthetic: need at least two frames per clip");
  if (options.size % 32 != 0 || options.size == 0)
    throw ConfigError("gen_synthetic: frame size must be a positive multiple of 32");

  fs::create_directories(fs::path(out_dir) / "clips");
  Dataset ds;
  ds.root = out_dir;
  ds.episodes.resize(options.clips);

  Rng master(options.seed);
  auto render_episode = [&](size_t index) {
    Rng rng = master.fork(index);
    const auto& spec = scenario_specs()[index % scenario_specs().size()];
    const Trajectory traj = make_trajectory(spec.id, options.frames, rng);

    VideoClip clip;
    clip.frames = options.frames;
    clip.height = clip.width = options.size;
    clip.data.resize(options.frames * options.size * options.size * 3);
    char name[64];
    std::snprintf(name, sizeof name, "clips/clip_%05zu.adpt", index);
    clip.source = name;

    std::vector<float> frame;
    double scroll = 0.0;
    for (size_t f = 0; f < options.frames; ++f) {
      render_frame(frame, options.size, spec.id, traj.speed[f], traj.course[f], scroll);
      std::copy(frame.begin(), frame.end(), clip.data.begin() + f * clip.frame_stride());
      scroll += traj.speed[f] * kScrollPerSpeed;
    }
    write_clip_file((fs::path(out_dir) / name).string(), clip);

    Episode e;
    e.clip_path = name;
    e.narration = spec.narration;
    e.reasoning = spec.reasoning;
    e.scenario = spec.id;
    for (size_t f = 0; f < options.frames; ++f)
      e.signals.push_back({traj.speed[f], traj.course[f]});
    ds.episodes[index] = std::move(e);
  };

  const size_t workers = worker_count(options.clips);
  if (workers <= 1) {
    for (size_t i = 0; i < options.clips; ++i) render_episode(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < options.clips; i = next.fetch_add(1))
          render_episode(i);
      });
    for (auto& t : pool) t.join();
  }

  std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + out_dir);
  for (const auto& e : ds.episodes) manifest << episode_to_json(e).dump() << '\n';
  return ds;
}

Dataset read_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.jsonl";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  Dataset ds;
  ds.root = dir;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
    Episode e = episode_from_json(j, line_no);
    const fs::path clip_path = fs::path(dir) / e.clip_path;
    StoredTensor header = read_tensor_file(clip_path.string());
    if (header.shape.size() != 4 || header.shape[3] != 3)
      throw IoError("clip " + e.clip_path + ": expected rank-4 RGB clip, got " +
                    shape_str(header.shape));
    if (header.shape[0] != e.signals.size())
      throw IoError("clip " + e.clip_path + ": " + std::to_string(header.shape[0]) +
                    " frames vs " + std::to_string(e.signals.size()) + " signal tuples");
    ds.episodes.push_back(std::move(e));
  }
  return ds;
}

VideoClip read_clip_file(const std::string& path) {
  StoredTensor t = read_tensor_file(path);
  if (t.shape.size() != 4 || t.shape[3] != 3)
    throw IoError("clip " + path + ": expected (frames, height, width, 3), got " +
                  shape_str(t.shape));
  VideoClip clip;
  clip.frames = t.shape[0];
  clip.height = t.shape[1];
  clip.width = t.shape[2];
  clip.data = std::move(t.values);
  clip.source = path;
  return clip;
}

void write_clip_file(const std::string& path, const VideoClip& clip) {
  clip.validate();
  write_tensor_file(path, {clip.frames, clip.height, clip.width, 3}, clip.data);
}

VideoClip load_clip(const Dataset& dataset, const Episode& episode) {
  VideoClip clip = read_clip_file((fs::path(dataset.root) / episode.clip_path).string());
  clip.source = episode.clip_path;
  return clip;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Dataset import_external(const std::string& src_dir, const std::string& out_dir) {
  const fs::path src(src_dir);
  std::ifstream captions_file(src / "captions.csv");
  if (!captions_file) throw IoError("import: missing " + (src / "captions.csv").string());
  std::map<std::string, std::pair<std::string, std::string>> captions;
  std::string line;
  bool header = true;
  while (std::getline(captions_file, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw IoError("import: captions.csv rows need 3 fields");
    captions[fields[0]] = {fields[1], fields[2]};
  }

  fs::create_directories(fs::path(out_dir) / "clips");
  Dataset ds;
  ds.root = out_dir;

  std::vector<std::string> episode_ids;
  for (const auto& entry : fs::directory_iterator(src))
    if (entry.is_directory()) episode_ids.push_back(entry.path().filename().string());
  std::sort(episode_ids.begin(), episode_ids.end());
  if (episode_ids.empty()) throw IoError("import: no episode directories in " + src_dir);

  for (const auto& id : episode_ids) {
    const fs::path ep = src / id;
    std::vector<std::string> frame_files;
    for (const auto& entry : fs::directory_iterator(ep))
      if (entry.path().extension() == ".ppm") frame_files.push_back(entry.path().string());
    std::sort(frame_files.begin(), frame_files.end());
    if (frame_files.empty()) throw IoError("import: episode " + id + " has no .ppm frames");

    VideoClip clip;
    for (size_t f = 0; f < frame_files.size(); ++f) {
      size_t h = 0, w = 0;
      std::vector<float> rgb;
      read_ppm(frame_files[f], &h, &w, &rgb);
      if (f == 0) {
        clip.height = h;
        clip.width = w;
        clip.frames = frame_files.size();
        clip.data.resize(clip.frames * clip.frame_stride());
      } else if (h != clip.height || w != clip.width) {
        throw IoError("import: episode " + id + " mixes frame geometries");
      }
      std::copy(rgb.begin(), rgb.end(), clip.data.begin() + f * clip.frame_stride());
    }

    Episode e;
    e.clip_path = "clips/" + id + ".adpt";
    clip.source = e.clip_path;
    write_clip_file((fs::path(out_dir) / e.clip_path).string(), clip);

    std::ifstream signals_file(ep / "signals.csv");
    if (!signals_file) throw IoError("import: episode " + id + " missing signals.csv");
    bool sig_header = true;
    while (std::getline(signals_file, line)) {
      if (sig_header) {
        sig_header = false;
        continue;
      }
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != 2) throw IoError("import: signals.csv rows need speed,course");
      e.signals.push_back({std::stod(fields[0]), std::stod(fields[1])});
    }
    if (e.signals.size() != clip.frames)
      throw IoError("import: episode " + id + " has " + std::to_string(e.signals.size()) +
                    " signal rows for " + std::to_string(clip.frames) + " frames");

    auto cap = captions.find(id);
    if (cap == captions.end()) throw IoError("import: no captions for episode " + id);
    e.narration = cap->second.first;
    e.reasoning = cap->second.second;
    e.scenario = "imported";
    ds.episodes.push_back(std::move(e));
  }

  std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + out_dir);
  for (const auto& e : ds.episodes) manifest << episode_to_json(e).dump() << '\n';
  return ds;
}

void write_ppm(const std::string& path, size_t height, size_t width,
               const std::vector<float>& rgb) {
  if (rgb.size() != height * width * 3) throw ContractError("write_ppm: bad buffer size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (float v : rgb) {
    const int byte = std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255);
    out.put(static_cast<char>(byte));
  }
}

void read_ppm(const std::string& path, size_t* height, size_t* width, std::vector<float>* rgb) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError(path + ": not a binary PPM");
  size_t w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (maxval != 255) throw IoError(path + ": only maxval 255 PPMs are supported");
  in.get();  // single whitespace after header
  std::vector<char> raw(w * h * 3);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(path + ": truncated pixel data");
  rgb->resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    (*rgb)[i] = static_cast<float>(static_cast<unsigned char>(raw[i])) / 255.0f;
  *height = h;
  *width = w;
}

}  // namespace drivecap

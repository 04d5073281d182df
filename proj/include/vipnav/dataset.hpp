#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <png.h>
#include <nlohmann/json.hpp>

#include "vipnav/depth_noise.hpp"
#include "vipnav/image.hpp"
#include "vipnav/representation.hpp"
#include "vipnav/sim.hpp"
#include "vipnav/train.hpp"

namespace vipnav {

// ---------------------------------------------------------------------------
// PGM (binary P5). 16-bit samples are big-endian; depth is stored in mm.

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct PgmHeader {
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

inline PgmHeader parse_pgm_header(const std::vector<unsigned char>& b) {
  std::size_t pos = 0;
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw FormatError("not a binary PGM (expected P5)", 0);
  pos = 2;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > 1000000) throw FormatError(std::string("PGM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PGM: expected ") + what, start);
    return static_cast<int>(v);
  };
  PgmHeader h;
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("PGM: missing whitespace after maxval", pos);
  ++pos;
  if (h.width <= 0 || h.height <= 0) throw FormatError("PGM: non-positive dimensions", 2);
  if (h.maxval <= 0 || h.maxval > 65535) throw FormatError("PGM: maxval out of range", pos - 1);
  h.data_offset = pos;
  const std::size_t bytes = static_cast<std::size_t>(h.width) * h.height * (h.maxval > 255 ? 2 : 1);
  if (b.size() < pos + bytes) throw FormatError("PGM: truncated pixel data", b.size());
  return h;
}

}  // namespace detail

inline std::string encode_depth_pgm(const DepthImage& img) {
  std::ostringstream o;
  o << "P5\n" << img.width() << ' ' << img.height() << "\n65535\n";
  std::string s = o.str();
  s.reserve(s.size() + 2 * img.size());
  for (float d : img.pixels()) {
    if (!(d >= 0.0f) || d > 65.535f) throw std::out_of_range("depth PGM: value outside [0, 65.535] m");
    const auto mm = static_cast<std::uint16_t>(std::lround(static_cast<double>(d) * 1000.0));
    s.push_back(static_cast<char>(mm >> 8));
    s.push_back(static_cast<char>(mm & 0xFF));
  }
  return s;
}

inline void write_depth_pgm(const std::string& path, const DepthImage& img) {
  detail::write_file(path, encode_depth_pgm(img));
}

inline DepthImage decode_depth_pgm(const std::vector<unsigned char>& b) {
  const auto h = detail::parse_pgm_header(b);
  if (h.maxval <= 255) throw FormatError("depth PGM: expected 16-bit samples", h.data_offset);
  DepthImage img(h.width, h.height);
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::size_t o = h.data_offset + 2 * i;
    const unsigned mm = (static_cast<unsigned>(b[o]) << 8) | b[o + 1];
    if (mm > static_cast<unsigned>(h.maxval)) throw FormatError("depth PGM: sample exceeds maxval", o);
    px[i] = static_cast<float>(mm / 1000.0);
  }
  return img;
}

inline DepthImage read_depth_pgm(const std::string& path) {
  try {
    return decode_depth_pgm(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + std::string(e.what()).substr(0, std::string(e.what()).rfind(" at byte")), e.offset());
  }
}

inline std::string encode_gray_pgm(const GrayImage& img) {
  std::ostringstream o;
  o << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string s = o.str();
  for (std::uint8_t v : img.pixels()) s.push_back(static_cast<char>(v));
  return s;
}

inline void write_gray_pgm(const std::string& path, const GrayImage& img) { detail::write_file(path, encode_gray_pgm(img)); }

inline GrayImage decode_gray_pgm(const std::vector<unsigned char>& b) {
  const auto h = detail::parse_pgm_header(b);
  if (h.maxval > 255) throw FormatError("gray PGM: expected 8-bit samples", h.data_offset);
  GrayImage img(h.width, h.height);
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = b[h.data_offset + i];
  return img;
}

inline GrayImage read_gray_pgm(const std::string& path) {
  try {
    return decode_gray_pgm(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + std::string(e.what()).substr(0, std::string(e.what()).rfind(" at byte")), e.offset());
  }
}

/// 8-bit RGB (or gray) PNG via libpng. No timestamps or text chunks, so the
/// bytes depend only on the pixels.
template <class Pixel>
void write_png(const std::string& path, const Image<Pixel>& img) {
  static_assert(std::is_same_v<Pixel, Rgb> || std::is_same_v<Pixel, std::uint8_t>);
  if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    std::fclose(fp);
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("PNG write failed: " + path);
  }
  png_init_io(png, fp);
  constexpr bool rgb = std::is_same_v<Pixel, Rgb>;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               rgb ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto* base = reinterpret_cast<const unsigned char*>(img.pixels().data());
  const std::size_t stride = static_cast<std::size_t>(img.width()) * sizeof(Pixel);
  for (int y = 0; y < img.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(base + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Manifest: JSON lines. Line 1 is the header, then one record per timestep.

inline constexpr const char* kManifestFormat = "vipnav-manifest";
inline constexpr int kManifestVersion = 1;

struct Manifest {
  std::string scene;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;  // label index -> class name
  CameraIntrinsics camera;
  RobotLimits limits;
  int episodes = 0;
  std::vector<EpisodeRecord> records;
  std::filesystem::path root;  // image paths are relative to this
};

inline nlohmann::json record_to_json(const EpisodeRecord& r) {
  nlohmann::json dets = nlohmann::json::array();
  for (const Detection& d : r.detections) {
    dets.push_back({{"class", d.class_name},
                    {"category", d.category.level()},
                    {"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}}});
  }
  return {{"episode", r.episode},
          {"step", r.step},
          {"time", r.time},
          {"ped_time", r.pedestrian_time},
          {"pose", {r.pose.x, r.pose.y, r.pose.heading}},
          {"depth", r.depth_path},
          {"labels", r.labels_path},
          {"detections", dets},
          {"command", to_string(r.command)},
          {"action", {r.action.v, r.action.omega}},
          {"scene", r.scene},
          {"seed", r.seed},
          {"truncated", r.truncated},
          {"recovery", r.recovery}};
}

inline EpisodeRecord record_from_json(const nlohmann::json& j) {
  EpisodeRecord r;
  r.episode = j.at("episode").get<int>();
  r.step = j.at("step").get<int>();
  r.time = j.at("time").get<double>();
  r.pedestrian_time = j.at("ped_time").get<double>();
  const auto& p = j.at("pose");
  r.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
  r.depth_path = j.at("depth").get<std::string>();
  r.labels_path = j.at("labels").get<std::string>();
  for (const auto& d : j.at("detections")) {
    const auto& b = d.at("bbox");
    r.detections.push_back({d.at("class").get<std::string>(), RiskCategory(d.at("category").get<int>()),
                            BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()}});
  }
  const auto cmd = parse_command(j.at("command").get<std::string>());
  if (!cmd) throw std::runtime_error("unknown command " + j.at("command").dump());
  r.command = *cmd;
  r.action = {j.at("action").at(0).get<double>(), j.at("action").at(1).get<double>()};
  r.scene = j.at("scene").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.truncated = j.at("truncated").get<bool>();
  r.recovery = j.value("recovery", false);
  return r;
}

inline nlohmann::json manifest_header(const Manifest& m) {
  return {{"format", kManifestFormat},
          {"version", kManifestVersion},
          {"scene", m.scene},
          {"seed", m.seed},
          {"classes", m.classes},
          {"camera",
           {{"width", m.camera.width},
            {"height", m.camera.height},
            {"hfov", m.camera.hfov},
            {"max_range", m.camera.max_range},
            {"mount_height", m.camera.mount_height}}},
          {"v_max", m.limits.v_max},
          {"omega_max", m.limits.omega_max},
          {"radius", m.limits.radius},
          {"episodes", m.episodes},
          {"records", m.records.size()}};
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  out << manifest_header(m).dump() << '\n';
  for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ostringstream o;
  write_manifest(o, m);
  detail::write_file(path, o.str());
}

inline Manifest read_manifest(std::istream& in, const std::filesystem::path& root = {}) {
  Manifest m;
  m.root = root;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != kManifestFormat) throw std::runtime_error("not a vipnav manifest");
        const int version = j.value("version", 0);
        if (version != kManifestVersion) {
          throw std::runtime_error("manifest version " + std::to_string(version) + " (this build reads version " +
                                   std::to_string(kManifestVersion) + ")");
        }
        m.scene = j.at("scene").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        const auto& c = j.at("camera");
        m.camera.width = c.at("width").get<int>();
        m.camera.height = c.at("height").get<int>();
        m.camera.hfov = c.at("hfov").get<double>();
        m.camera.max_range = c.at("max_range").get<double>();
        m.camera.mount_height = c.at("mount_height").get<double>();
        m.limits.v_max = j.at("v_max").get<double>();
        m.limits.omega_max = j.at("omega_max").get<double>();
        m.limits.radius = j.value("radius", m.limits.radius);
        m.episodes = j.at("episodes").get<int>();
        expected = j.at("records").get<std::size_t>();
        m.records.reserve(expected);
        have_header = true;
      } else {
        m.records.push_back(record_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw std::runtime_error("manifest: missing header");
  if (m.records.size() != expected) {
    throw std::runtime_error("manifest: header promises " + std::to_string(expected) + " records, found " +
                             std::to_string(m.records.size()));
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  return read_manifest(in, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Rendering datasets

struct RenderJob {
  int episodes = 0;
  std::uint64_t seed = 0;
  EpisodeConfig episode;
};

/// Rolls out `job.episodes` expert episodes. Images stay in memory; pass
/// an output directory to also write them next to a manifest.
inline Manifest render_dataset(const Scene& scene, const RenderJob& job, const std::string& out_dir = "") {
  if (job.episodes < 0) throw std::invalid_argument("render: episode count must be >= 0");
  job.episode.validate();
  Manifest m;
  m.scene = scene.name;
  m.seed = job.seed;
  m.classes = scene.class_vocabulary();
  m.camera = job.episode.camera;
  m.limits = job.episode.limits;
  m.episodes = job.episodes;
  m.root = out_dir;
  const RngStream master(job.seed);
  for (int e = 0; e < job.episodes; ++e) {
    Episode ep = generate_episode(scene, job.episode, master, e);
    for (auto& r : ep.records) {
      std::ostringstream base;
      base << "frames/e" << std::setw(5) << std::setfill('0') << r.episode << "_s" << std::setw(4) << r.step;
      r.depth_path = base.str() + "_depth.pgm";
      r.labels_path = base.str() + "_labels.pgm";
      if (!out_dir.empty()) {
        write_depth_pgm((std::filesystem::path(out_dir) / r.depth_path).string(), *r.depth);
        write_gray_pgm((std::filesystem::path(out_dir) / r.labels_path).string(), *r.labels);
      }
      m.records.push_back(std::move(r));
    }
  }
  if (!out_dir.empty()) write_manifest((std::filesystem::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

// ---------------------------------------------------------------------------
// Materialization

struct MaterializeConfig {
  ReprKind kind = ReprKind::DepthNoiseDet;
  NoiseParams noise;
  std::uint64_t seed = 0;
  int width = 256;
  int height = 192;
  CategoryMap categories = CategoryMap::defaults();
};

/// Turns manifest records into observations of one representation kind.
/// Noise for record i is keyed on (seed, i) only, so every kind is derived
/// from the same raw frames and results do not depend on evaluation order.
class Materializer {
 public:
  Materializer(const Manifest& m, MaterializeConfig cfg) : m_(&m), cfg_(std::move(cfg)) { cfg_.noise.validate(); }

  [[nodiscard]] std::size_t size() const noexcept { return m_->records.size(); }
  [[nodiscard]] const MaterializeConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const Manifest& manifest() const noexcept { return *m_; }

  [[nodiscard]] ReprBundle bundle(std::size_t i) const {
    const EpisodeRecord& r = m_->records.at(i);
    std::optional<DepthImage> depth_store;
    std::optional<GrayImage> label_store;
    const DepthImage* depth = r.depth ? &*r.depth : nullptr;
    const GrayImage* labels = r.labels ? &*r.labels : nullptr;
    try {
      if (!depth) depth = &depth_store.emplace(read_depth_pgm((m_->root / r.depth_path).string()));
      if (!labels) labels = &label_store.emplace(read_gray_pgm((m_->root / r.labels_path).string()));
      const RawFrame f{*depth, *labels, m_->classes, r.detections};
      return make_bundle(cfg_.kind, f, cfg_.categories, cfg_.noise, noise_stream(i), cfg_.width, cfg_.height);
    } catch (const std::exception& e) {
      throw std::runtime_error("record " + std::to_string(i) + " (episode " + std::to_string(r.episode) + ", step " +
                               std::to_string(r.step) + "): " + e.what());
    }
  }

  [[nodiscard]] RngStream noise_stream(std::size_t i) const { return RngStream(cfg_.seed, 0xA06).substream(i); }

 private:
  const Manifest* m_;
  MaterializeConfig cfg_;
};

namespace detail {

// Runs body(i) for i in [0, n) on interleaved threads; each index writes only
// its own slot, so output does not depend on the worker count.
template <class Body>
void parallel_for(std::size_t n, int workers, Body&& body) {
  const std::size_t nw = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += nw) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Every record materialized (counts in == counts out).
inline std::vector<ReprBundle> materialize(const Manifest& m, const MaterializeConfig& cfg, int workers = 0) {
  Materializer mat(m, cfg);
  std::vector<std::optional<ReprBundle>> slots(mat.size());
  detail::parallel_for(mat.size(), workers > 0 ? workers : worker_count_from_env(),
                       [&](std::size_t i) { slots[i].emplace(mat.bundle(i)); });
  std::vector<ReprBundle> out;
  out.reserve(slots.size());
  for (auto& b : slots) out.push_back(std::move(*b));
  return out;
}

/// Network-ready copy of a manifest: inputs, normalized targets.
template <class T>
struct PreparedData {
  std::vector<NetInput<T>> inputs;
  std::vector<Action> targets;
  [[nodiscard]] TrainingData<T> view() const { return TrainingData<T>::from_vectors(inputs, targets); }
};

template <class T>
PreparedData<T> prepare(const Manifest& m, const MaterializeConfig& cfg, int workers = 0) {
  Materializer mat(m, cfg);
  PreparedData<T> d;
  d.inputs.resize(mat.size());
  detail::parallel_for(mat.size(), workers > 0 ? workers : worker_count_from_env(),
                       [&](std::size_t i) { d.inputs[i] = to_input<T>(mat.bundle(i), m.records[i].command); });
  for (const auto& r : m.records) d.targets.push_back(r.action);
  return d;
}

/// Writes a materialized dataset: one PGM (depth or gray) or PNG (RGB) per
/// record plus a PGM for the detection image, and an index file.
inline void write_materialized(const Materializer& mat, const std::string& out_dir) {
  namespace fs = std::filesystem;
  nlohmann::json index = {{"format", "vipnav-representation"},
                          {"version", 1},
                          {"kind", to_string(mat.config().kind)},
                          {"seed", mat.config().seed},
                          {"size", {mat.config().width, mat.config().height}},
                          {"noise", mat.config().noise}};
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < mat.size(); ++i) {
    const ReprBundle b = mat.bundle(i);
    std::ostringstream name;
    name << "r" << std::setw(6) << std::setfill('0') << i;
    nlohmann::json entry;
    if (const auto* d = std::get_if<DepthImage>(&b.primary())) {
      entry["primary"] = name.str() + "_depth.pgm";
      write_depth_pgm((fs::path(out_dir) / entry["primary"].get<std::string>()).string(), *d);
    } else if (const auto* g = std::get_if<GrayImage>(&b.primary())) {
      entry["primary"] = name.str() + "_seg.pgm";
      write_gray_pgm((fs::path(out_dir) / entry["primary"].get<std::string>()).string(), *g);
    } else {
      entry["primary"] = name.str() + "_rgb.png";
      write_png((fs::path(out_dir) / entry["primary"].get<std::string>()).string(), std::get<RgbImage>(b.primary()));
    }
    if (b.semantic()) {
      entry["semantic"] = name.str() + "_det.pgm";
      write_gray_pgm((fs::path(out_dir) / entry["semantic"].get<std::string>()).string(), *b.semantic());
    }
    const auto& r = mat.manifest().records[i];
    entry["command"] = to_string(r.command);
    entry["action"] = {r.action.v, r.action.omega};
    files.push_back(entry);
  }
  index["records"] = files;
  detail::write_file((fs::path(out_dir) / "index.json").string(), index.dump(1) + "\n");
}

}  // namespace vipnav

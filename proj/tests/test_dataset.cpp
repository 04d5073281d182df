#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <sstream>

#include "vipnav/dataset.hpp"

using namespace vipnav;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vipnav_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Scene train_scene() { return load_scene(std::string(VIPNAV_DATA_DIR) + "/scenes/train_corridor.json"); }

RenderJob small_job(int episodes = 3) {
  RenderJob job;
  job.episodes = episodes;
  job.seed = 17;
  job.episode.max_steps = 25;
  job.episode.camera.width = 48;
  job.episode.camera.height = 36;
  return job;
}

MaterializeConfig small_materialize(ReprKind kind) {
  MaterializeConfig c;
  c.kind = kind;
  c.seed = 5;
  c.width = 48;
  c.height = 36;
  return c;
}

}  // namespace

TEST(DepthPgm, MillimeterSamplesBigEndian) {
  DepthImage img(2, 1, std::vector<float>{1.234f, 0.0f});
  const std::string s = encode_depth_pgm(img);
  const std::string header = "P5\n2 1\n65535\n";
  ASSERT_EQ(s.substr(0, header.size()), header);
  const auto* px = reinterpret_cast<const unsigned char*>(s.data() + header.size());
  EXPECT_EQ(px[0] * 256 + px[1], 1234);
  EXPECT_EQ(px[2], 0);
  EXPECT_EQ(px[3], 0);
}

TEST(DepthPgm, RoundTripWithinHalfMillimeter) {
  DepthImage img(37, 23);
  RngStream rng(1);
  for (float& d : img.pixels()) d = rng.bernoulli(0.1) ? 0.0f : static_cast<float>(rng.uniform(0.0, 65.0));
  img(0, 0) = 65.535f;
  const DepthImage back = decode_depth_pgm(bytes_of(encode_depth_pgm(img)));
  ASSERT_TRUE(same_dims(img, back));
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_LE(std::abs(back.pixels()[i] - img.pixels()[i]), 0.0005f + 1e-6f);
    if (img.pixels()[i] == 0.0f) {
      EXPECT_EQ(back.pixels()[i], 0.0f);
    }
  }
}

TEST(DepthPgm, OutOfRangeRejected) {
  EXPECT_THROW(encode_depth_pgm(DepthImage(1, 1, 70.0f)), std::out_of_range);
  EXPECT_THROW(encode_depth_pgm(DepthImage(1, 1, -1.0f)), std::out_of_range);
}

TEST(DepthPgm, MalformedFilesReportByteOffset) {
  auto offset_of = [](const std::string& s) -> long {
    try {
      decode_depth_pgm(bytes_of(s));
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos);
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  EXPECT_EQ(offset_of("P6\n1 1\n65535\n\0\0"), 0);
  EXPECT_EQ(offset_of("P5\n1 x\n65535\n"), 5);
  // 2x2 at 16 bit needs 8 data bytes; 3 are present
  const std::string head = "P5\n2 2\n65535\n";
  EXPECT_EQ(offset_of(head + "abc"), static_cast<long>(head.size() + 3));
  EXPECT_EQ(offset_of("P5\n1 1\n255\nA"), 11);  // 8-bit file where depth is expected
  EXPECT_EQ(offset_of("P5 # comment\n1 1 65535\n\x01\x02"), -1);
}

TEST(GrayPgm, RoundTripAndFiles) {
  GrayImage img(5, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = static_cast<std::uint8_t>(i * 13);
  EXPECT_EQ(decode_gray_pgm(bytes_of(encode_gray_pgm(img))), img);
  const fs::path dir = scratch_dir("gray");
  write_gray_pgm((dir / "sub" / "a.pgm").string(), img);
  EXPECT_EQ(read_gray_pgm((dir / "sub" / "a.pgm").string()), img);
  DepthImage d(3, 3, 2.5f);
  write_depth_pgm((dir / "d.pgm").string(), d);
  EXPECT_EQ(read_depth_pgm((dir / "d.pgm").string()), d);
  EXPECT_THROW(read_gray_pgm((dir / "missing.pgm").string()), std::runtime_error);
  EXPECT_THROW(decode_gray_pgm(bytes_of(encode_depth_pgm(d))), FormatError);
}

TEST(Png, SignatureHeaderAndDeterminism) {
  RgbImage img(7, 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels()[i] = {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(3 * i), 200};
  }
  const fs::path dir = scratch_dir("png");
  write_png((dir / "a.png").string(), img);
  write_png((dir / "b.png").string(), img);
  std::ifstream a(dir / "a.png", std::ios::binary), b(dir / "b.png", std::ios::binary);
  const std::string sa{std::istreambuf_iterator<char>(a), {}}, sb{std::istreambuf_iterator<char>(b), {}};
  EXPECT_EQ(sa, sb);
  ASSERT_GT(sa.size(), 33u);
  EXPECT_EQ(sa.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  EXPECT_EQ(sa.substr(12, 4), "IHDR");
  EXPECT_EQ(static_cast<unsigned char>(sa[19]), 7u);  // width, big-endian
  EXPECT_EQ(static_cast<unsigned char>(sa[23]), 3u);  // height
  EXPECT_EQ(static_cast<unsigned char>(sa[25]), 2u);  // color type RGB
  write_png((dir / "g.png").string(), GrayImage(4, 4, 9));
  std::ifstream g(dir / "g.png", std::ios::binary);
  const std::string sg{std::istreambuf_iterator<char>(g), {}};
  EXPECT_EQ(static_cast<unsigned char>(sg[25]), 0u);  // gray
}

TEST(Manifest, RoundTripOfRenderedRecords) {
  const Manifest m = render_dataset(train_scene(), small_job());
  ASSERT_GT(m.records.size(), 0u);
  std::stringstream buf;
  write_manifest(buf, m);
  const Manifest back = read_manifest(buf);
  EXPECT_EQ(back.scene, m.scene);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.camera.width, 48);
  EXPECT_EQ(back.episodes, 3);
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto &a = m.records[i], &b = back.records[i];
    EXPECT_EQ(a.episode, b.episode);
    EXPECT_EQ(a.step, b.step);
    EXPECT_EQ(a.time, b.time);
    EXPECT_EQ(a.pedestrian_time, b.pedestrian_time);
    EXPECT_EQ(a.pose.x, b.pose.x);
    EXPECT_EQ(a.pose.heading, b.pose.heading);
    EXPECT_EQ(a.command, b.command);
    EXPECT_EQ(a.action, b.action);
    EXPECT_EQ(a.depth_path, b.depth_path);
    EXPECT_EQ(a.labels_path, b.labels_path);
    EXPECT_EQ(a.scene, b.scene);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.truncated, b.truncated);
    EXPECT_EQ(a.recovery, b.recovery);
    ASSERT_EQ(a.detections.size(), b.detections.size());
    for (std::size_t k = 0; k < a.detections.size(); ++k) {
      EXPECT_EQ(a.detections[k].class_name, b.detections[k].class_name);
      EXPECT_EQ(a.detections[k].category.level(), b.detections[k].category.level());
      EXPECT_EQ(a.detections[k].bbox.x_min, b.detections[k].bbox.x_min);
      EXPECT_EQ(a.detections[k].bbox.y_max, b.detections[k].bbox.y_max);
    }
  }
  // and the text is stable
  std::stringstream again;
  write_manifest(again, back);
  EXPECT_EQ(again.str(), buf.str());
}

TEST(Manifest, EmptyDatasetIsHeaderOnly) {
  const Manifest m = render_dataset(train_scene(), small_job(0));
  std::stringstream buf;
  write_manifest(buf, m);
  const std::string text = buf.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_TRUE(read_manifest(buf).records.empty());
}

TEST(Manifest, VersionAndCountChecked) {
  Manifest m;
  m.scene = "x";
  std::stringstream buf;
  write_manifest(buf, m);
  std::string text = buf.str();
  const auto at = text.find("\"version\":1");
  ASSERT_NE(at, std::string::npos);
  std::string future = text;
  future.replace(at, 11, "\"version\":2");
  std::stringstream in(future);
  try {
    read_manifest(in);
    ADD_FAILURE() << "version 2 accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  std::string liar = text;
  liar.replace(liar.find("\"records\":0"), 11, "\"records\":4");
  std::stringstream in2(liar);
  EXPECT_THROW(read_manifest(in2), std::runtime_error);
  std::stringstream in3(text + "{\"episode\": 1}\n");
  try {
    read_manifest(in3);
    ADD_FAILURE() << "bad record accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::stringstream none("");
  EXPECT_THROW(read_manifest(none), std::runtime_error);
}

TEST(Manifest, LargeManifestReadsQuickly) {
  Manifest m;
  m.scene = "train_corridor";
  m.classes = {"wall", "pedestrian", "chair"};
  EpisodeRecord r;
  r.detections.push_back({"pedestrian", RiskCategory(3), BBox{10, 20, 30, 60}});
  r.depth_path = "frames/e00000_s0000_depth.pgm";
  r.labels_path = "frames/e00000_s0000_labels.pgm";
  r.scene = "train_corridor";
  for (int i = 0; i < 36000; ++i) {
    r.episode = i / 300;
    r.step = i % 300;
    r.time = 0.1 * r.step;
    r.pose = {0.01 * i, 2.0, 0.3};
    r.action = {0.8, -0.1};
    m.records.push_back(r);
  }
  std::stringstream buf;
  write_manifest(buf, m);
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest back = read_manifest(buf);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(back.records.size(), 36000u);
  EXPECT_LT(seconds, 2.0);
}

TEST(RenderDataset, FilesOnDiskMatchMemory) {
  const fs::path dir = scratch_dir("render");
  const Scene scene = train_scene();
  const Manifest mem = render_dataset(scene, small_job(2));
  const Manifest disk_written = render_dataset(scene, small_job(2), dir.string());
  ASSERT_TRUE(fs::exists(dir / "manifest.jsonl"));
  const Manifest disk = read_manifest((dir / "manifest.jsonl").string());
  ASSERT_EQ(disk.records.size(), mem.records.size());
  for (std::size_t i = 0; i < disk.records.size(); i += 7) {
    EXPECT_FALSE(disk.records[i].depth);
    const DepthImage d = read_depth_pgm((dir / disk.records[i].depth_path).string());
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(d.pixels()[k], mem.records[i].depth->pixels()[k], 0.0005f + 1e-6f);
    EXPECT_EQ(read_gray_pgm((dir / disk.records[i].labels_path).string()), *mem.records[i].labels);
  }
  // Materializing from disk or memory gives the same clean-depth bundles, up to quantization.
  const auto a = materialize(disk, small_materialize(ReprKind::DepthDet));
  const auto b = materialize(disk_written, small_materialize(ReprKind::DepthDet));
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.front().semantic(), b.front().semantic());
}

TEST(Materialize, EveryKindFromOneManifest) {
  const Manifest m = render_dataset(train_scene(), small_job(2));
  for (ReprKind kind : kAllReprKinds) {
    const auto bundles = materialize(m, small_materialize(kind));
    ASSERT_EQ(bundles.size(), m.records.size()) << to_string(kind);
    for (const auto& b : bundles) {
      EXPECT_EQ(b.kind(), kind);
      EXPECT_EQ(b.width(), 48);
      EXPECT_EQ(b.height(), 36);
    }
  }
}

TEST(Materialize, NoiseChangesOnlyDepth) {
  const Manifest m = render_dataset(train_scene(), small_job(2));
  const auto clean = materialize(m, small_materialize(ReprKind::DepthDet));
  const auto noisy = materialize(m, small_materialize(ReprKind::DepthNoiseDet));
  ASSERT_EQ(clean.size(), noisy.size());
  int depth_differs = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EXPECT_EQ(clean[i].semantic(), noisy[i].semantic());
    ASSERT_TRUE(noisy[i].semantic());
    EXPECT_TRUE(same_dims(std::get<DepthImage>(noisy[i].primary()), *noisy[i].semantic()));
    depth_differs += std::get<DepthImage>(clean[i].primary()) != std::get<DepthImage>(noisy[i].primary());
  }
  EXPECT_EQ(depth_differs, static_cast<int>(clean.size()));
  const auto depth = materialize(m, small_materialize(ReprKind::Depth));
  for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_EQ(depth[i].primary(), clean[i].primary());
}

TEST(Materialize, SeedKeyedAndOrderIndependent) {
  const Manifest m = render_dataset(train_scene(), small_job(2));
  const auto a = materialize(m, small_materialize(ReprKind::DepthNoise));
  const auto b = materialize(m, small_materialize(ReprKind::DepthNoise));
  EXPECT_EQ(a, b);
  Materializer mat(m, small_materialize(ReprKind::DepthNoise));
  const std::size_t last = mat.size() - 1;
  EXPECT_EQ(mat.bundle(last), a[last]);
  EXPECT_EQ(materialize(m, small_materialize(ReprKind::DepthNoise), 3), a);
  const auto threaded = prepare<float>(m, small_materialize(ReprKind::DepthNoise), 4);
  const auto serial = prepare<float>(m, small_materialize(ReprKind::DepthNoise), 1);
  for (std::size_t i = 0; i < serial.inputs.size(); ++i) EXPECT_EQ(threaded.inputs[i].primary, serial.inputs[i].primary);
  auto other = small_materialize(ReprKind::DepthNoise);
  other.seed = 6;
  EXPECT_NE(materialize(m, other).front(), a.front());
}

TEST(Materialize, MissingAssetNamesRecord) {
  const fs::path dir = scratch_dir("missing");
  render_dataset(train_scene(), small_job(1), dir.string());
  const Manifest m = read_manifest((dir / "manifest.jsonl").string());
  ASSERT_GT(m.records.size(), 3u);
  fs::remove(dir / m.records[3].depth_path);
  Materializer mat(m, small_materialize(ReprKind::Depth));
  EXPECT_NO_THROW(mat.bundle(2));
  try {
    mat.bundle(3);
    ADD_FAILURE() << "missing file accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("record 3"), std::string::npos);
  }
}

TEST(Prepare, NetworkInputsAndTargets) {
  const Manifest m = render_dataset(train_scene(), small_job(1));
  const auto d = prepare<float>(m, small_materialize(ReprKind::DepthNoiseDet));
  ASSERT_EQ(d.inputs.size(), m.records.size());
  for (std::size_t i = 0; i < d.inputs.size(); ++i) {
    EXPECT_EQ(d.inputs[i].primary.size(), 48u * 36u);
    EXPECT_EQ(d.inputs[i].semantic.size(), 48u * 36u);
    EXPECT_EQ(d.targets[i], m.records[i].action);
    EXPECT_FLOAT_EQ(d.inputs[i].command[static_cast<std::size_t>(m.records[i].command)], 1.0f);
  }
}

TEST(WriteMaterialized, IndexListsEveryRecord) {
  const Manifest m = render_dataset(train_scene(), small_job(1));
  const fs::path dir = scratch_dir("repr");
  for (ReprKind kind : {ReprKind::RGBNoise, ReprKind::SegFC, ReprKind::DepthNoiseDet}) {
    const fs::path out = dir / std::string(to_string(kind));
    fs::create_directories(out);
    write_materialized(Materializer(m, small_materialize(kind)), out.string());
    std::ifstream in(out / "index.json");
    const auto index = nlohmann::json::parse(in);
    EXPECT_EQ(index.at("kind"), to_string(kind));
    ASSERT_EQ(index.at("records").size(), m.records.size());
    const auto& first = index.at("records").at(0);
    EXPECT_TRUE(fs::exists(out / first.at("primary").get<std::string>()));
    EXPECT_EQ(first.contains("semantic"), is_dual(kind));
  }
}

// vipnav: render expert data, build representations, train, evaluate,
// extract feature maps and summarize logs.
//
// Every subcommand prints its resolved options to stderr first and a single
// JSON status line to stdout last. Exit codes: 0 ok, 1 runtime failure,
// 2 usage or validation error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vipnav/vipnav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vipnav;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Size {
  int width = 0, height = 0;
};

Size parse_size(const std::string& s) {
  Size out;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> out.width >> x >> out.height) || (x != 'x' && x != 'X') || !in.eof() || out.width <= 0 ||
      out.height <= 0) {
    throw UsageError("size must look like 256x192, got '" + s + "'");
  }
  return out;
}

std::string data_dir() {
  if (const char* env = std::getenv("VIPNAV_DATA")) return env;
  return VIPNAV_DATA_DIR;
}

// A scene argument is a file path or the name of a shipped scene.
Scene resolve_scene(const std::string& arg) {
  fs::path path = arg;
  if (!fs::exists(path)) path = fs::path(data_dir()) / "scenes" / (arg + ".json");
  if (!fs::exists(path)) throw UsageError("unknown scene '" + arg + "'");
  try {
    return load_scene(path.string());
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

NoiseParams load_noise(const std::string& path) {
  const std::string p = path.empty() ? data_dir() + "/noise.json" : path;
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open noise config " + p);
  try {
    NoiseParams n = json::parse(in).get<NoiseParams>();
    n.validate();
    return n;
  } catch (const std::exception& e) {
    throw UsageError("noise config " + p + ": " + e.what());
  }
}

ReprKind parse_kind(const std::string& s) {
  const auto k = parse_repr_kind(s);
  if (!k) throw UsageError("unknown representation kind '" + s + "'");
  return *k;
}

Manifest load_manifest(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("manifest not found: " + path);
  return read_manifest(path);
}

LoadedCheckpoint load_model(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Epoch lines go to the log without wall-clock time so logs are reproducible.
json epoch_record(const EpochLog& log) {
  json j = log.to_json();
  j.erase("seconds");
  return j;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string scene = "train_corridor";
  int episodes = 200;
  double recovery_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string out;
  std::string camera = "256x192";
  int max_steps = 300;
};

json run_render(const RenderArgs& a) {
  const Scene scene = resolve_scene(a.scene);
  const Size cam = parse_size(a.camera);
  RenderJob job;
  job.episodes = a.episodes;
  job.seed = a.seed;
  job.episode.recovery_fraction = a.recovery_fraction;
  job.episode.max_steps = a.max_steps;
  job.episode.camera.width = cam.width;
  job.episode.camera.height = cam.height;
  try {
    job.episode.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Manifest m = render_dataset(scene, job, a.out);
  return {{"manifest", (fs::path(a.out) / "manifest.jsonl").string()},
          {"episodes", m.episodes},
          {"records", m.records.size()}};
}

struct AugmentArgs {
  std::string manifest;
  std::string kind;
  std::string noise_config;
  std::uint64_t seed = 0;
  std::string out;
  std::string size;  // defaults to the manifest's camera size
};

json run_augment(const AugmentArgs& a) {
  const ReprKind kind = parse_kind(a.kind);
  const NoiseParams noise = load_noise(a.noise_config);
  const Manifest m = load_manifest(a.manifest);
  MaterializeConfig cfg;
  cfg.kind = kind;
  cfg.noise = noise;
  cfg.seed = a.seed;
  const Size size = a.size.empty() ? Size{m.camera.width, m.camera.height} : parse_size(a.size);
  cfg.width = size.width;
  cfg.height = size.height;
  fs::create_directories(a.out);
  write_materialized(Materializer(m, cfg), a.out);
  return {{"kind", to_string(kind)}, {"records", m.records.size()}, {"index", (fs::path(a.out) / "index.json").string()}};
}

struct TrainArgs {
  std::string dataset;
  std::string kind = "DepthNoiseDet";
  std::string arch;
  int epochs = 400;
  int batch_size = 40;
  double lr = 1e-4;
  double gamma = 1e-3;
  std::uint64_t seed = 0;
  std::string size = "256x192";
  std::string network;
  std::string noise_config;
  int stride = 1;
  std::string resume;
  std::string out_checkpoint;
  std::string log;
};

json run_train(const TrainArgs& a, int workers) {
  ReprKind kind = parse_kind(a.kind);
  std::uint64_t seed = a.seed;
  int stride = a.stride;
  if (stride < 1) throw UsageError("--stride must be >= 1");
  NoiseParams noise = load_noise(a.noise_config);
  std::optional<NetworkParams<float>> params;
  json meta;
  int done = 0;
  if (!a.resume.empty()) {
    LoadedCheckpoint c = load_model(a.resume);
    meta = c.meta;
    kind = parse_kind(meta.at("kind").get<std::string>());
    seed = meta.at("seed").get<std::uint64_t>();
    stride = meta.value("stride", 1);
    noise = meta.at("noise").get<NoiseParams>();
    done = meta.at("epochs").get<int>();
    params = std::move(c.params);
    std::cerr << "resuming " << to_string(kind) << " at epoch " << done << " (seed " << seed << ")\n";
  } else {
    NetworkSpec spec;
    if (!a.network.empty()) {
      std::ifstream in(a.network);
      if (!in) throw UsageError("cannot open network spec " + a.network);
      try {
        spec = json::parse(in).get<NetworkSpec>();
        spec.validate();
      } catch (const std::exception& e) {
        throw UsageError("network spec " + a.network + ": " + e.what());
      }
    } else {
      const Size size = parse_size(a.size);
      spec = spec_for(kind, size.width, size.height);
    }
    if (is_dual(kind) != spec.is_dual()) throw UsageError("kind " + std::string(to_string(kind)) + " needs a " + (is_dual(kind) ? "dual" : "single") + "-encoder network");
    if (spec.encoder1.in_channels != input_channels(kind)) throw UsageError("network input channels do not match the kind");
    params.emplace(spec);
    params->initialize(RngStream(seed, 0x1417));
  }
  if (!a.arch.empty()) {
    if (a.arch != "single" && a.arch != "dual") throw UsageError("--arch must be single or dual");
    if ((a.arch == "dual") != params->spec.is_dual()) throw UsageError("--arch " + a.arch + " does not match kind " + std::string(to_string(kind)));
  }

  Manifest m = load_manifest(a.dataset);
  if (stride > 1) {
    std::vector<EpisodeRecord> keep;
    for (auto& r : m.records) {
      if (r.step % stride == 0) keep.push_back(std::move(r));
    }
    m.records = std::move(keep);
  }
  if (m.records.empty()) throw UsageError("dataset has no records");
  MaterializeConfig mc;
  mc.kind = kind;
  mc.noise = noise;
  mc.seed = seed;
  mc.width = params->spec.input_width;
  mc.height = params->spec.input_height;
  const PreparedData<float> data = prepare<float>(m, mc, workers);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.adam.lr = a.lr;
  tc.loss.gamma = a.gamma;
  tc.seed = seed;
  tc.workers = workers;
  tc.start_epoch = done;
  if (tc.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (tc.batch_size <= 0) throw UsageError("--batch-size must be positive");

  const std::string log_path = a.log.empty() ? a.out_checkpoint + ".log.jsonl" : a.log;
  if (fs::path(log_path).has_parent_path()) fs::create_directories(fs::path(log_path).parent_path());
  std::ofstream log(log_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + log_path);
  if (a.resume.empty()) {
    log << json{{"type", "train"}, {"kind", to_string(kind)}, {"records", m.records.size()}, {"seed", seed},
                {"spec", params->spec}}
               .dump()
        << '\n';
  }
  const auto logs = train(*params, data.view(), tc, [&](const EpochLog& e) {
    log << epoch_record(e).dump() << '\n';
    log.flush();
    std::cerr << "epoch " << e.epoch << " loss " << e.loss << " (" << e.seconds << " s)\n";
  });

  meta = {{"kind", to_string(kind)},
          {"seed", seed},
          {"epochs", done + a.epochs},
          {"stride", stride},
          {"noise", noise},
          {"records", m.records.size()},
          {"batch_size", tc.batch_size},
          {"lr", tc.adam.lr},
          {"gamma", tc.loss.gamma}};
  if (fs::path(a.out_checkpoint).has_parent_path()) fs::create_directories(fs::path(a.out_checkpoint).parent_path());
  save_checkpoint(a.out_checkpoint, *params, meta);
  json out = {{"checkpoint", a.out_checkpoint}, {"log", log_path}, {"epochs", done + a.epochs}, {"records", m.records.size()}};
  if (!logs.empty()) out["loss"] = logs.back().loss;
  return out;
}

struct EvalArgs {
  std::string checkpoint;
  bool expert = false;
  std::string scene = "test_corridor";
  std::string route = "all";
  int trials = 1;
  std::uint64_t seed = 0;
  std::string noise = "as-trained";
  std::string noise_config;
  std::string camera;  // defaults to the network input size, or 256x192 for the expert
  std::string out;
};

json run_eval(const EvalArgs& a) {
  if (a.expert == !a.checkpoint.empty()) throw UsageError("eval needs exactly one of --checkpoint or --expert");
  if (a.trials < 1) throw UsageError("--trials must be >= 1");
  const Scene scene = resolve_scene(a.scene);
  std::vector<const RouteSpec*> routes;
  if (a.route == "all") {
    for (const auto& r : scene.routes) routes.push_back(&r);
  } else {
    try {
      routes.push_back(&scene.route(a.route));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  EvalConfig ec;
  Policy policy;
  std::string model = "expert";
  Size cam{256, 192};
  if (a.expert) {
    policy = make_expert_policy(scene, ec.limits);
  } else {
    LoadedCheckpoint c = load_model(a.checkpoint);
    AgentConfig ac;
    ac.kind = parse_kind(c.meta.at("kind").get<std::string>());
    ac.noise_mode = parse_observation_noise(a.noise);
    ac.noise = a.noise_config.empty() ? c.meta.at("noise").get<NoiseParams>() : load_noise(a.noise_config);
    ac.seed = a.seed;
    ac.limits = ec.limits;
    model = std::string(to_string(ac.kind));
    cam = {c.params.spec.input_width, c.params.spec.input_height};
    policy = make_network_policy<float>(std::make_shared<const NetworkParams<float>>(std::move(c.params)), ac);
  }
  if (!a.camera.empty()) cam = parse_size(a.camera);
  ec.camera.width = cam.width;
  ec.camera.height = cam.height;

  std::vector<EvalLog> logs;
  std::ostringstream text;
  // trial t runs with seed + t
  for (const RouteSpec* r : routes) {
    for (int t = 0; t < a.trials; ++t) {
      const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(t);
      EvalLog log = evaluate(policy, scene, *r, ec, RngStream(seed), model);
      log.seed = seed;
      write_eval_log(text, log);
      std::cerr << r->name << " trial " << t << ": " << intervention_count(log) << " interventions\n";
      logs.push_back(std::move(log));
    }
  }
  const Report report = summarize(logs, model);
  std::cout << to_text(report);
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "eval.jsonl", text.str());
    write_text(fs::path(a.out) / "summary.json", to_json(report).dump(1) + "\n");
  }
  json out = {{"model", model},
              {"runs", logs.size()},
              {"interventions", report.mean_interventions},
              {"time_min", report.mean_time_min}};
  out["velocity_decrease"] = report.mean_velocity_decrease ? json(*report.mean_velocity_decrease) : json();
  if (!a.out.empty()) out["log"] = (fs::path(a.out) / "eval.jsonl").string();
  return out;
}

struct FeatmapArgs {
  std::string checkpoint;
  std::string manifest;
  std::optional<int> layer;
  int encoder = 0;
  std::string palette = "viridis";
  std::uint64_t seed = 0;
  int limit = 0;
  std::string out;
};

json run_featmap(const FeatmapArgs& a) {
  const LoadedCheckpoint c = load_model(a.checkpoint);
  const Manifest m = load_manifest(a.manifest);
  (void)palette_color(a.palette, 0);
  const NetworkParams<float>& p = c.params;
  MaterializeConfig mc;
  mc.kind = parse_kind(c.meta.at("kind").get<std::string>());
  mc.noise = c.meta.at("noise").get<NoiseParams>();
  mc.seed = a.seed;
  mc.width = p.spec.input_width;
  mc.height = p.spec.input_height;
  const int n_conv = static_cast<int>((a.encoder == 1 && p.spec.encoder2 ? *p.spec.encoder2 : p.spec.encoder1).convs.size());
  if (a.layer && (*a.layer < 0 || *a.layer >= n_conv)) throw UsageError("--layer must be in [0, " + std::to_string(n_conv) + ")");
  if (a.encoder < 0 || a.encoder > 1 || (a.encoder == 1 && !p.spec.encoder2)) throw UsageError("--encoder 1 needs a dual-encoder checkpoint");
  const Materializer mat(m, mc);
  const std::size_t n = a.limit > 0 ? std::min<std::size_t>(mat.size(), static_cast<std::size_t>(a.limit)) : mat.size();
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < n; ++i) {
    const NetInput<float> in = to_input<float>(mat.bundle(i), m.records[i].command);
    const GrayImage map = extract_feature_map(p, in, a.layer, a.encoder);
    std::ostringstream name;
    name << "fmap_" << std::setw(6) << std::setfill('0') << i << ".png";
    write_png((fs::path(a.out) / name.str()).string(), recolor(map, a.palette));
  }
  return {{"maps", n}, {"out", a.out}};
}

struct SummarizeArgs {
  std::vector<std::string> logs;
  std::string out;
};

json run_summarize(const SummarizeArgs& a) {
  std::vector<EvalLog> evals;
  json epochs = json::array();
  for (const auto& path : a.logs) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string line;
    while (std::getline(buf, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (j.value("type", "") == "epoch") epochs.push_back(j);
    }
    buf.clear();
    buf.seekg(0);
    auto more = read_eval_logs(buf);
    for (auto& l : more) evals.push_back(std::move(l));
  }
  json out = {{"eval_runs", evals.size()}, {"epochs", epochs.size()}};
  if (!epochs.empty()) {
    std::cout << "Training: " << epochs.size() << " epochs, loss " << epochs.front().at("loss").get<double>() << " -> "
              << epochs.back().at("loss").get<double>() << "\n";
    out["first_loss"] = epochs.front().at("loss");
    out["final_loss"] = epochs.back().at("loss");
  }
  if (!evals.empty()) {
    const Report r = summarize(evals);
    std::cout << to_text(r);
    out["interventions"] = r.mean_interventions;
    out["time_min"] = r.mean_time_min;
    out["velocity_decrease"] = r.mean_velocity_decrease ? json(*r.mean_velocity_decrease) : json();
    if (!a.out.empty()) write_text(a.out, to_json(r).dump(1) + "\n");
  }
  if (evals.empty() && epochs.empty()) throw UsageError("no evaluation or training records found");
  return out;
}

void status(const std::string& command, const std::string& state, json extra) {
  extra["status"] = state;
  extra["command"] = command;
  std::cout << extra.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vipnav: depth-noise and detection representations for robot navigation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; [section] per subcommand");
  int workers = 0;
  app.add_option("--workers", workers, "Worker threads (default: VIPNAV_WORKERS or 1)")->check(CLI::NonNegativeNumber);

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Roll out the scripted expert and write frames plus a manifest");
  render->add_option("--scene", ra.scene, "Scene name or JSON file")->capture_default_str();
  render->add_option("--episodes", ra.episodes, "Episodes to render")->check(CLI::NonNegativeNumber)->capture_default_str();
  render->add_option("--recovery-fraction", ra.recovery_fraction, "Share of near-collision starts")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  render->add_option("--seed", ra.seed)->capture_default_str();
  render->add_option("--out", ra.out, "Output directory")->required();
  render->add_option("--camera", ra.camera, "Camera size WxH")->capture_default_str();
  render->add_option("--max-steps", ra.max_steps, "Steps per episode")->check(CLI::PositiveNumber)->capture_default_str();

  AugmentArgs aa;
  auto* augment = app.add_subcommand("augment", "Materialize one representation kind from a manifest");
  augment->add_option("--manifest", aa.manifest)->required();
  augment->add_option("--kind", aa.kind, "RGB, RGBNoise, Depth, DepthNoise, SegFC, SegPSP, DepthDet, DepthNoiseDet")->required();
  augment->add_option("--noise-config", aa.noise_config, "Noise parameters JSON (default: shipped noise.json)");
  augment->add_option("--seed", aa.seed)->capture_default_str();
  augment->add_option("--out", aa.out)->required();
  augment->add_option("--size", aa.size, "Output size WxH (default: camera size)");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a policy network on a rendered dataset");
  trainc->add_option("--dataset", ta.dataset, "Manifest file")->required();
  trainc->add_option("--kind", ta.kind)->capture_default_str();
  trainc->add_option("--arch", ta.arch, "single or dual; must agree with --kind");
  trainc->add_option("--epochs", ta.epochs)->capture_default_str();
  trainc->add_option("--batch-size", ta.batch_size)->capture_default_str();
  trainc->add_option("--lr", ta.lr)->check(CLI::PositiveNumber)->capture_default_str();
  trainc->add_option("--gamma", ta.gamma, "Weight decay on dense layers")->check(CLI::NonNegativeNumber)->capture_default_str();
  trainc->add_option("--seed", ta.seed)->capture_default_str();
  trainc->add_option("--size", ta.size, "Network input WxH")->capture_default_str();
  trainc->add_option("--network", ta.network, "Network spec JSON (overrides --size)");
  trainc->add_option("--noise-config", ta.noise_config);
  trainc->add_option("--stride", ta.stride, "Use every n-th step of each episode")->capture_default_str();
  trainc->add_option("--resume", ta.resume, "Continue from this checkpoint");
  trainc->add_option("--out-checkpoint", ta.out_checkpoint)->required();
  trainc->add_option("--log", ta.log, "Epoch log (default: <checkpoint>.log.jsonl)");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Drive test routes closed-loop and count interventions");
  evalc->add_option("--checkpoint", ea.checkpoint);
  evalc->add_flag("--expert", ea.expert, "Evaluate the scripted expert");
  evalc->add_option("--scene", ea.scene)->capture_default_str();
  evalc->add_option("--route", ea.route, "Route name or 'all'")->capture_default_str();
  evalc->add_option("--trials", ea.trials)->capture_default_str();
  evalc->add_option("--seed", ea.seed)->capture_default_str();
  evalc->add_option("--noise", ea.noise, "Observation noise: as-trained, always, never")
      ->check(CLI::IsMember({"as-trained", "always", "never"}))
      ->capture_default_str();
  evalc->add_option("--noise-config", ea.noise_config);
  evalc->add_option("--camera", ea.camera, "Camera WxH (default: network input size)");
  evalc->add_option("--out", ea.out, "Directory for eval.jsonl and summary.json");

  FeatmapArgs fa;
  auto* featmap = app.add_subcommand("featmap", "Write the middle-layer feature map of each record as PNG");
  featmap->add_option("--checkpoint", fa.checkpoint)->required();
  featmap->add_option("--manifest", fa.manifest)->required();
  featmap->add_option("--layer", fa.layer, "Conv layer index (default: middle)");
  featmap->add_option("--encoder", fa.encoder, "0 primary, 1 detection")->capture_default_str();
  featmap->add_option("--palette", fa.palette)->check(CLI::IsMember({"gray", "viridis"}))->capture_default_str();
  featmap->add_option("--seed", fa.seed, "Noise seed for noisy kinds")->capture_default_str();
  featmap->add_option("--limit", fa.limit, "At most this many records (0: all)")->capture_default_str();
  featmap->add_option("--out", fa.out)->required();

  SummarizeArgs sa;
  auto* summ = app.add_subcommand("summarize", "Tabulate eval logs and training curves");
  summ->add_option("logs", sa.logs, "Eval or training log files")->required()->check(CLI::ExistingFile);
  summ->add_option("--out", sa.out, "Write the report as JSON");

  std::string command = argc > 1 ? argv[argc > 1 ? 1 : 0] : "";
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (e.get_exit_code() == 0) return 0;
    status(command, "error", {{"exit_code", 2}, {"message", e.what()}});
    return code == 0 ? 0 : 2;
  }
  CLI::App* active = app.get_subcommands().front();
  command = active->get_name();
  std::cerr << "# resolved options\nworkers=" << workers << "\n[" << command << "]\n" << active->config_to_str(true, false);

  try {
    json result;
    if (*render) result = run_render(ra);
    else if (*augment) result = run_augment(aa);
    else if (*trainc) result = run_train(ta, workers);
    else if (*evalc) result = run_eval(ea);
    else if (*featmap) result = run_featmap(fa);
    else result = run_summarize(sa);
    status(command, "ok", result);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    status(command, "error", {{"exit_code", 2}, {"message", e.what()}});
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    status(command, "error", {{"exit_code", 2}, {"message", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    status(command, "error", {{"exit_code", 1}, {"message", e.what()}});
    return 1;
  }
}

#include "cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tessera/attribution.hpp"
#include "tessera/checkpoint.hpp"
#include "tessera/config_io.hpp"
#include "tessera/haze.hpp"
#include "tessera/manifest.hpp"
#include "tessera/memory.hpp"
#include "tessera/metrics.hpp"
#include "tessera/model.hpp"
#include "tessera/training.hpp"

#ifndef TESSERA_VERSION
#define TESSERA_VERSION "unknown"
#endif

namespace tessera::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Bad flag value detected after parsing; reported with exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  bool quiet = false;
  std::string run_log = "tessera_run_log.jsonl";
  std::optional<std::int64_t> device_memory_mb;
};

struct Runtime {
  std::string checkpoint;
  std::string precision;
  std::int64_t encoder_mini_batch = 0;
  std::int64_t decoder_mini_batch = 0;
};

struct Context {
  Globals globals;
  RunConfig cfg;
  std::string command;
  std::string device = "cpu";
  std::size_t device_budget = 0;
  json outputs = json::object();
  json summary = json::object();
  bool config_ready = false;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void setup_logging(const Globals& g) {
  auto logger = spdlog::get("tessera");
  if (!logger) logger = spdlog::stderr_color_mt("tessera");
  spdlog::set_default_logger(logger);
  if (g.quiet) {
    spdlog::set_level(spdlog::level::err);
  } else if (g.verbosity >= 2) {
    spdlog::set_level(spdlog::level::trace);
  } else if (g.verbosity == 1) {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

// Device selection and simulated accelerator budget from the environment.
void resolve_device(Context& ctx) {
  if (const char* d = std::getenv("TESSERA_DEVICE"); d && *d) ctx.device = d;
  if (ctx.device != "cpu") {
    throw UsageError("TESSERA_DEVICE: unsupported device '" + ctx.device + "' (available: cpu)");
  }
  std::optional<std::int64_t> mb = ctx.globals.device_memory_mb;
  if (!mb) {
    if (const char* m = std::getenv("TESSERA_DEVICE_MEMORY_MB"); m && *m) {
      try {
        std::size_t used = 0;
        mb = std::stoll(m, &used);
        if (used != std::string(m).size()) throw std::invalid_argument(m);
      } catch (const std::exception&) {
        throw UsageError(std::string("TESSERA_DEVICE_MEMORY_MB: not an integer: '") + m + "'");
      }
    }
  }
  if (mb) {
    if (*mb < 0) throw UsageError("--device-memory-mb: must be >= 0");
    ctx.device_budget = static_cast<std::size_t>(*mb) * 1024 * 1024;
  }
}

void resolve_config(Context& ctx) {
  if (!ctx.globals.config_path.empty()) apply_config_file(ctx.cfg, ctx.globals.config_path);
  if (ctx.globals.seed) {
    const std::uint64_t s = *ctx.globals.seed;
    ctx.cfg.model.seed = s;
    ctx.cfg.train.seed = s;
    ctx.cfg.synth.seed = s;
  }
  apply_overrides(ctx.cfg, ctx.globals.overrides);
  ctx.config_ready = true;
}

AttributionRegion parse_region(const std::string& text, const std::string& flag = "--region") {
  AttributionRegion r;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> r.x >> c1 >> r.y >> c2 >> r.l) || c1 != ',' || c2 != ',' || !in.eof()) {
    throw UsageError(flag + ": expected x,y,l (column, row, side), got '" + text + "'");
  }
  return r;
}

std::vector<std::int64_t> parse_sizes(const std::string& text) {
  std::vector<std::int64_t> sizes;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      sizes.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--sizes: expected comma-separated positive integers, got '" + text + "'");
    }
  }
  if (sizes.empty()) throw UsageError("--sizes: no sizes given");
  return sizes;
}

DehazeModel load_model(Context& ctx, const Runtime& rt) {
  DehazeModel model = [&] {
    if (!rt.checkpoint.empty()) {
      LoadedCheckpoint ck = load_checkpoint(rt.checkpoint);
      spdlog::info("loaded checkpoint {} (epoch {}, step {})", rt.checkpoint, ck.metadata.epoch, ck.metadata.step);
      ctx.cfg.model = ck.model.config();
      return std::move(ck.model);
    }
    spdlog::warn("no --checkpoint given; using seeded initial weights (seed {})", ctx.cfg.model.seed);
    return DehazeModel(ctx.cfg.model);
  }();
  if (!rt.precision.empty()) {
    const DType p = dtype_from_string(rt.precision);
    if (p != model.config().precision) model.set_precision(p);
    ctx.cfg.model.precision = p;
  }
  ctx.summary["model_checksum"] = hex64(model.checksum());
  return model;
}

RuntimeOptions runtime_options(const Runtime& rt) {
  RuntimeOptions opts;
  opts.encoder_mini_batch = rt.encoder_mini_batch;
  opts.decoder_mini_batch = rt.decoder_mini_batch;
  opts.on_stage = [](const StageReport& r) {
    spdlog::debug("stage {:<10} device peak {:>12} B  host peak {:>12} B  {:.3f} s", r.stage, r.device_peak,
                  r.host_peak, r.seconds);
  };
  return opts;
}

void add_runtime_flags(CLI::App* sub, Runtime& rt, bool precision = true) {
  sub->add_option("--checkpoint", rt.checkpoint, "Model checkpoint; omitted = seeded initial weights")
      ->check(CLI::ExistingFile);
  if (precision) {
    sub->add_option("--precision", rt.precision, "Inference precision (overrides the checkpoint)")
        ->check(CLI::IsMember({"fp32", "fp16"}));
  }
  sub->add_option("--encoder-mini-batch", rt.encoder_mini_batch, "Patches per encoder mini-batch (0 = config)")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--decoder-mini-batch", rt.decoder_mini_batch, "Patches per decoder mini-batch (0 = config)")
      ->check(CLI::NonNegativeNumber);
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string clear_dir, out_dir;
  std::int64_t generate = 0;
  std::int64_t size = 512;
};

void cmd_synth(Context& ctx, SynthArgs a) {
  if (a.clear_dir.empty() && a.generate == 0) throw UsageError("synth: one of --clear or --generate is required");
  if (a.generate > 0) {
    a.clear_dir = (fs::path(a.out_dir) / "clear").string();
    fs::create_directories(a.clear_dir);
    for (std::int64_t i = 0; i < a.generate; ++i) {
      const auto seed = Rng::derive(ctx.cfg.synth.seed, {0x7363656e65, static_cast<std::uint64_t>(i)});
      std::ostringstream name;
      name << "scene_" << std::setw(4) << std::setfill('0') << i << ".png";
      save_image(synthetic_scene(a.size, a.size, 3, seed), fs::path(a.clear_dir) / name.str(), ctx.cfg.synth.bit_depth);
    }
    spdlog::info("generated {} synthetic {}x{} clear scenes in {}", a.generate, a.size, a.size, a.clear_dir);
  }
  const Manifest m = build_dataset_manifest(a.clear_dir, a.out_dir, ctx.cfg.synth);
  const auto train_n = m.split("train").size();
  std::cout << "synthesized " << m.entries.size() << " pairs (" << train_n << " train, " << m.entries.size() - train_n
            << " test) -> " << (fs::path(a.out_dir) / "manifest.jsonl").string() << "\n";
  ctx.outputs["manifest"] = (fs::path(a.out_dir) / "manifest.jsonl").string();
  ctx.summary["pairs"] = m.entries.size();
}

struct TrainArgs {
  std::string manifest, out_dir, init;
};

void cmd_train(Context& ctx, const TrainArgs& a) {
  if (!a.out_dir.empty()) ctx.cfg.train.out_dir = a.out_dir;
  DehazeModel model = [&] {
    if (a.init.empty()) return DehazeModel(ctx.cfg.model);
    LoadedCheckpoint ck = load_checkpoint(a.init);
    ctx.cfg.model = ck.model.config();
    return std::move(ck.model);
  }();
  const Manifest manifest = read_manifest(a.manifest);
  const auto pairs = load_pairs(manifest, "train");
  spdlog::info("training on {} pairs, crop {}, batch {}, out {}", pairs.size(), ctx.cfg.train.crop_size,
               ctx.cfg.train.batch_size, ctx.cfg.train.out_dir);
  const TrainResult r = train(model, pairs, ctx.cfg.train, [](const LossRecord& rec) {
    spdlog::debug("step {} epoch {} lr {:.3e} loss {:.6f}", rec.step, rec.epoch, rec.lr, rec.loss);
  });
  const double first = r.history.empty() ? 0.0 : r.history.front().loss;
  const double last = r.history.empty() ? 0.0 : r.history.back().loss;
  std::cout << "trained " << r.steps << " steps; loss " << first << " -> " << last << "; best epoch loss "
            << r.best_epoch_loss << "\n";
  if (!r.last_checkpoint.empty()) ctx.outputs["last_checkpoint"] = r.last_checkpoint.string();
  if (!r.best_checkpoint.empty()) ctx.outputs["best_checkpoint"] = r.best_checkpoint.string();
  ctx.summary["steps"] = r.steps;
  ctx.summary["final_loss"] = last;
}

struct InferArgs {
  std::string in, out;
  int bit_depth = 16;
  Runtime rt;
};

void cmd_infer(Context& ctx, const InferArgs& a) {
  const DehazeModel model = load_model(ctx, a.rt);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.in)) {
    fs::create_directories(a.out);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.in)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".tif" || ext == ".tiff")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) jobs.emplace_back(f, fs::path(a.out) / f.filename());
  } else {
    jobs.emplace_back(a.in, a.out);
  }
  const RuntimeOptions opts = runtime_options(a.rt);
  json written = json::array();
  for (const auto& [src, dst] : jobs) {
    const ImageTensor hazy = load_image(src);
    const auto t0 = std::chrono::steady_clock::now();
    const ImageTensor clean = model.dehaze(hazy, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    save_image(clean, dst, a.bit_depth);
    spdlog::info("{} ({}x{}) -> {} in {:.2f} s", src.string(), hazy.width, hazy.height, dst.string(), secs);
    written.push_back(dst.string());
  }
  std::cout << "wrote " << written.size() << " image(s)\n";
  ctx.outputs["images"] = written;
}

struct AttributeArgs {
  std::string in, baseline, out = "attribution", region;
  std::int64_t steps = 0;
  std::string weighting, channel_mode;
  Runtime rt;
};

void cmd_attribute(Context& ctx, AttributeArgs a) {
  const AttributionRegion region = parse_region(a.region);
  DamConfig dc = ctx.cfg.attribute;
  if (a.steps > 0) dc.steps = a.steps;
  if (!a.weighting.empty()) dc.weighting = step_weighting_from_string(a.weighting);
  if (!a.channel_mode.empty()) dc.channel_mode = channel_mode_from_string(a.channel_mode);
  ctx.cfg.attribute = dc;

  const DehazeModel model = load_model(ctx, a.rt);
  const ImageTensor hazy = load_image(a.in);
  const ImageTensor baseline = load_image(a.baseline);
  if (!hazy.same_dims(baseline)) {
    throw UsageError("--baseline: dims differ from --in (" + std::to_string(baseline.width) + "x" +
                     std::to_string(baseline.height) + " vs " + std::to_string(hazy.width) + "x" +
                     std::to_string(hazy.height) + ")");
  }
  try {
    check_region(region, hazy.height, hazy.width);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--region: ") + e.what());
  }
  const AttributionMap map = compute_dam(model, hazy, baseline, region, dc);
  const fs::path raw = a.out + ".f32", png = a.out + ".png";
  if (raw.has_parent_path()) fs::create_directories(raw.parent_path());
  save_attribution(map, raw);
  save_heatmap(map, hazy, png);
  const double diff = map.detector_input - map.detector_baseline;
  std::cout << "attribution sum " << map.total() << ", detector change " << diff << " (m=" << map.steps << ", "
            << to_string(map.weighting) << ")\n";
  ctx.outputs["map"] = raw.string();
  ctx.outputs["sidecar"] = raw.string() + ".json";
  ctx.outputs["heatmap"] = png.string();
  ctx.summary["attribution_sum"] = map.total();
  ctx.summary["detector_change"] = diff;
}

struct EvalArgs {
  std::string pairs, split = "test", report, crop;
  Runtime rt;
};

void cmd_eval(Context& ctx, const EvalArgs& a) {
  const Manifest manifest = read_manifest(a.pairs);
  const std::vector<ManifestEntry> entries = a.split == "all" ? manifest.entries : manifest.split(a.split);
  if (entries.empty()) throw UsageError("--split: manifest has no '" + a.split + "' pairs");
  std::optional<DehazeModel> model;
  if (!a.rt.checkpoint.empty() || !a.rt.precision.empty()) {
    model.emplace(load_model(ctx, a.rt));
  } else {
    spdlog::info("no --checkpoint given; scoring the stored hazy images against their clear references");
  }
  const RuntimeOptions base = runtime_options(a.rt);
  std::optional<AttributionRegion> window;
  if (!a.crop.empty()) window = parse_region(a.crop, "--crop");
  EvalReport report;
  for (const auto& e : entries) {
    const ImageTensor clear = load_image(manifest.resolve(e.clear));
    const ImageTensor hazy = load_image(manifest.resolve(e.hazy));
    ImageRecord rec;
    rec.name = e.hazy;
    const auto t0 = std::chrono::steady_clock::now();
    ImageTensor out = hazy;
    if (model) {
      RuntimeOptions opts = base;
      opts.on_stage = [&](const StageReport& r) {
        rec.stages.push_back(r);
        if (base.on_stage) base.on_stage(r);
      };
      out = model->dehaze(hazy, opts);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (window) {
      try {
        check_region(*window, clear.height, clear.width);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--crop: ") + e.what());
      }
      out = crop(out, window->y, window->x, window->l, window->l);
      const ImageTensor ref = crop(clear, window->y, window->x, window->l, window->l);
      rec.psnr = psnr(out, ref);
      rec.ssim = ssim(out, ref);
    } else {
      rec.psnr = psnr(out, clear);
      rec.ssim = ssim(out, clear);
    }
    spdlog::info("{}: PSNR {:.3f} dB, SSIM {:.4f}", rec.name, std::min(rec.psnr, kPsnrCap), rec.ssim);
    report.images.push_back(std::move(rec));
  }
  std::cout << std::fixed << std::setprecision(4) << "mean PSNR " << report.mean_psnr() << " dB, mean SSIM "
            << report.mean_ssim() << " over " << report.images.size() << " pair(s)\n";
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    if (!out) throw std::runtime_error("cannot write report " + a.report);
    out << report.to_jsonl();
    ctx.outputs["report"] = a.report;
  }
  ctx.summary["mean_psnr"] = report.mean_psnr();
  ctx.summary["mean_ssim"] = report.mean_ssim();
  ctx.summary["pairs"] = report.images.size();
}

struct ProfileArgs {
  std::string sizes = "1024,2048", csv, jsonl;
  Runtime rt;
};

void cmd_profile(Context& ctx, const ProfileArgs& a) {
  const std::vector<std::int64_t> sizes = parse_sizes(a.sizes);
  const DehazeModel model = load_model(ctx, a.rt);
  ProfileOptions opts;
  opts.seed = ctx.cfg.model.seed;
  opts.runtime = runtime_options(a.rt);
  const auto points = profile_run(model, sizes, opts);
  const std::string csv = profile_to_csv(points);
  std::cout << csv;
  if (!a.csv.empty()) {
    std::ofstream(a.csv) << csv;
    ctx.outputs["csv"] = a.csv;
  }
  if (!a.jsonl.empty()) {
    std::ofstream(a.jsonl) << profile_to_jsonl(points);
    ctx.outputs["jsonl"] = a.jsonl;
  }
  json pts = json::array();
  for (const auto& p : points) {
    pts.push_back({{"size", p.height}, {"oom", p.out_of_memory}, {"device_peak", p.device_peak}});
    if (p.out_of_memory) spdlog::warn("{}x{}: out of device memory in stage '{}'", p.height, p.width, p.failed_stage);
  }
  ctx.summary["points"] = pts;
}

// --- run log ---------------------------------------------------------------

void append_run_log(const Context& ctx, const std::vector<std::string>& args, int code, const std::string& error,
                    double seconds) {
  if (ctx.globals.run_log.empty()) return;
  json rec;
  rec["time"] = utc_now();
  rec["command"] = ctx.command;
  rec["argv"] = args;
  rec["exit_code"] = code;
  if (!error.empty()) rec["error"] = error;
  rec["seconds"] = seconds;
  rec["versions"] = {{"tessera", TESSERA_VERSION},
                     {"checkpoint_format", kCheckpointFormatVersion},
                     {"compiler", __VERSION__},
                     {"cxx_standard", __cplusplus}};
  rec["device"] = {{"name", ctx.device}, {"memory_budget_bytes", ctx.device_budget}};
  if (ctx.config_ready) {
    rec["config_hash"] = hex64(config_hash(ctx.cfg));
    rec["seeds"] = {{"model", ctx.cfg.model.seed},
                    {"train", ctx.cfg.train.seed},
                    {"synth", ctx.cfg.synth.seed},
                    {"approx_attention", ctx.cfg.model.bottleneck.approx.seed}};
    rec["config"] = json::parse(config_to_json(ctx.cfg, -1));
  }
  rec["outputs"] = ctx.outputs;
  rec["summary"] = ctx.summary;
  try {
    const fs::path p = ctx.globals.run_log;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::app);
    out << rec.dump() << "\n";
    if (!out) spdlog::warn("could not append to run log {}", p.string());
  } catch (const std::exception& e) {
    spdlog::warn("could not append to run log {}: {}", ctx.globals.run_log, e.what());
  }
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

int run(const std::vector<std::string>& args) {
  const auto t0 = std::chrono::steady_clock::now();
  Context ctx;
  CLI::App app{"Memory-bounded tiled haze removal", "tessera"};
  app.set_version_flag("--version", TESSERA_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Globals& g = ctx.globals;
  app.add_option("--config", g.config_path, "JSON config file of dotted keys")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override one config key (key=value); repeatable")->allow_extra_args(false);
  app.add_option("--seed", g.seed, "Seed for weights, training order/augmentation and synthesis");
  app.add_flag("-v,--verbose", g.verbosity, "More logging (-vv for trace)");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");
  app.add_option("--run-log", g.run_log, "JSONL file each run appends to (empty disables)");
  app.add_option("--device-memory-mb", g.device_memory_mb,
                 "Simulated accelerator budget in MiB (overrides TESSERA_DEVICE_MEMORY_MB; 0 = unlimited)");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Haze a directory of clear images and write a manifest");
  auto* clear_opt =
      s_synth->add_option("--clear", synth.clear_dir, "Directory of clear images")->check(CLI::ExistingDirectory);
  auto* gen_opt = s_synth->add_option("--generate", synth.generate, "Instead of --clear, write N synthetic clear scenes")
                      ->check(CLI::PositiveNumber);
  clear_opt->excludes(gen_opt);
  s_synth->add_option("--size", synth.size, "Side of generated scenes")->check(CLI::Range(16, 1 << 15));
  s_synth->add_option("--out", synth.out_dir, "Output directory (hazy/ and manifest.jsonl)")->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train on the train split of a manifest");
  s_train->add_option("--manifest", tr.manifest, "Manifest written by synth")->required()->check(CLI::ExistingFile);
  s_train->add_option("--out", tr.out_dir, "Output directory (overrides train.out_dir)");
  s_train->add_option("--init", tr.init, "Start from this checkpoint's config and weights")->check(CLI::ExistingFile);

  InferArgs inf;
  auto* s_infer = app.add_subcommand("infer", "Dehaze one image or a directory of images");
  s_infer->add_option("--in", inf.in, "Hazy image or directory")->required()->check(CLI::ExistingPath);
  s_infer->add_option("--out", inf.out, "Output image or directory")->required();
  s_infer->add_option("--bit-depth", inf.bit_depth, "Output bit depth")->check(CLI::IsMember({8, 16}));
  add_runtime_flags(s_infer, inf.rt);

  AttributeArgs att;
  auto* s_att = app.add_subcommand("attribute", "Attribution map of a dehazed region");
  s_att->add_option("--in", att.in, "Hazy input image")->required()->check(CLI::ExistingFile);
  s_att->add_option("--baseline", att.baseline, "Clear baseline image")->required()->check(CLI::ExistingFile);
  s_att->add_option("--region", att.region, "Detector window x,y,l (column, row, side in pixels)")->required();
  s_att->add_option("--steps", att.steps, "Integration steps (default attribute.steps)")->check(CLI::PositiveNumber);
  s_att->add_option("--weighting", att.weighting, "Step weighting")->check(CLI::IsMember({"riemann", "as_printed"}));
  s_att->add_option("--channel-mode", att.channel_mode, "Channel reduction")->check(CLI::IsMember({"sum", "per_channel"}));
  s_att->add_option("--out", att.out, "Output prefix: <out>.f32, <out>.f32.json, <out>.png");
  add_runtime_flags(s_att, att.rt, false);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "PSNR/SSIM over the pairs of a manifest");
  s_eval->add_option("--pairs", ev.pairs, "Manifest of clear/hazy pairs")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--split", ev.split, "Split to score")->check(CLI::IsMember({"train", "test", "all"}));
  s_eval->add_option("--report", ev.report, "Write a JSONL report here");
  s_eval->add_option("--crop", ev.crop, "Score only this x,y,l square (default: full image)");
  add_runtime_flags(s_eval, ev.rt);

  ProfileArgs pr;
  auto* s_prof = app.add_subcommand("profile", "Per-stage peak memory and time on seeded square images");
  s_prof->add_option("--sizes", pr.sizes, "Comma-separated image sides");
  s_prof->add_option("--csv", pr.csv, "Write the CSV table here");
  s_prof->add_option("--jsonl", pr.jsonl, "Write JSONL records here");
  add_runtime_flags(s_prof, pr.rt);

  int code = kOk;
  std::string error;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return kOk;
    error = e.what();
    for (auto* sub : app.get_subcommands()) ctx.command = sub->get_name();
    setup_logging(g);
    append_run_log(ctx, args, kUserError, error, 0.0);
    return kUserError;
  }
  ctx.command = app.get_subcommands().front()->get_name();
  setup_logging(g);

  try {
    resolve_device(ctx);
    resolve_config(ctx);
    ScopedDeviceBudget budget(ctx.device_budget);
    if (ctx.command == "synth") cmd_synth(ctx, synth);
    else if (ctx.command == "train") cmd_train(ctx, tr);
    else if (ctx.command == "infer") cmd_infer(ctx, inf);
    else if (ctx.command == "attribute") cmd_attribute(ctx, att);
    else if (ctx.command == "eval") cmd_eval(ctx, ev);
    else if (ctx.command == "profile") cmd_profile(ctx, pr);
  } catch (const ConfigError& e) {
    code = kUserError;
    error = e.what();
  } catch (const StageOutOfMemory& e) {
    code = kRuntimeError;
    error = e.what();
    ctx.summary["failed_stage"] = e.stage();
    ctx.summary["tokens"] = e.token_count();
    ctx.summary["requested_bytes"] = e.requested();
    ctx.summary["budget_bytes"] = e.budget();
  } catch (const UsageError& e) {
    code = kUserError;
    error = e.what();
  } catch (const std::invalid_argument& e) {
    code = kUserError;
    error = e.what();
  } catch (const std::exception& e) {
    code = kRuntimeError;
    error = e.what();
  }
  if (code != kOk) spdlog::error("{}", error);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_run_log(ctx, args, code, error, secs);
  return code;
}

}  // namespace tessera::cli

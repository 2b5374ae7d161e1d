#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "tessera/image.hpp"

namespace fs = std::filesystem;
using tessera::cli::run;

namespace {

const std::string kToy = std::string(TESSERA_CONFIG_DIR) + "/toy.json";

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "tessera_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    ASSERT_EQ(call({"synth", "--generate", "5", "--size", "128", "--out", (root / "data").string()}), 0);
    ASSERT_EQ(call({"--config", kToy, "--set", "train.crop_size=64", "--set", "train.max_steps=2", "train", "--manifest",
                    (root / "data/manifest.jsonl").string(), "--out", (root / "run").string()}),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static int call(std::vector<std::string> args) {
    std::vector<std::string> full{"-q", "--run-log", (root / "log.jsonl").string()};
    full.insert(full.end(), args.begin(), args.end());
    return run(full);
  }

  static nlohmann::json last_log() { return read_log(root / "log.jsonl").back(); }
  static std::string manifest() { return (root / "data/manifest.jsonl").string(); }
  static std::string ckpt() { return (root / "run/best.ckpt").string(); }
  static std::string hazy(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d.png", i);
    return (root / "data/hazy" / buf).string();
  }
  static std::string clear(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d.png", i);
    return (root / "data/clear" / buf).string();
  }
};

fs::path Cli::root;

}  // namespace

TEST_F(Cli, SynthAndTrainOutputs) {
  EXPECT_TRUE(fs::exists(root / "data/manifest.jsonl"));
  EXPECT_TRUE(fs::exists(root / "run/best.ckpt"));
  EXPECT_TRUE(fs::exists(root / "run/last.ckpt"));
  EXPECT_TRUE(fs::exists(root / "run/loss.csv"));
}

TEST_F(Cli, InferPreservesDimsAndIsDeterministic) {
  const fs::path a = root / "inf_a.png", b = root / "inf_b.png";
  ASSERT_EQ(call({"infer", "--checkpoint", ckpt(), "--in", hazy(0), "--out", a.string()}), 0);
  ASSERT_EQ(call({"infer", "--checkpoint", ckpt(), "--in", hazy(0), "--out", b.string()}), 0);
  const auto in = tessera::load_image(hazy(0));
  const auto out = tessera::load_image(a);
  EXPECT_EQ(out.height, in.height);
  EXPECT_EQ(out.width, in.width);
  EXPECT_EQ(slurp(a), slurp(b));
  const auto rec = last_log();
  EXPECT_EQ(rec["command"], "infer");
  EXPECT_EQ(rec["exit_code"], 0);
}

TEST_F(Cli, InferDirectory) {
  const fs::path out = root / "inf_dir";
  ASSERT_EQ(call({"infer", "--checkpoint", ckpt(), "--in", (root / "data/hazy").string(), "--out", out.string(),
                  "--bit-depth", "8"}),
            0);
  EXPECT_EQ(std::distance(fs::directory_iterator(out), fs::directory_iterator{}), 5);
}

TEST_F(Cli, ConfigPrecedenceInRunLog) {
  ASSERT_EQ(call({"--config", kToy, "--seed", "11", "--set", "encoder.mini_batch_size=3", "profile", "--sizes", "64"}), 0);
  const auto rec = last_log();
  EXPECT_EQ(rec["config"]["encoder.mini_batch_size"], 3);
  EXPECT_EQ(rec["config"]["encoder.embed_dim"], 16);
  EXPECT_EQ(rec["config"]["seed"], 11);
  EXPECT_EQ(rec["config"]["train.seed"], 11);
  EXPECT_TRUE(rec.contains("config_hash"));
  EXPECT_TRUE(rec["versions"].contains("checkpoint_format"));
}

TEST_F(Cli, UnknownKeyIsUserError) {
  EXPECT_EQ(call({"--set", "encoder.patchsize=64", "profile", "--sizes", "64"}), 1);
  const std::string err = last_log()["error"];
  EXPECT_NE(err.find("encoder.patch_size"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(call({}), 1);
  EXPECT_EQ(call({"infer", "--in", (root / "missing.png").string(), "--out", "x.png"}), 1);
  EXPECT_EQ(call({"attribute", "--checkpoint", ckpt(), "--in", hazy(1), "--baseline", clear(1), "--region", "1,2"}), 1);
  EXPECT_EQ(call({"attribute", "--checkpoint", ckpt(), "--in", hazy(1), "--baseline", clear(1), "--region",
                  "120,0,32"}),
            1);
  EXPECT_EQ(call({"synth", "--out", (root / "nothing").string()}), 1);
}

TEST_F(Cli, StageOutOfMemoryIsRuntimeError) {
  const fs::path big = root / "big.png";
  tessera::save_image(tessera::ImageTensor(256, 256, 3, 0.5f), big);
  EXPECT_EQ(call({"--config", kToy, "--device-memory-mb", "4", "infer", "--in", big.string(), "--out",
                  (root / "big_out.png").string()}),
            2);
  const auto rec = last_log();
  EXPECT_EQ(rec["exit_code"], 2);
  ASSERT_TRUE(rec["summary"].contains("failed_stage"));
  EXPECT_GT(rec["summary"]["tokens"].get<long>(), 0);
}

TEST_F(Cli, AttributeWritesOutputs) {
  const fs::path prefix = root / "attr";
  ASSERT_EQ(call({"attribute", "--checkpoint", ckpt(), "--in", hazy(1), "--baseline", clear(1), "--region", "10,20,32",
                  "--steps", "4", "--out", prefix.string()}),
            0);
  EXPECT_EQ(fs::file_size(prefix.string() + ".f32"), 128u * 128u * sizeof(float));
  EXPECT_TRUE(fs::exists(prefix.string() + ".f32.json"));
  EXPECT_TRUE(fs::exists(prefix.string() + ".png"));
  const auto rec = last_log();
  EXPECT_TRUE(rec["summary"].contains("attribution_sum"));
}

TEST_F(Cli, EvalIdenticalPairsHitsCap) {
  const fs::path m = root / "ident.jsonl";
  {
    std::ifstream in(manifest());
    std::ofstream out(m);
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      j["hazy"] = j["clear"];
      out << j.dump() << "\n";
    }
  }
  ASSERT_EQ(call({"eval", "--pairs", m.string(), "--split", "all", "--report", (root / "ident_report.jsonl").string()}),
            0);
  EXPECT_DOUBLE_EQ(last_log()["summary"]["mean_psnr"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(last_log()["summary"]["mean_ssim"].get<double>(), 1.0);
}

TEST_F(Cli, EvalCropScoresTheWindow) {
  ASSERT_EQ(call({"eval", "--pairs", manifest(), "--split", "all", "--crop", "8,16,40", "--report",
                  (root / "crop_report.jsonl").string()}),
            0);
  const double cropped = last_log()["summary"]["mean_psnr"];
  ASSERT_EQ(call({"eval", "--pairs", manifest(), "--split", "all"}), 0);
  EXPECT_NE(cropped, last_log()["summary"]["mean_psnr"].get<double>());
  EXPECT_EQ(call({"eval", "--pairs", manifest(), "--crop", "100,100,40"}), 1);
  EXPECT_EQ(call({"eval", "--pairs", manifest(), "--crop", "1,2"}), 1);
}

TEST_F(Cli, UnsupportedDeviceEnv) {
  ::setenv("TESSERA_DEVICE", "cuda", 1);
  const int rc = call({"profile", "--sizes", "64"});
  ::unsetenv("TESSERA_DEVICE");
  EXPECT_EQ(rc, 1);
}

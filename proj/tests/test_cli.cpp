#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace l2sa::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "l2sa_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

const std::vector<std::string> kSmallModel{"--channels", "8,16,32", "--kernels", "5,3,3", "--head-width", "32",
                                           "--sab-kernels", "3,3,3"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  return args;
}

}  // namespace

TEST(Cli, HelpListsEveryFlagWithDefaults) {
  const Result r = run({"train", "--help"});
  EXPECT_EQ(r.code, kOk);
  for (const char* flag : {"--model", "--dataset", "--data-root", "--epochs", "--batch-size", "--lr", "--adam-epsilon",
                           "--seed", "--repeats", "--sab-kernels", "--skips", "--out", "--precision", "--config"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  for (const char* def : {"[l2sa]", "[synthetic]", "[50]", "[64]", "[0.01]", "[0.1]", "[0.9]", "[0.999]", "[1]",
                          "[true]", "[[16,8,4]]", "[f64]"})
    EXPECT_NE(r.out.find(def), std::string::npos) << def;
  EXPECT_EQ(run({"--help"}).code, kOk);
}

TEST(Cli, NoCommandIsAUsageError) {
  EXPECT_EQ(run({}).code, kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kUsage);
}

TEST(Cli, TrainSmokeWritesRunDirectory) {
  const fs::path dir = fresh_dir("train_smoke");
  const Result r = run(with_small({"train", "--model", "l2sa", "--dataset", "synthetic", "--epochs", "5", "--seed", "1",
                                   "--out", (dir / "run").string()}));
  ASSERT_EQ(r.code, kOk) << r.err;
  for (const char* f : {"seed1/checkpoint.l2sa", "seed1/metrics.csv", "seed1/report.txt", "summary.txt", "split.tsv",
                        "config.txt"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  EXPECT_NE(r.out.find("best_run=0"), std::string::npos) << r.out;
  std::istringstream csv(file_bytes(dir / "run" / "seed1" / "metrics.csv"));
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 6u);  // header + 5 epochs
}

TEST(Cli, TrainIsIdempotentForFixedSeedAndOutput) {
  const fs::path dir = fresh_dir("idempotent");
  const auto args = with_small({"train", "--epochs", "2", "--out", (dir / "run").string()});
  ASSERT_EQ(run(args).code, kOk);
  const std::string ckpt = file_bytes(dir / "run" / "seed1" / "checkpoint.l2sa");
  const std::string csv = file_bytes(dir / "run" / "seed1" / "metrics.csv");
  ASSERT_EQ(run(args).code, kOk);
  EXPECT_EQ(file_bytes(dir / "run" / "seed1" / "checkpoint.l2sa"), ckpt);
  EXPECT_EQ(file_bytes(dir / "run" / "seed1" / "metrics.csv"), csv);
}

TEST(Cli, EvalTrainedCheckpoint) {
  const fs::path dir = fresh_dir("eval");
  ASSERT_EQ(run(with_small({"train", "--epochs", "1", "--out", (dir / "run").string()})).code, kOk);
  const Result r = run({"eval", "--checkpoint", (dir / "run" / "seed1" / "checkpoint.l2sa").string(), "--split", "test",
                        "--split-manifest", (dir / "run" / "split.tsv").string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("test.accuracy="), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval" / "eval.txt"));
}

TEST(Cli, EvalMissingCheckpointNamesPath) {
  const std::string path = (fresh_dir("missing") / "nope.l2sa").string();
  const Result r = run({"eval", "--checkpoint", path, "--split", "test"});
  EXPECT_EQ(r.code, kIo);
  EXPECT_NE(r.err.find(path), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsNameTheFlag) {
  Result r = run({"train", "--model", "resnet"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--model"), std::string::npos) << r.err;
  r = run({"train", "--dataset", "dir"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--data-root"), std::string::npos) << r.err;
  r = run({"train", "--dataset", "dir", "--data-root", "/definitely/not/here"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--data-root"), std::string::npos) << r.err;
  r = run({"train", "--precision", "f32"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--precision"), std::string::npos) << r.err;
  r = run({"train", "--epochs", "many"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--epochs"), std::string::npos) << r.err;
}

TEST(Cli, MalformedConfigIsAUsageError) {
  const fs::path dir = fresh_dir("bad_config");
  { std::ofstream(dir / "bad.cfg") << "epochs 3\n"; }
  { std::ofstream(dir / "unknown.cfg") << "learning_speed=3\n"; }
  Result r = run({"train", "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--config"), std::string::npos) << r.err;
  r = run({"train", "--config", (dir / "unknown.cfg").string()});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("learning_speed"), std::string::npos) << r.err;
  r = run({"train", "--config", (dir / "absent.cfg").string()});
  EXPECT_EQ(r.code, kUsage);
}

TEST(Cli, ConfigPrecedenceFlagsOverFileOverDefaults) {
  const fs::path dir = fresh_dir("precedence");
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# desk-scale run\nepochs=2\nlr = 0.005\nchannels=8,16,32\nkernels=5,3,3\nhead-width=32\nsab-kernels=3,3,3\n";
  }
  ASSERT_EQ(run({"train", "--config", (dir / "run.cfg").string(), "--epochs", "3", "--out", (dir / "a").string()}).code, kOk);
  const std::string a = file_bytes(dir / "a" / "config.txt");
  EXPECT_NE(a.find("epochs=3\n"), std::string::npos) << a;
  EXPECT_NE(a.find("lr=0.005\n"), std::string::npos) << a;
  EXPECT_NE(a.find("batch-size=64\n"), std::string::npos) << a;
  ASSERT_EQ(run({"train", "--config", (dir / "run.cfg").string(), "--out", (dir / "b").string()}).code, kOk);
  EXPECT_NE(file_bytes(dir / "b" / "config.txt").find("epochs=2\n"), std::string::npos);
  // The written config reproduces the run.
  ASSERT_EQ(run({"train", "--config", (dir / "a" / "config.txt").string(), "--out", (dir / "c").string()}).code, kOk);
  EXPECT_EQ(file_bytes(dir / "c" / "seed1" / "checkpoint.l2sa"), file_bytes(dir / "a" / "seed1" / "checkpoint.l2sa"));
}

TEST(Cli, GradcheckL2Sab) {
  const fs::path dir = fresh_dir("gradcheck");
  const Result r = run({"gradcheck", "--module", "l2sab", "--tolerance", "1e-4", "--out", dir.string()});
  EXPECT_EQ(r.code, kOk) << r.out;
  EXPECT_NE(r.out.find("l2sab"), std::string::npos);
  EXPECT_NE(r.out.find("PASS 20/20"), std::string::npos) << r.out;
  EXPECT_NE(file_bytes(dir / "gradcheck.kv").find("passed=true"), std::string::npos);
  EXPECT_FALSE(file_bytes(dir / "gradcheck.txt").empty());
  EXPECT_EQ(run({"gradcheck", "--precision", "f32"}).code, kUsage);
  EXPECT_EQ(run({"gradcheck", "--module", "nonsense"}).code, kUsage);
}

TEST(Cli, SplitAndSynthRoundTrip) {
  const fs::path dir = fresh_dir("synth_split");
  Result r = run({"synth", "--out", (dir / "data").string(), "--per-class", "4", "--image-size", "32"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("images=12"), std::string::npos);
  r = run({"split", "--dataset", "dir", "--data-root", (dir / "data").string(), "--image-size", "32", "--out",
           (dir / "a.tsv").string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("# train:"), std::string::npos) << r.out;
  ASSERT_EQ(run({"split", "--dataset", "dir", "--data-root", (dir / "data").string(), "--image-size", "32", "--out",
                 (dir / "b.tsv").string()})
                .code,
            kOk);
  EXPECT_EQ(file_bytes(dir / "a.tsv"), file_bytes(dir / "b.tsv"));
  r = run(with_small({"train", "--dataset", "dir", "--data-root", (dir / "data").string(), "--image-size", "32",
                      "--split-manifest", (dir / "a.tsv").string(), "--epochs", "1", "--pools", "2,2,2", "--out",
                      (dir / "run").string()}));
  EXPECT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(file_bytes(dir / "run" / "split.tsv"), file_bytes(dir / "a.tsv"));
  EXPECT_EQ(run({"synth"}).code, kUsage);
}

TEST(Cli, AblateProducesComparativeReport) {
  const fs::path dir = fresh_dir("ablate");
  const Result r = run(with_small({"ablate", "--epochs", "1", "--repeats", "2", "--seed", "5", "--out", dir.string()}));
  ASSERT_EQ(r.code, kOk) << r.err;
  const std::string text = file_bytes(dir / "ablation.txt");
  EXPECT_NE(text.find("seeds=5,6"), std::string::npos) << text;
  for (const char* key : {"seed.5.skips_on=", "seed.5.skips_off=", "seed.6.skips_on=", "seed.6.skips_off=",
                          "skips_on.best_test_accuracy=", "skips_off.best_test_accuracy=", "delta_best_test_accuracy="})
    EXPECT_NE(text.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(dir / "skips_on" / "seed5" / "checkpoint.l2sa"));
  EXPECT_TRUE(fs::exists(dir / "skips_off" / "seed6" / "checkpoint.l2sa"));
}

TEST(Cli, BenchAndParams) {
  Result r = run(with_small({"bench", "--image-size", "64", "--batch", "4"}));
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("parameters="), std::string::npos);
  EXPECT_NE(r.out.find("single.median_ms="), std::string::npos);
  EXPECT_EQ(run(with_small({"bench", "--iterations", "10"})).code, kUsage);
  r = run({"params"});
  ASSERT_EQ(r.code, kOk);
  for (const char* fig : {"4003011", "5474547", "7293523", "25972491"}) EXPECT_NE(r.out.find(fig), std::string::npos);
}

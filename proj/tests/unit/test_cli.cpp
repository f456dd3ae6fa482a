#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fpad/cli/cli.hpp"
#include "fpad/dataio/manifest.hpp"
#include "fpad/errors.hpp"
#include "fpad/network/checkpoint.hpp"
#include "fpad/tensorcore/ops.hpp"

namespace fs = std::filesystem;
using fpad::KeyValues;
namespace cli = fpad::cli;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

// Relative path -> content, with timestamp lines of run.txt dropped.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string text = slurp(e.path());
    if (e.path().filename() == "run.txt") {
      std::istringstream in(text);
      std::string line, kept;
      while (std::getline(in, line)) {
        if (line.rfind("# ", 0) != 0) kept += line + "\n";
      }
      text = kept;
    }
    files[fs::relative(e.path(), dir).string()] = text;
  }
  return files;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("fpad_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const auto r = run({"gen", "--seed", "3", "--subjects", "6", "--per-subject", "8", "--attacks-per-species", "5",
                        "--out", data().string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path data() { return root_ / "data"; }
  static fs::path dir(const std::string& name) { return root_ / name; }

  static std::vector<std::string> quick_train(const std::string& command, const std::string& out) {
    return {command, "--data", data().string(), "--out", dir(out).string(), "--epochs", "1", "--batch-size", "16"};
  }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(cli::exit_code_for(fpad::UsageError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(fpad::ConfigError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(fpad::DimensionError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(fpad::ProtocolError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(fpad::IoError("x")), 4);
  EXPECT_EQ(cli::exit_code_for(fpad::NumericError("x")), 5);
  EXPECT_EQ(cli::exit_code_for(fpad::DegenerateInputError("x")), 5);
}

TEST(CliArgs, HelpAndUsage) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"gen", "--no-such-flag"}).code, 2);
}

TEST(CliArgs, DefaultConfigCarriesPublishedSettings) {
  const auto kv = cli::default_config();
  EXPECT_EQ(kv.get_double("train.lambda"), 0.0411);
  EXPECT_EQ(kv.get_int("train.epochs"), 20);
  EXPECT_EQ(kv.get_double("train.lr"), 0.001);
  EXPECT_EQ(kv.get_double("train.m"), 0.3);
  EXPECT_EQ(kv.get_double("train.s"), 30.0);
  EXPECT_EQ(kv.get("net.activation"), "leaky_relu");
  EXPECT_NE(("," + kv.get("sweep.grid") + ",").find(",0.0411,"), std::string::npos);
}

TEST_F(Cli, GenWritesManifestAndSummary) {
  const auto m = fpad::dataio::load_manifest(data() / "manifest.jsonl");
  EXPECT_EQ(fpad::dataio::summarize(m).subjects, 6u);
  EXPECT_TRUE(fs::exists(data() / "run.txt"));
  const auto r = run({"gen", "--seed", "7", "--subjects", "26", "--per-subject", "2", "--attacks-per-species", "2",
                      "--out", dir("gen26").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("subjects 26"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("split train: "), std::string::npos);
  EXPECT_EQ(fpad::dataio::summarize(fpad::dataio::load_manifest(dir("gen26") / "manifest.jsonl")).subjects, 26u);
}

TEST_F(Cli, GenRerunGivesIdenticalTree) {
  const std::vector<std::string> args = {"gen", "--seed", "11", "--subjects", "5", "--per-subject", "3",
                                         "--attacks-per-species", "2", "--out", dir("again").string()};
  ASSERT_EQ(run(args).code, 0);
  const auto first = tree(dir("again"));
  auto forced = args;
  forced.push_back("--force");
  ASSERT_EQ(run(forced).code, 0);
  EXPECT_EQ(tree(dir("again")), first);
  EXPECT_GT(first.size(), 5u);
}

TEST_F(Cli, GenRefusesNonEmptyDirAndZeroSubjects) {
  const auto r = run({"gen", "--out", data().string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_EQ(run({"gen", "--subjects", "0", "--out", dir("zero").string()}).code, 2);
  EXPECT_FALSE(fs::exists(dir("zero")));
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  put(dir("cfg.txt"), "gen.subjects=5\ngen.per_subject=2\ngen.attacks_per_species=1\nseed=4\n");
  auto r = run({"gen", "--config", dir("cfg.txt").string(), "--subjects", "6", "--out", dir("cfg_out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto echo = KeyValues::parse(slurp(dir("cfg_out") / "run.txt"));
  EXPECT_EQ(echo.get("gen.subjects"), "6");
  EXPECT_EQ(echo.get("gen.per_subject"), "2");
  EXPECT_EQ(echo.get("seed"), "4");

  put(dir("typo.txt"), "gen.subjcts=5\n");
  r = run({"gen", "--config", dir("typo.txt").string(), "--out", dir("typo_out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("gen.subjcts"), std::string::npos);
  EXPECT_EQ(run({"gen", "--config", dir("missing.txt").string(), "--out", dir("m").string()}).code, 4);
}

TEST_F(Cli, TrainEchoesHeaderAndWritesOutputs) {
  const auto r = run(quick_train("train", "train"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("train.lambda=0.0411\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("net.activation=leaky_relu\n"), std::string::npos);
  const std::string header = slurp(dir("train") / "run.txt");
  EXPECT_EQ(header.rfind("# ", 0), 0u);
  EXPECT_NE(header.find("train.lambda=0.0411\n"), std::string::npos);
  const auto ck = fpad::network::load_checkpoint(dir("train") / "checkpoint.fpad");
  EXPECT_EQ(ck.lambda, 0.0411);
  const std::string log = slurp(dir("train") / "loss.tsv");
  EXPECT_EQ(log.rfind("1\t", 0), 0u);
}

TEST_F(Cli, TrainAblationFlags) {
  auto args = quick_train("train", "relu");
  args.insert(args.end(), {"--activation", "relu", "--lambda", "0"});
  ASSERT_EQ(run(args).code, 0);
  const auto ck = fpad::network::load_checkpoint(dir("relu") / "checkpoint.fpad");
  EXPECT_EQ(ck.lambda, 0.0);
  EXPECT_EQ(ck.net.config.activation, fpad::ops::ActivationKind::relu);
  args = quick_train("train", "bad_act");
  args.insert(args.end(), {"--activation", "tanh"});
  EXPECT_EQ(run(args).code, 2);
}

TEST_F(Cli, TrainIsReproducible) {
  ASSERT_EQ(run(quick_train("train", "rep1")).code, 0);
  ASSERT_EQ(run(quick_train("train", "rep2")).code, 0);
  EXPECT_EQ(slurp(dir("rep1") / "checkpoint.fpad"), slurp(dir("rep2") / "checkpoint.fpad"));
  EXPECT_EQ(slurp(dir("rep1") / "loss.tsv"), slurp(dir("rep2") / "loss.tsv"));
}

TEST_F(Cli, TrainErrorsHaveDistinctCodes) {
  fs::create_directories(dir("bad"));
  std::string text = slurp(data() / "manifest.jsonl");
  const std::string from = "\"class\":\"attack\",\"pai_species\":\"ecoflex\",\"subject\":null,\"split\":\"test\"";
  const auto at = text.find(from);
  ASSERT_NE(at, std::string::npos);
  text.replace(at, from.size(), "\"class\":\"attack\",\"pai_species\":\"ecoflex\",\"subject\":null,\"split\":\"train\"");
  put(dir("bad") / "manifest.jsonl", text);
  auto r = run({"train", "--data", dir("bad").string(), "--out", dir("bad_out").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  r = run({"train", "--data", dir("nowhere").string(), "--out", dir("io_out").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  auto args = quick_train("train", "diverge");
  args.insert(args.end(), {"--lr", "1e300"});
  r = run(args);
  EXPECT_EQ(r.code, 5) << r.err;
  args = quick_train("train", "neg");
  args.insert(args.end(), {"--epochs", "-1"});
  EXPECT_EQ(run(args).code, 2);
}

TEST_F(Cli, SweepWritesSummaryAndRocs) {
  auto args = quick_train("sweep", "sweep");
  args.insert(args.end(), {"--grid", "0.0411", "--threads", "1"});
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir("sweep") / "sweep.csv").substr(0, 20), "lambda,auc,selected\n");
  std::istringstream rows(slurp(dir("sweep") / "sweep.csv"));
  std::string line;
  std::getline(rows, line);
  std::getline(rows, line);
  EXPECT_EQ(line.substr(0, 7), "0.0411,");
  EXPECT_EQ(line.back(), '1');
  EXPECT_EQ(slurp(dir("sweep") / "roc" / "lambda_0.0411.csv").rfind("threshold,fpr,tpr\n", 0), 0u);
  EXPECT_TRUE(fs::exists(dir("sweep") / "checkpoint.fpad"));

  args = quick_train("sweep", "sweep_empty");
  args.insert(args.end(), {"--grid", ""});
  EXPECT_EQ(run(args).code, 2);
}

TEST_F(Cli, EvalAndReport) {
  ASSERT_EQ(run(quick_train("train", "for_eval")).code, 0);
  const std::string ckpt = (dir("for_eval") / "checkpoint.fpad").string();
  auto r = run({"eval", "--data", data().string(), "--checkpoint", ckpt, "--out", dir("eval").string(), "--bpcer-at",
                "0.10"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* s : {"ECOFLEX", "PHOTOPAPER", "PLAYDOH", "WOODGLUE", "BPCER@10.00", "ACER"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  for (const char* f : {"test_scores.csv", "val_scores.csv", "roc.csv", "report.txt", "report.kv"}) {
    EXPECT_TRUE(fs::exists(dir("eval") / f)) << f;
  }
  EXPECT_EQ(slurp(dir("eval") / "test_scores.csv").rfind("sample_id,label,pai_species,score\n", 0), 0u);

  // The report command rebuilds the same table from the score files.
  r = run({"report", "--scores", (dir("eval") / "test_scores.csv").string(), "--val-scores",
           (dir("eval") / "val_scores.csv").string(), "--bpcer-at", "0.10", "--out", dir("report").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir("report") / "report.txt"), slurp(dir("eval") / "report.txt"));
  EXPECT_EQ(slurp(dir("report") / "report.kv"), slurp(dir("eval") / "report.kv"));
  EXPECT_EQ(run({"report", "--scores", (dir("eval") / "test_scores.csv").string()}).code, 2);
}

TEST_F(Cli, EvalNeedsAttacksInTest) {
  ASSERT_EQ(run(quick_train("train", "no_atk_model")).code, 0);
  fs::create_directories(dir("no_atk"));
  std::istringstream in(slurp(data() / "manifest.jsonl"));
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.find("\"class\":\"attack\"") == std::string::npos) kept += line + "\n";
  }
  put(dir("no_atk") / "manifest.jsonl", kept);
  fs::create_directory_symlink(data() / "images", dir("no_atk") / "images");
  const auto r = run({"eval", "--data", dir("no_atk").string(), "--checkpoint",
                      (dir("no_atk_model") / "checkpoint.fpad").string(), "--out", dir("no_atk_eval").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no attack"), std::string::npos) << r.err;
}

TEST_F(Cli, ReportOfPerfectScoresIsAllZero) {
  put(dir("perfect.csv"),
      "sample_id,label,pai_species,score\n"
      "a,bona_fide,,0.99\nb,bona_fide,,0.97\nc,attack,ecoflex,0.01\nd,attack,playdoh,0.02\n");
  const auto r = run({"report", "--scores", dir("perfect.csv").string(), "--threshold", "fixed:0.5", "--out",
                      dir("perfect").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = KeyValues::parse(slurp(dir("perfect") / "report.kv"));
  EXPECT_EQ(kv.get_double("apcer"), 0.0);
  EXPECT_EQ(kv.get_double("bpcer"), 0.0);
  EXPECT_EQ(kv.get_double("acer"), 0.0);
  EXPECT_EQ(kv.get_double("auc"), 1.0);
}

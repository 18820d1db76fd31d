#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "sfn/io.hpp"

namespace fs = std::filesystem;
using sfn::cli::run_command;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult sfn_run(std::vector<std::string> args) {
  args.insert(args.begin(), "sfn");
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string digest_line(const std::string& out) {
  const auto pos = out.rfind("digest ");
  return pos == std::string::npos ? "" : out.substr(pos, 7 + 64);
}

// Tiny model and data so end-to-end runs take well under a second.
std::vector<std::string> tiny(std::vector<std::string> args) {
  for (const char* kv : {"model.dim=8", "synth.dim=8", "synth.n_videos=8", "synth.segments=8", "model.fusion_nets=2",
                         "train.phase1_epochs=2", "train.phase2_epochs=2", "train.phase1_batch_size=4",
                         "train.phase2_batch_size=4", "train.train_segments=8"}) {
    args.push_back("--set");
    args.push_back(kv);
  }
  return args;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, GenIsReproducible) {
  const fs::path a = scratch("sfn_cli_gen_a"), b = scratch("sfn_cli_gen_b");
  const CliResult ra = sfn_run({"gen", "--seed", "7", "-o", a.string()});
  const CliResult rb = sfn_run({"gen", "--seed", "7", "-o", b.string()});
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  EXPECT_FALSE(digest_line(ra.out).empty());
  EXPECT_EQ(digest_line(ra.out), digest_line(rb.out));
  EXPECT_EQ(sfn::directory_sha256(a / "data"), sfn::directory_sha256(b / "data"));
  const CliResult rc = sfn_run({"gen", "--seed", "8", "-o", b.string()});
  EXPECT_NE(digest_line(ra.out), digest_line(rc.out));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, CvWithoutDataNamesTheMissingKey) {
  const CliResult r = sfn_run({"cv", "-o", scratch("sfn_cli_nodata").string()});
  EXPECT_EQ(r.code, sfn::cli::kExitValidation);
  EXPECT_NE(r.err.find("data.index"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(sfn_run({"frobnicate"}).code, sfn::cli::kExitUsage);
  EXPECT_EQ(sfn_run({}).code, sfn::cli::kExitUsage);
  EXPECT_EQ(sfn_run({"eval"}).code, sfn::cli::kExitUsage);  // --checkpoint is required
  EXPECT_EQ(sfn_run({"gen", "--bogus"}).code, sfn::cli::kExitUsage);
}

TEST(Cli, BadConfigValuesAreValidationErrors) {
  const CliResult r = sfn_run({"gen", "--set", "synth.noise=-1", "-o", scratch("sfn_cli_bad").string()});
  EXPECT_EQ(r.code, sfn::cli::kExitValidation);
  EXPECT_NE(r.err.find("synth.noise"), std::string::npos) << r.err;
  EXPECT_EQ(sfn_run({"gen", "--set", "model.wat=1"}).code, sfn::cli::kExitValidation);
}

TEST(Cli, GradcheckOpsOnlyPasses) {
  const CliResult r = sfn_run({"gradcheck", "--ops-only", "--seeds", "3"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
}

TEST(Cli, TrainEvalTraceEndToEnd) {
  const fs::path root = scratch("sfn_cli_e2e");
  ASSERT_EQ(sfn_run(tiny({"gen", "-o", root.string()})).code, 0);
  const std::string index = (root / "data" / "index.csv").string();
  const CliResult tr = sfn_run(tiny({"train", "--data", index, "-o", (root / "run").string()}));
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(root / "run" / "checkpoint" / "manifest.tsv"));
  EXPECT_TRUE(fs::exists(root / "run" / "checkpoint_phase1" / "manifest.tsv"));
  EXPECT_EQ(sfn::read_text(root / "run" / "epoch_log.jsonl").find("\"phase\":1") != std::string::npos, true);

  const std::string ckpt = (root / "run" / "checkpoint").string();
  const CliResult ev = sfn_run(tiny({"eval", "--data", index, "--checkpoint", ckpt, "-o", (root / "eval").string()}));
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("fusion"), std::string::npos);
  EXPECT_TRUE(fs::exists(root / "eval" / "eval.json"));

  const CliResult tc = sfn_run(tiny({"trace", "--data", index, "--checkpoint", ckpt, "--videos", "v0,v3", "-o",
                               (root / "trace").string()}));
  ASSERT_EQ(tc.code, 0) << tc.err;
  EXPECT_TRUE(fs::exists(root / "trace" / "trace" / "v0_stage1.csv"));
  EXPECT_TRUE(fs::exists(root / "trace" / "trace" / "v3_stage3.csv"));

  // Unknown video id is a validation error, not a crash.
  EXPECT_EQ(sfn_run(tiny({"trace", "--data", index, "--checkpoint", ckpt, "--videos", "nope", "-o",
                          (root / "trace").string()}))
                .code,
            sfn::cli::kExitValidation);
  fs::remove_all(root);
}

TEST(Cli, CvDigestIsStableAcrossRunsAndJobs) {
  const fs::path root = scratch("sfn_cli_cv");
  auto cv = [&](const std::string& jobs, const std::string& out) {
    return sfn_run(tiny({"cv", "--set", "data.source=synth", "--set", "experiment.scheme=kfold4", "-j", jobs, "-o",
                         (root / out).string()}));
  };
  const CliResult a = cv("1", "a"), b = cv("1", "b"), c = cv("3", "c");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_FALSE(digest_line(a.out).empty());
  EXPECT_EQ(digest_line(a.out), digest_line(b.out));
  EXPECT_EQ(digest_line(a.out), digest_line(c.out));
  fs::remove_all(root);
}

TEST(Cli, HeadsAblationWritesTable) {
  const fs::path root = scratch("sfn_cli_heads");
  const CliResult r = sfn_run(tiny({"cv", "--set", "data.source=synth", "--heads", "1,2", "-o", root.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string table = sfn::read_text(root / "heads.tsv");
  EXPECT_NE(table.find("\n1\t"), std::string::npos);
  EXPECT_NE(table.find("\n2\t"), std::string::npos);
  EXPECT_EQ(sfn_run(tiny({"cv", "--set", "data.source=synth", "--heads", "3", "-o", root.string()})).code,
            sfn::cli::kExitValidation);  // 3 does not divide dim 8
  fs::remove_all(root);
}

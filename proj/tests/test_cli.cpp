#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>

#include "petroseg/image_io.hpp"
#include "support.hpp"

#ifndef PETROSEG_CLI
#error "PETROSEG_CLI must point at the petroseg executable"
#endif

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(PETROSEG_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, PhantomColorSegAndC457) {
  testsupport::TempDir dir("cli");
  auto r = run("phantom -o " + q(dir.path()) + " --width 400 --height 400 --id ph");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "ph.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ph.mask.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ph.truth.csv"));

  r = run("color-seg " + q(dir / "ph.png") + " -o " + q(dir / "seg.png"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "seg.palette.png"));

  r = run("c457 " + q(dir / "seg.png") + " -o " + q(dir / "seg.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(testsupport::read_file(dir / "seg.csv").rfind("label,A_pct", 0), 0u);

  r = run("report " + q(dir / "seg.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("L [mm]"), std::string::npos);
  EXPECT_NE(r.output.find("seg"), std::string::npos);

  r = run("ingest " + q(dir / "ph.png") + " --mask " + q(dir / "ph.mask.png"));
  ASSERT_EQ(r.code, 0) << r.output;
}

TEST(Cli, ExitCodesByErrorFamily) {
  testsupport::TempDir dir("cli");
  auto r = run("");
  EXPECT_EQ(r.code, 2) << r.output;
  r = run("frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("CONFIG_ERROR"), std::string::npos);
  r = run("c457 " + q(dir / "missing.png"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("error: INPUT_ERROR: "), std::string::npos);
  {
    std::ofstream f(dir / "bad.cfg");
    f << "pitch_um = 5.3\nbogus = 1\n";
  }
  r = run("config init -o " + q(dir / "ok.cfg"));
  EXPECT_EQ(r.code, 0);
  r = run("c457 " + q(dir / "missing.png") + " -c " + q(dir / "bad.cfg"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(":2: unknown key 'bogus'"), std::string::npos) << r.output;
  r = run("c457 " + q(dir / "missing.png") + " -c " + q(dir / "ok.cfg"));
  EXPECT_EQ(r.code, 3);
  r = run("train " + q(dir / "nothing") + " -o " + q(dir / "m.ckpt"));
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, EvaluateRequiresCompleteAnnotation) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("phantom -o " + q(dir.path()) + " --width 200 --height 200 --id e").code, 0);
  {
    std::ofstream f(dir / "e.tsv");
    f << "row\tcol\tx_px\ty_px\tlabel\n0\t0\t1\t1\tAGG\n";
  }
  auto r = run("evaluate " + q(dir / "e.tsv") + " " + q(dir / "e.mask.png"));
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST(Cli, TrainAndPredictAreByteIdentical) {
  testsupport::TempDir dir("cli");
  const auto data = dir / "data";
  for (int k = 0; k < 2; ++k) {
    ASSERT_EQ(run("phantom -o " + q(data) + " --width 96 --height 96 --no-specks --style raw --seed " +
                  std::to_string(k + 3) + " --id s" + std::to_string(k))
                  .code,
              0);
    std::filesystem::remove(data / ("s" + std::to_string(k) + ".truth.csv"));
  }
  {
    std::ofstream f(dir / "t.cfg");
    f << "train.iterations = 4\ntrain.batch = 2\ntrain.crop = 32\ntrain.base_channels = 2\n"
         "train.snapshot_period = 2\npredict.tile = 64\npredict.overlap = 8\n";
  }
  const std::string cfg = " -c " + q(dir / "t.cfg");
  for (const char* tag : {"a", "b"}) {
    const auto out = dir / tag;
    auto r = run("train " + q(data) + " -o " + q(out / "m.ckpt") + cfg);
    ASSERT_EQ(r.code, 0) << r.output;
    r = run("predict " + q(out / "m.ckpt") + " " + q(data / "s0.png") + " -o " + q(out / "p.png") + cfg);
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("predicted 96x96 px in"), std::string::npos);
  }
  EXPECT_EQ(testsupport::read_bytes(dir / "a/m.ckpt"), testsupport::read_bytes(dir / "b/m.ckpt"));
  EXPECT_EQ(testsupport::read_bytes(dir / "a/p.png"), testsupport::read_bytes(dir / "b/p.png"));
  EXPECT_EQ(testsupport::read_file(dir / "a/loss.csv"), testsupport::read_file(dir / "b/loss.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a/miou.csv"));
}

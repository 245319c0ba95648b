// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "liso/liso.hpp"

using namespace liso;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr together
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(LISO_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("liso_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

NetConfig tiny() {
  NetConfig c;
  c.hidden_channels = 8;
  c.decoder_width = 1;
  c.critic_width = 4;
  c.stem_width = 2;
  c.extractor_width = 4;
  return c;
}

/// Decoder that reads bit = [red > 0.5]; enough for a real roundtrip.
ParameterArchive threshold_model() {
  ParameterArchive a = nets::make_liso_archive<float>(tiny(), 1);
  for (auto& [name, e] : a.entries())
    if (name.rfind("decoder/", 0) == 0) e.value.fill(0.0f);
  for (const char* b : {"decoder/block1", "decoder/block2", "decoder/block3"}) {
    const std::string s(b);
    a.at(s + "/conv/weight").value.at(0, 0, 1, 1) = 1.0f;
    a.at(s + "/bn/gamma").value.fill(1.0f);
    a.at(s + "/bn/running_var").value.fill(1.0f - 1e-5f);
  }
  a.at("decoder/out/weight").value.at(0, 0, 1, 1) = 40.0f;
  a.at("decoder/out/bias").value.fill(-20.0f);
  return a;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

}  // namespace

TEST(Cli, NoSubcommandIsConfigError) { EXPECT_EQ(run("").code, 2); }

TEST(Cli, TrainMissingDatasetNamesKey) {
  const auto d = temp_dir("train_missing");
  std::ofstream(d / "c.cfg") << "data_dir = " << (d / "nope").string() << "\n";
  const CliResult r = run("train --config " + (d / "c.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("data_dir"), std::string::npos) << r.out;
}

TEST(Cli, TrainUnknownKey) {
  const CliResult r = run("train --set colour=red");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("colour"), std::string::npos);
}

TEST(Cli, TrainWritesLoadableCheckpointAndLog) {
  const auto d = temp_dir("train");
  ASSERT_EQ(run("synth --out-dir " + (d / "data").string() + " --count 6 --size 20").code, 0);
  std::ofstream(d / "c.cfg") << "data_dir = " << (d / "data").string() << "\n"
                             << "val_count = 2\ntrain_count = 4\ncrop_size = 16\nsteps = 2\nbatch_size = 2\n"
                             << "hidden_channels = 8\ndecoder_width = 4\ncritic_width = 4\nstem_width = 2\n"
                             << "extractor_width = 4\ncheckpoint = " << (d / "m.ckpt").string() << "\n"
                             << "log = " << (d / "log.csv").string() << "\n";
  const CliResult r = run("train --config " + (d / "c.cfg").string() + " --set epochs=2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NO_THROW(load_checkpoint(d / "m.ckpt"));
  std::ifstream log(d / "log.csv");
  int lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, 1 + 4);  // header + 2 epochs x 2 updates
}

TEST(Cli, EncodeDecodeRoundtrip) {
  const auto d = temp_dir("roundtrip");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  save_png(synth_image(16, 16, 3), d / "cover.png");
  const Payload msg{'h', 'i', 'd', 'd', 'e', 'n', '!'};
  std::ofstream(d / "msg.bin", std::ios::binary).write(reinterpret_cast<const char*>(msg.data()), msg.size());
  const std::string base = "encode --checkpoint " + (d / "m.ckpt").string() + " --cover " + (d / "cover.png").string() +
                           " --message " + (d / "msg.bin").string() + " --out " + (d / "stego.png").string();
  const CliResult e = run(base + " --max-iters 2 --refine-lbfgs 30");
  ASSERT_EQ(e.code, 0) << e.out;
  const auto fields = split_ws(e.out);
  ASSERT_EQ(fields.size(), 5u) << e.out;
  for (const auto& f : fields) {
    std::size_t pos = 0;
    if (f != "inf") {
      EXPECT_NO_THROW((void)std::stod(f, &pos)) << f;
    }
  }
  EXPECT_EQ(std::stod(fields[0]), 0.0);

  ASSERT_EQ(run("decode --checkpoint " + (d / "m.ckpt").string() + " --stego " + (d / "stego.png").string() +
                " --out " + (d / "got.bin").string())
                .code,
            0);
  std::ifstream in(d / "got.bin", std::ios::binary);
  const Payload got((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(got, msg);
}

TEST(Cli, EncodeOversizedMessage) {
  const auto d = temp_dir("oversized");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  save_png(synth_image(16, 16, 4), d / "cover.png");
  std::ofstream(d / "msg.bin") << std::string(100, 'x');
  const CliResult r = run("encode --checkpoint " + (d / "m.ckpt").string() + " --cover " + (d / "cover.png").string() +
                    " --message " + (d / "msg.bin").string() + " --out " + (d / "s.png").string());
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST(Cli, EncodeBppMismatch) {
  const auto d = temp_dir("mismatch");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  save_png(synth_image(16, 16, 5), d / "cover.png");
  std::ofstream(d / "msg.bin") << "x";
  const CliResult r = run("encode --bpp 2 --checkpoint " + (d / "m.ckpt").string() + " --cover " +
                    (d / "cover.png").string() + " --message " + (d / "msg.bin").string() + " --out " +
                    (d / "s.png").string());
  EXPECT_EQ(r.code, 5) << r.out;
}

TEST(Cli, DecodeMalformedHeader) {
  const auto d = temp_dir("malformed");
  ParameterArchive a = threshold_model();
  a.at("decoder/out/weight").value.fill(0.0f);
  a.at("decoder/out/bias").value.fill(5.0f);  // every bit reads 1
  save_checkpoint(a, d / "m.ckpt");
  save_png(synth_image(16, 16, 6), d / "x.png");
  const CliResult r = run("decode --checkpoint " + (d / "m.ckpt").string() + " --stego " + (d / "x.png").string() +
                    " --out " + (d / "o.bin").string());
  EXPECT_EQ(r.code, 6) << r.out;
}

TEST(Cli, DecodeIsDeterministic) {
  const auto d = temp_dir("decode_det");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  Image x = synth_image(16, 16, 7);
  for (auto& v : x.storage()) v *= 0.4f;  // every bit 0: empty payload
  save_png(x, d / "x.png");
  for (const char* out : {"a.bin", "b.bin"})
    ASSERT_EQ(run("decode --checkpoint " + (d / "m.ckpt").string() + " --stego " + (d / "x.png").string() +
                  " --out " + (d / out).string())
                  .code,
              0);
  EXPECT_EQ(fs::file_size(d / "a.bin"), 0u);
  EXPECT_EQ(fs::file_size(d / "b.bin"), 0u);
}

TEST(Cli, BenchUnknownOptimizerListsNames) {
  const auto d = temp_dir("bench_bad");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  write_synthetic_dataset(d / "data", 2, 16, 1);
  const CliResult r = run("bench --checkpoint " + (d / "m.ckpt").string() + " --data-dir " + (d / "data").string() +
                    " --out-dir " + (d / "out").string() + " --optimizers liso,adam");
  EXPECT_EQ(r.code, 2);
  for (const char* n : {"liso", "liso+lbfgs", "pgd", "lbfgs"}) EXPECT_NE(r.out.find(n), std::string::npos);
}

TEST(Cli, BenchMeanCurveIsMeanOfTraces) {
  const auto d = temp_dir("bench");
  save_checkpoint(threshold_model(), d / "m.ckpt");
  write_synthetic_dataset(d / "data", 2, 16, 2);
  const CliResult r = run("bench --checkpoint " + (d / "m.ckpt").string() + " --data-dir " + (d / "data").string() +
                    " --out-dir " + (d / "out").string() + " --optimizers pgd --iters 4");
  ASSERT_EQ(r.code, 0) << r.out;
  std::vector<std::vector<double>> per_image;
  for (const auto& f : list_images(d / "data")) {
    std::ifstream in(d / "out" / (f.stem().string() + ".pgd.trace.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<double> errs;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      for (int k = 0; k < 3; ++k) std::getline(ss, cell, ',');
      errs.push_back(std::stod(cell));
    }
    ASSERT_EQ(errs.size(), 5u);
    per_image.push_back(errs);
  }
  std::ifstream mean(d / "out" / "mean_curve.csv");
  std::string line;
  std::getline(mean, line);
  EXPECT_EQ(line, "iteration,pgd");
  for (int t = 0; t <= 4; ++t) {
    ASSERT_TRUE(std::getline(mean, line));
    const double v = std::stod(line.substr(line.find(',') + 1));
    EXPECT_NEAR(v, (per_image[0][t] + per_image[1][t]) / 2.0, 1e-6);
  }
}

// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Trained models are
// cached in the work directory so reruns only pay for evaluation.
#include <CLI11.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "liso/liso.hpp"

using namespace liso;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kUnitSuiteSeconds = 120.0;
constexpr double kGradRelError = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kTrainSeconds = 4.0 * 3600.0;
constexpr double kLisoMaxError = 0.01;
constexpr double kLisoMaxIters = 25.0;
constexpr double kRefineZeroFraction = 0.95;
constexpr double kMinPsnr = 28.0;
constexpr int kOrderingIteration = 15;
constexpr int kOrderingImages = 20;
constexpr double kJpegMaxError = 0.05;
constexpr double kUndefendedMinAccuracy = 90.0;
constexpr double kDefendedMaxAccuracy = 60.0;
constexpr double kDefendedMaxError = 0.01;
constexpr double kTimeRatio = 0.2;

// Desk-scale setup.
constexpr int kImageSize = 64;
constexpr int kTrainImages = 200;
constexpr int kHeldOut = 50;
constexpr int kTimingImages = 20;
constexpr int kDetectorTrainImages = 200;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string pct(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << 100.0 * v << "%";
  return os.str();
}

std::string num(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void print(int id, const std::string& name, const Outcome& o) {
  std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
            << std::endl;
}

NetConfig desk_net(int bpp) {
  NetConfig n;
  n.bpp = bpp;
  n.hidden_channels = 32;
  n.stem_width = 16;
  n.extractor_width = 16;
  n.decoder_width = 32;
  n.critic_width = 16;
  n.detector_width = 16;
  return n;
}

TrainConfig desk_train(int bpp) {
  TrainConfig c;
  c.net = desk_net(bpp);
  c.crop_size = 32;
  c.batch_size = 1;
  c.learning_rate = 3e-4;
  c.epochs = 1000;
  c.max_updates = 2000;
  c.seed = 11;
  return c;
}

struct Workspace {
  fs::path dir;
  std::vector<Image> train_images;
  std::vector<fs::path> held_out;
  std::vector<Image> held_out_images;

  explicit Workspace(fs::path d) : dir(std::move(d)) {
    fs::create_directories(dir);
    const fs::path data = dir / "data";
    if (!fs::is_directory(data) || list_images(data).size() != static_cast<std::size_t>(kTrainImages + kHeldOut)) {
      fs::remove_all(data);
      write_synthetic_dataset(data, kTrainImages + kHeldOut, kImageSize, 2024);
    }
    const auto files = list_images(data);
    for (int i = 0; i < kTrainImages; ++i) train_images.push_back(load_image(files[i]));
    for (int i = kTrainImages; i < kTrainImages + kHeldOut; ++i) {
      held_out.push_back(files[i]);
      held_out_images.push_back(load_image(files[i]));
    }
  }

  /// Loads `name` if a model with the same configuration was trained before.
  ParameterArchive model(const std::string& name, TrainConfig cfg, double* seconds = nullptr) {
    const fs::path ckpt = dir / (name + ".ckpt"), meta = dir / (name + ".meta");
    std::ostringstream key;
    key << cfg.net.bpp << ' ' << cfg.net.hidden_channels << ' ' << cfg.crop_size << ' ' << cfg.batch_size << ' '
        << cfg.learning_rate << ' ' << cfg.max_updates << ' ' << cfg.seed << ' ' << cfg.jpeg.enabled << ' '
        << cfg.jpeg.quality << ' ' << cfg.init_checkpoint;
    if (fs::exists(ckpt) && fs::exists(meta)) {
      std::ifstream in(meta);
      std::string stored_key;
      double secs = 0.0;
      std::getline(in, stored_key);
      in >> secs;
      if (stored_key == key.str()) {
        if (seconds) *seconds = secs;
        return load_checkpoint(ckpt);
      }
    }
    std::cout << "  training " << name << " (" << cfg.max_updates << " updates)" << std::endl;
    cfg.log = (dir / (name + ".log.csv")).string();
    const auto t0 = Clock::now();
    ParameterArchive p = train(train_images, cfg);
    const double secs = since(t0);
    save_checkpoint(p, ckpt);
    std::ofstream(meta) << key.str() << "\n" << secs << "\n";
    if (seconds) *seconds = secs;
    return p;
  }
};

// --- 1 ---------------------------------------------------------------------

Outcome unit_suite() {
  std::vector<std::string> binaries;
  std::stringstream ss(LISO_UNIT_TESTS);
  for (std::string name; std::getline(ss, name, ',');) binaries.push_back(std::string(LISO_TEST_DIR) + "/test_" + name);
  const auto t0 = Clock::now();
  std::vector<std::string> failed;
  for (const auto& b : binaries) {
    const int status = std::system((b + " --gtest_brief=1 > /dev/null 2>&1").c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed.push_back(fs::path(b).filename().string());
  }
  const double secs = since(t0);
  Outcome o;
  o.pass = failed.empty() && secs < kUnitSuiteSeconds && !binaries.empty();
  o.detail = std::to_string(binaries.size()) + " suites in " + num(secs) + " s (<" + num(kUnitSuiteSeconds) + ")";
  for (const auto& f : failed) o.detail += ", failed " + f;
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome gradient_checks() {
  using D = double;
  const auto t0 = Clock::now();
  std::mt19937 rng(5);
  std::uniform_real_distribution<D> u(0.05, 0.95);
  auto rand_image = [&](int h, int w) {
    Tensor<D> t(Shape{1, 3, h, w});
    for (auto& v : t.storage()) v = u(rng);
    return t;
  };

  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    NetConfig n;
    n.hidden_channels = 8;
    n.decoder_width = 8;
    auto p = nets::make_liso_archive<D>(n, 40 + trial);
    Objective<D> obj;
    obj.decoder = &p;
    obj.cover = rand_image(8, 8);
    obj.target = message_to_tensor<D>(sample_random_message(8, 8, 1, 50 + trial));
    obj.lambda = 1.0;
    const Tensor<D> x0 = rand_image(8, 8);
    const auto grad = obj.value_and_grad(x0).second;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      Tensor<D> xp = x0, xm = x0;
      xp[i] += 1e-5;
      xm[i] -= 1e-5;
      const D fd = (obj.value(xp) - obj.value(xm)) / 2e-5;
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
    }
  }

  // Straight-through JPEG: dL/dx must be the upstream gradient, bit for bit.
  bool exact = true;
  for (int trial = 0; trial < 3; ++trial) {
    Graph<D> g(false);
    Var<D> x = g.variable(rand_image(16, 16));
    Var<D> y = jpeg_straight_through(x, 80);
    Var<D> w = g.constant(rand_image(16, 16));
    g.backward(ops::mean(ops::mul(y, w)));
    exact = exact && g.grad(x).storage() == g.grad(y).storage();
  }
  const double secs = since(t0);
  Outcome o;
  o.pass = worst < kGradRelError && exact && secs < kGradSeconds;
  o.detail = "max rel error " + num(worst) + " (<" + num(kGradRelError) + "), jpeg backward " +
             (exact ? "exact" : "NOT exact") + ", " + num(secs) + " s (<" + num(kGradSeconds) + ")";
  return o;
}

// --- 3 ---------------------------------------------------------------------

EvalConfig eval_config(const fs::path& out_dir) {
  EvalConfig e;
  e.liso.eta = 0.1;
  e.liso.max_iters = 50;
  e.refine_steps = 50;
  e.seed = 777;
  e.out_dir = out_dir;
  return e;
}

Outcome end_to_end(ParameterArchive& model, double train_secs, const Workspace& ws) {
  const Report r = evaluate(ws.held_out, model, 1, eval_config(ws.dir / "eval"), {Method::Liso, Method::LisoLbfgs});
  const auto liso = r.summary(Method::Liso), refined = r.summary(Method::LisoLbfgs);
  Outcome o;
  o.pass = train_secs <= kTrainSeconds && liso.mean_error <= kLisoMaxError && liso.mean_iterations <= kLisoMaxIters &&
           refined.zero_error_fraction >= kRefineZeroFraction && liso.mean_psnr >= kMinPsnr &&
           refined.mean_psnr >= kMinPsnr;
  o.detail = "train " + num(train_secs, 4) + " s (<=" + num(kTrainSeconds, 5) + "), liso error " +
             pct(liso.mean_error) + " (<=1%), iterations " + num(liso.mean_iterations) + " (<=25, max " +
             std::to_string(liso.max_iterations) + "), liso+lbfgs zero-error " + pct(refined.zero_error_fraction) +
             " (>=95%), psnr " + num(liso.mean_psnr) + " / " + num(refined.mean_psnr) + " dB (>=28)";
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome ordering(ParameterArchive& model, const Workspace& ws) {
  const int n = kOrderingImages, t = kOrderingIteration, bpp = model.config.bpp;
  double liso = 0.0, lbfgs = 0.0, pgd = 0.0;
  std::vector<double> curve(6, 0.0);
  for (int i = 0; i < n; ++i) {
    const Image& cover = ws.held_out_images[i];
    const MessageTensor m = sample_random_message(kImageSize, kImageSize, bpp, 900 + i);
    OptimizeConfig oc;
    oc.eta = 0.1;
    oc.max_iters = t;
    oc.stop_on_zero = false;
    oc.patience = t + 1;
    const LisoResult a = liso_encode(cover, m, model, oc);
    liso += a.trace.error_at(t);
    for (int k = 1; k <= 5; ++k) curve[k] += a.trace.error_at(k) / n;
    LbfgsConfig lc;
    lc.max_steps = t;
    lc.stop_on_zero = false;
    lbfgs += lbfgs_optimize(cover, cover, m, model, lc).trace.error_at(t);
    PgdConfig pc;
    pc.steps = t;
    pc.stop_on_zero = false;
    pgd += pgd_optimize(cover, m, model, pc).trace.error_at(t);
  }
  liso /= n;
  lbfgs /= n;
  pgd /= n;
  bool monotone = true;
  for (int k = 2; k <= 5; ++k) monotone = monotone && curve[k] <= curve[k - 1];
  Outcome o;
  o.pass = liso < lbfgs && lbfgs < pgd && monotone;
  o.detail = std::to_string(bpp) + " bpp, " + std::to_string(n) + " images, error at iteration " + std::to_string(t) +
             ": liso " + pct(liso) + ", lbfgs " + pct(lbfgs) + ", pgd " + pct(pgd) + "; liso curve 1..5:";
  for (int k = 1; k <= 5; ++k) o.detail += " " + pct(curve[k]);
  o.detail += monotone ? " (non-increasing)" : " (INCREASES)";
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome jpeg_mode(ParameterArchive& model, const Workspace& ws) {
  EvalConfig e = eval_config(ws.dir / "eval_jpeg");
  e.liso.jpeg.enabled = true;
  e.liso.jpeg.quality = 80;
  const Report r = evaluate(ws.held_out, model, 1, e, {Method::Liso});
  const auto s = r.summary(Method::Liso);
  Outcome o;
  o.pass = s.mean_error <= kJpegMaxError;
  o.detail = "error after real JPEG-80 roundtrip " + pct(s.mean_error) + " (<=5%), psnr " + num(s.mean_psnr) + " dB";
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome defense(ParameterArchive& model, const Workspace& ws) {
  OptimizeConfig oc;
  oc.eta = 0.1;
  oc.max_iters = 50;
  auto encode_all = [&](const std::vector<Image>& covers, std::uint64_t seed, ParameterArchive* det,
                        double* mean_error) {
    std::vector<Image> out;
    double err = 0.0;
    for (std::size_t i = 0; i < covers.size(); ++i) {
      const MessageTensor m = sample_random_message(kImageSize, kImageSize, 1, seed + i);
      const Image stego = quantize(liso_encode(covers[i], m, model, oc, det).stego);  // what a PNG stores
      err += error_rate(decode_bits(nets::decoder_forward(model, stego)), m);
      out.push_back(stego);
    }
    if (mean_error) *mean_error = err / covers.size();
    return out;
  };

  const std::vector<Image> train_covers(ws.train_images.begin(), ws.train_images.begin() + kDetectorTrainImages);
  const auto train_stego = encode_all(train_covers, 5000, nullptr, nullptr);
  double plain_error = 0.0, defended_error = 0.0;
  const auto test_stego = encode_all(ws.held_out_images, 6000, nullptr, &plain_error);

  DetectorTrainConfig dc;
  dc.net = model.config;
  dc.epochs = 80;
  dc.seed = 3;
  ParameterArchive det = train_detector(train_covers, train_stego, dc);
  const double undefended = detection_accuracy(det, ws.held_out_images, test_stego);
  const auto defended_stego = encode_all(ws.held_out_images, 6000, &det, &defended_error);
  const double defended = detection_accuracy(det, ws.held_out_images, defended_stego);

  Outcome o;
  o.pass = undefended >= kUndefendedMinAccuracy && defended <= kDefendedMaxAccuracy &&
           defended_error <= kDefendedMaxError;
  o.detail = "detector accuracy undefended " + num(undefended) + "% (>=90), defended " + num(defended) +
             "% (<=60); error undefended " + pct(plain_error) + ", defended " + pct(defended_error) + " (<=1%)";
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome timing(ParameterArchive& model, const Workspace& ws) {
  double liso_secs = 0.0, lbfgs_secs = 0.0, liso_err = 0.0, lbfgs_err = 0.0;
  for (int i = 0; i < kTimingImages; ++i) {
    const Image& cover = ws.held_out_images[i];
    const MessageTensor m = sample_random_message(kImageSize, kImageSize, 1, 1300 + i);
    OptimizeConfig oc;
    oc.eta = 0.1;
    oc.max_iters = 50;
    auto t0 = Clock::now();
    const LisoResult a = liso_encode(cover, m, model, oc);
    liso_secs += since(t0);
    // Same target: stop as soon as L-BFGS is at least as accurate as LISO was.
    LbfgsConfig lc;
    lc.max_steps = 500;
    lc.stop_error = a.error_rate;
    t0 = Clock::now();
    const OptimizeResult b = lbfgs_optimize(cover, cover, m, model, lc);
    lbfgs_secs += since(t0);
    liso_err += a.error_rate;
    lbfgs_err += b.error_rate;
  }
  liso_secs /= kTimingImages;
  lbfgs_secs /= kTimingImages;
  Outcome o;
  o.pass = liso_secs < kTimeRatio * lbfgs_secs;
  o.detail = "per image liso " + num(liso_secs) + " s vs lbfgs " + num(lbfgs_secs) + " s, ratio " +
             num(liso_secs / lbfgs_secs) + " (<0.2); errors " + pct(liso_err / kTimingImages) + " / " +
             pct(lbfgs_err / kTimingImages);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LISO acceptance suite"};
  std::string work_dir = (fs::temp_directory_path() / "liso_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Cache for data and trained models");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 7));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> wanted = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7} : std::set<int>(only.begin(), only.end());

  bool all = true;
  int ran = 0, passed = 0;
  auto run = [&](int id, const std::string& name, auto&& fn) {
    if (!wanted.count(id)) {
      std::cout << "criterion " << id << " [SKIP] " << name << std::endl;
      return;
    }
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.detail = std::string("error: ") + e.what();
    }
    all = all && o.pass;
    ++ran;
    passed += o.pass;
    print(id, name, o);
  };

  run(1, "unit/property suite", unit_suite);
  run(2, "gradient checks", gradient_checks);

  std::optional<Workspace> ws;
  if (wanted.count(3) || wanted.count(4) || wanted.count(5) || wanted.count(6) || wanted.count(7)) ws.emplace(work_dir);

  double train_secs = 0.0;
  std::optional<ParameterArchive> base;
  auto base_model = [&]() -> ParameterArchive& {
    if (!base) base = ws->model("liso_1bpp", desk_train(1), &train_secs);
    return *base;
  };

  run(3, "desk-scale end-to-end", [&] {
    ParameterArchive& m = base_model();
    return end_to_end(m, train_secs, *ws);
  });
  run(4, "optimizer ordering", [&] {
    ParameterArchive m = ws->model("liso_4bpp", desk_train(4));
    return ordering(m, *ws);
  });
  run(5, "JPEG mode", [&] {
    base_model();
    TrainConfig c = desk_train(1);
    c.jpeg.enabled = true;
    c.jpeg.quality = 80;
    c.max_updates = 2000;
    c.init_checkpoint = (ws->dir / "liso_1bpp.ckpt").string();
    ParameterArchive m = ws->model("liso_1bpp_jpeg80", c);
    return jpeg_mode(m, *ws);
  });
  run(6, "steganalysis defense", [&] { return defense(base_model(), *ws); });
  run(7, "timing", [&] { return timing(base_model(), *ws); });

  std::cout << "acceptance: " << passed << "/" << ran << " criteria passed" << std::endl;
  return all ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "liso/bitstream.hpp"
#include "liso/imageio.hpp"
#include "liso/optim.hpp"

namespace liso {

/// 10 log10(1 / MSE) at unit peak; +inf for identical inputs.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "psnr");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Single-scale SSIM (Gaussian 11x11, sigma 1.5) over windows fully inside
/// the image, averaged over positions and channels.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "ssim");
  require(a.rank() == 4 && a.dim(0) == 1, ErrorCode::ShapeMismatch, "ssim expects (1,C,H,W)");
  const int c = a.dim(1), h = a.dim(2), w = a.dim(3);
  require(h >= kSsimWindow && w >= kSsimWindow, ErrorCode::TooSmall, "ssim needs H, W >= 11");
  std::vector<double> k(kSsimWindow);
  double ks = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    ks += k[i];
  }
  for (auto& v : k) v /= ks;
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;

  // Separable filtering of one plane to the valid region.
  auto filter = [&](const std::vector<double>& plane) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };

  double total = 0.0;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a[ch * n + i];
      pb[i] = b[ch * n + i];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto ma = filter(pa), mb = filter(pb), saa = filter(aa), sbb = filter(bb), sab = filter(ab);
    double s = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i];
      const double vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      s += ((2.0 * ma[i] * mb[i] + kSsimC1) * (2.0 * cov + kSsimC2)) /
           ((ma[i] * ma[i] + mb[i] * mb[i] + kSsimC1) * (va + vb + kSsimC2));
    }
    total += s / static_cast<double>(ma.size());
  }
  return total / c;
}

enum class Method { Liso, LisoLbfgs, Pgd, Lbfgs };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Liso: return "liso";
    case Method::LisoLbfgs: return "liso+lbfgs";
    case Method::Pgd: return "pgd";
    case Method::Lbfgs: return "lbfgs";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::Liso, Method::LisoLbfgs, Method::Pgd, Method::Lbfgs})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

struct EvalConfig {
  OptimizeConfig liso;
  PgdConfig pgd;
  LbfgsConfig lbfgs;
  int refine_steps = 20;       // L-BFGS steps after LISO
  int size = 0;                // square resize of every image, 0 keeps native size
  std::uint64_t seed = 0;      // message stream; image i uses seed + i
  std::filesystem::path out_dir;  // stego files (and traces when write_traces)
  bool write_traces = false;
  int jobs = 1;
  ParameterArchive* detector = nullptr;  // defense term for liso modes
};

struct EvalRecord {
  std::string image;
  Method method = Method::Liso;
  double error_rate = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  int iterations = 0;
  double seconds = 0.0;
  Trace trace;
};

struct ModeSummary {
  std::size_t count = 0;
  double mean_error = 0.0;
  double max_error = 0.0;
  double zero_error_fraction = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_iterations = 0.0;
  int max_iterations = 0;
  double mean_seconds = 0.0;
};

struct Report {
  std::vector<EvalRecord> records;

  ModeSummary summary(Method m) const {
    ModeSummary s;
    for (const auto& r : records) {
      if (r.method != m) continue;
      ++s.count;
      s.mean_error += r.error_rate;
      s.max_error = std::max(s.max_error, r.error_rate);
      s.zero_error_fraction += r.error_rate == 0.0;
      s.mean_psnr += r.psnr;
      s.mean_ssim += r.ssim;
      s.mean_iterations += r.iterations;
      s.max_iterations = std::max(s.max_iterations, r.iterations);
      s.mean_seconds += r.seconds;
    }
    if (s.count) {
      const double n = static_cast<double>(s.count);
      s.mean_error /= n;
      s.zero_error_fraction /= n;
      s.mean_psnr /= n;
      s.mean_ssim /= n;
      s.mean_iterations /= n;
      s.mean_seconds /= n;
    }
    return s;
  }

  std::vector<Method> methods() const {
    std::vector<Method> out;
    for (const auto& r : records)
      if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "image,method,error_rate,psnr,ssim,iterations,seconds\n";
    for (const auto& r : records)
      os << r.image << ',' << to_string(r.method) << ',' << r.error_rate << ',' << format_db(r.psnr) << ','
         << r.ssim << ',' << r.iterations << ',' << r.seconds << '\n';
  }

  void write_table(std::ostream& os) const {
    os << std::left << std::setw(12) << "method" << std::right << std::setw(7) << "images" << std::setw(12)
       << "error(%)" << std::setw(10) << "zero(%)" << std::setw(9) << "PSNR" << std::setw(8) << "SSIM"
       << std::setw(8) << "iters" << std::setw(10) << "seconds" << '\n';
    for (Method m : methods()) {
      const auto s = summary(m);
      os << std::left << std::setw(12) << to_string(m) << std::right << std::setw(7) << s.count << std::fixed
         << std::setprecision(3) << std::setw(12) << 100.0 * s.mean_error << std::setprecision(1) << std::setw(10)
         << 100.0 * s.zero_error_fraction << std::setprecision(2) << std::setw(9) << s.mean_psnr
         << std::setprecision(4) << std::setw(8) << s.mean_ssim << std::setprecision(2) << std::setw(8)
         << s.mean_iterations << std::setprecision(3) << std::setw(10) << s.mean_seconds << '\n';
      os.unsetf(std::ios::fixed);
    }
  }
};

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Runs one method on one cover.
inline OptimizeResult run_method(Method m, const Image& cover, const MessageTensor& msg, ParameterArchive& archive,
                                 const EvalConfig& cfg) {
  switch (m) {
    case Method::Liso: return liso_encode(cover, msg, archive, cfg.liso, cfg.detector);
    case Method::LisoLbfgs: return liso_refine_lbfgs(cover, msg, archive, cfg.liso, cfg.refine_steps, cfg.detector);
    case Method::Pgd: return pgd_optimize(cover, msg, archive, cfg.pgd);
    case Method::Lbfgs: return lbfgs_optimize(cover, cover, msg, archive, cfg.lbfgs);
  }
  fail(ErrorCode::InvalidArgument, "unknown method");
}

/// Encodes every image with every method, stores the stego PNG, reloads it
/// and decodes what a recipient would see.
inline Report evaluate(const std::vector<std::filesystem::path>& images, ParameterArchive& archive, int bpp,
                       const EvalConfig& cfg, const std::vector<Method>& methods) {
  Report report;
  if (methods.empty() || images.empty()) return report;
  require(archive.config.bpp == bpp, ErrorCode::PayloadMismatch,
          "checkpoint was trained for " + std::to_string(archive.config.bpp) + " bpp, asked for " + std::to_string(bpp));
  std::filesystem::path out_dir = cfg.out_dir;
  if (out_dir.empty()) out_dir = std::filesystem::temp_directory_path() / "liso_eval";
  std::filesystem::create_directories(out_dir);

  std::vector<std::vector<EvalRecord>> per_image(images.size());
  parallel_for(images.size(), cfg.jobs, [&](std::size_t i) {
    Image cover = load_image(images[i]);
    if (cfg.size > 0) cover = fit_square(cover, cfg.size);
    const MessageTensor msg = sample_random_message(cover.dim(2), cover.dim(3), bpp, cfg.seed + i);
    const std::string stem = images[i].stem().string();
    for (Method m : methods) {
      const auto t0 = std::chrono::steady_clock::now();
      OptimizeResult r = run_method(m, cover, msg, archive, cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::string tag = to_string(m);
      std::replace(tag.begin(), tag.end(), '+', '_');
      Image received;
      if (cfg.liso.jpeg.enabled) {
        const auto jpg = out_dir / (stem + "." + tag + ".jpg");
        save_jpeg(r.stego, jpg, cfg.liso.jpeg.quality);
        received = load_image(jpg);
      } else {
        const auto png = out_dir / (stem + "." + tag + ".png");
        save_png(r.stego, png);
        received = load_image(png);
      }
      const MessageTensor got = decode_bits(nets::decoder_forward(archive, received));
      EvalRecord rec;
      rec.image = images[i].filename().string();
      rec.method = m;
      rec.error_rate = error_rate(got, msg);
      const Image qcover = quantize(cover);
      rec.psnr = psnr(qcover, quantize(r.stego));
      rec.ssim = ssim(qcover, quantize(r.stego));
      rec.iterations = r.iterations;
      rec.seconds = secs;
      rec.trace = std::move(r.trace);
      if (cfg.write_traces) rec.trace.write_csv(out_dir / (stem + "." + tag + ".trace.csv"));
      per_image[i].push_back(std::move(rec));
    }
  });
  for (auto& v : per_image)
    for (auto& r : v) report.records.push_back(std::move(r));
  return report;
}

}  // namespace liso

// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, encode, decode, evaluate, bench,
// steganalyze, synth.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "liso/liso.hpp"

namespace fs = std::filesystem;
using namespace liso;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kDivergence = 3, kCapacity = 4, kMismatch = 5, kMalformed = 6 };

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return kConfig;
    case ErrorCode::DivergenceDetected: return kDivergence;
    case ErrorCode::CapacityExceeded: return kCapacity;
    case ErrorCode::PayloadMismatch:
    case ErrorCode::ShapeMismatch: return kMismatch;
    case ErrorCode::MalformedHeader: return kMalformed;
    default: return kOther;
  }
}

Payload read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read " + p.string());
  return Payload(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& p, const Payload& bytes) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// FNNS-R: swap in a freshly initialized decoder.
void randomize_decoder(ParameterArchive& a, std::uint64_t seed) {
  a.merge_component(nets::make_liso_archive<float>(a.config, seed), "decoder/");
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto m = parse_method(name);
    require(m.has_value(), ErrorCode::ConfigError,
            "unknown optimizer '" + name + "'; valid names: liso, liso+lbfgs, pgd, lbfgs");
    out.push_back(*m);
  }
  require(!out.empty(), ErrorCode::ConfigError, "no optimizer given; valid names: liso, liso+lbfgs, pgd, lbfgs");
  return out;
}

std::vector<fs::path> validation_images(const std::string& dir, std::size_t count) {
  require(!dir.empty(), ErrorCode::ConfigError, "--data-dir is required");
  require(fs::is_directory(dir), ErrorCode::ConfigError, "data_dir: no such directory " + dir);
  auto files = list_images(dir);
  require(!files.empty(), ErrorCode::EmptyDataset, "no images in " + dir);
  if (count > 0 && files.size() > count) files.resize(count);
  return files;
}

struct Common {
  std::uint64_t seed = 0;
  int jobs = 1;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned iterative steganography toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Seed for messages and initialization");
  app.add_option("--jobs", common.jobs, "Images processed concurrently")->check(CLI::PositiveNumber);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train encoder, decoder and critic");
  std::string config_path;
  std::vector<std::string> overrides;
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--set", overrides, "Override a config key: key=value");

  // encode
  auto* enc_cmd = app.add_subcommand("encode", "Hide a message file in a cover image");
  std::string ckpt, cover_path, message_path, out_path, defend_path;
  int bpp = 0, max_iters = 50, refine = 0, jpeg_quality = 0;
  double eta = 0.1, lambda = 1.0, tau = std::numeric_limits<double>::infinity();
  enc_cmd->add_option("--checkpoint", ckpt)->required();
  enc_cmd->add_option("--cover", cover_path)->required();
  enc_cmd->add_option("--message", message_path)->required();
  enc_cmd->add_option("--out", out_path)->required();
  enc_cmd->add_option("--bpp", bpp, "Payload bits per pixel (must match the checkpoint)");
  enc_cmd->add_option("--eta", eta);
  enc_cmd->add_option("--max-iters", max_iters);
  enc_cmd->add_option("--lambda", lambda);
  enc_cmd->add_option("--tau", tau);
  enc_cmd->add_option("--refine-lbfgs", refine, "L-BFGS steps after LISO (0: off)");
  enc_cmd->add_option("--jpeg-quality", jpeg_quality, "Write JPEG at this quality and optimize through it");
  enc_cmd->add_option("--defend", defend_path, "Detector checkpoint for the defense term");

  // decode
  auto* dec_cmd = app.add_subcommand("decode", "Recover the message from a stego image");
  std::string stego_path;
  dec_cmd->add_option("--checkpoint", ckpt)->required();
  dec_cmd->add_option("--stego", stego_path)->required();
  dec_cmd->add_option("--out", out_path)->required();

  // evaluate / bench
  std::string data_dir, out_dir, methods_arg = "liso", report_path;
  std::size_t count = 0;
  int size = 0, iters = 50;
  std::optional<std::uint64_t> random_decoder;
  auto* eval_cmd = app.add_subcommand("evaluate", "Encode, save, reload and score validation images");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data-dir", data_dir)->required();
  eval_cmd->add_option("--methods", methods_arg, "Comma list of liso, liso+lbfgs, pgd, lbfgs");
  eval_cmd->add_option("--count", count, "Use the first N images (0: all)");
  eval_cmd->add_option("--size", size, "Square resize (0: native)");
  eval_cmd->add_option("--out-dir", out_dir);
  eval_cmd->add_option("--report", report_path, "Per-image CSV");
  eval_cmd->add_option("--bpp", bpp);
  eval_cmd->add_option("--eta", eta);
  eval_cmd->add_option("--max-iters", max_iters);
  eval_cmd->add_option("--refine-lbfgs", refine);
  eval_cmd->add_option("--jpeg-quality", jpeg_quality);
  eval_cmd->add_option("--random-decoder", random_decoder, "Replace the decoder with a random one (seed)");

  auto* bench_cmd = app.add_subcommand("bench", "Error-iteration traces for several optimizers");
  bench_cmd->add_option("--checkpoint", ckpt)->required();
  bench_cmd->add_option("--data-dir", data_dir)->required();
  bench_cmd->add_option("--optimizers", methods_arg, "Comma list of liso, liso+lbfgs, pgd, lbfgs");
  bench_cmd->add_option("--count", count);
  bench_cmd->add_option("--size", size);
  bench_cmd->add_option("--iters", iters, "Iteration budget for every optimizer");
  bench_cmd->add_option("--out-dir", out_dir)->required();
  bench_cmd->add_option("--bpp", bpp);
  bench_cmd->add_option("--random-decoder", random_decoder);

  // steganalyze
  auto* sa_cmd = app.add_subcommand("steganalyze", "Train or apply the CNN detector");
  std::string detector_path;
  int det_epochs = 10;
  sa_cmd->add_option("--checkpoint", ckpt, "LISO checkpoint used to make stego images")->required();
  sa_cmd->add_option("--data-dir", data_dir)->required();
  sa_cmd->add_option("--detector", detector_path, "Detector checkpoint (written when training)")->required();
  sa_cmd->add_option("--count", count);
  sa_cmd->add_option("--size", size);
  sa_cmd->add_option("--epochs", det_epochs);
  sa_cmd->add_option("--defend", defend_path, "Re-encode against this detector and report accuracy");
  bool sa_eval_only = false;
  sa_cmd->add_flag("--eval-only", sa_eval_only, "Only report accuracy of an existing detector");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic PNG dataset");
  int synth_count = 250, synth_size = 64;
  synth_cmd->add_option("--out-dir", out_dir)->required();
  synth_cmd->add_option("--count", synth_count);
  synth_cmd->add_option("--size", synth_size);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) {
      TrainConfig cfg;
      if (!config_path.empty()) cfg = load_config(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos, ErrorCode::ConfigError, "--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
      }
      if (app.get_option("--seed")->count()) cfg.seed = common.seed;
      cfg.validate();
      if (cfg.checkpoint.empty()) cfg.checkpoint = "liso.ckpt";
      const auto images = load_training_images(cfg);
      train(images, cfg, [](const TrainLogRow& r) {
        std::cerr << "update " << r.update << " loss " << r.loss << " error " << r.error_rate << '\n';
      });
      std::cout << cfg.checkpoint << '\n';
      return kOk;
    }

    if (*enc_cmd) {
      ParameterArchive a = load_checkpoint(ckpt);
      if (bpp == 0) bpp = a.config.bpp;
      require(bpp == a.config.bpp, ErrorCode::PayloadMismatch,
              "--bpp " + std::to_string(bpp) + " but checkpoint has " + std::to_string(a.config.bpp));
      const Image cover = load_image(cover_path);
      const MessageTensor m = pack_message(read_bytes(message_path), cover.dim(2), cover.dim(3), bpp);
      OptimizeConfig oc;
      oc.eta = eta;
      oc.max_iters = max_iters;
      oc.lambda = lambda;
      oc.tau = tau;
      if (jpeg_quality > 0) {
        oc.jpeg.enabled = true;
        oc.jpeg.quality = jpeg_quality;
      }
      std::optional<ParameterArchive> det;
      if (!defend_path.empty()) det = load_checkpoint(defend_path);
      const auto t0 = std::chrono::steady_clock::now();
      const OptimizeResult r = liso_refine_lbfgs(cover, m, a, oc, refine, det ? &*det : nullptr);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (oc.jpeg.enabled) save_jpeg(r.stego, out_path, jpeg_quality);
      else save_png(r.stego, out_path);
      const Image received = load_image(out_path);
      const double err = error_rate(decode_bits(nets::decoder_forward(a, received)), m);
      const Image qc = quantize(cover);
      std::cout << err << ' ' << format_db(psnr(qc, received)) << ' ' << ssim(qc, received) << ' ' << r.iterations
                << ' ' << secs << '\n';
      return kOk;
    }

    if (*dec_cmd) {
      ParameterArchive a = load_checkpoint(ckpt);
      const Image x = load_image(stego_path);
      write_bytes(out_path, unpack_message(decode_bits(nets::decoder_forward(a, x))));
      return kOk;
    }

    if (*eval_cmd || *bench_cmd) {
      const auto methods = parse_methods(methods_arg);
      ParameterArchive a = load_checkpoint(ckpt);
      if (bpp == 0) bpp = a.config.bpp;
      if (random_decoder) randomize_decoder(a, *random_decoder);
      const auto files = validation_images(data_dir, count);
      EvalConfig ec;
      ec.seed = common.seed;
      ec.jobs = common.jobs;
      ec.size = size;
      ec.out_dir = out_dir.empty() ? fs::temp_directory_path() / "liso_eval" : fs::path(out_dir);
      if (*eval_cmd) {
        ec.liso.eta = eta;
        ec.liso.max_iters = max_iters;
        ec.refine_steps = refine > 0 ? refine : ec.refine_steps;
        if (jpeg_quality > 0) {
          ec.liso.jpeg = {jpeg_quality, true};
          ec.pgd.jpeg = ec.lbfgs.jpeg = ec.liso.jpeg;
        }
        const Report rep = evaluate(files, a, bpp, ec, methods);
        rep.write_table(std::cout);
        if (!report_path.empty()) {
          std::ofstream os(report_path);
          require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + report_path);
          rep.write_csv(os);
        }
        return kOk;
      }
      // bench: full budget for everyone, no early stop, per-image traces
      ec.write_traces = true;
      ec.liso.max_iters = iters;
      ec.liso.patience = iters;
      ec.liso.stop_on_zero = false;
      ec.pgd.steps = iters;
      ec.pgd.stop_on_zero = false;
      ec.lbfgs.max_steps = iters;
      ec.lbfgs.stop_on_zero = false;
      const Report rep = evaluate(files, a, bpp, ec, methods);
      std::ofstream os(ec.out_dir / "mean_curve.csv");
      require(static_cast<bool>(os), ErrorCode::IoError, "cannot write mean_curve.csv");
      os << "iteration";
      for (Method m : methods) os << ',' << to_string(m);
      os << '\n';
      for (int t = 0; t <= iters; ++t) {
        os << t;
        for (Method m : methods) {
          double s = 0.0;
          std::size_t n = 0;
          for (const auto& r : rep.records)
            if (r.method == m && !r.trace.empty()) {
              s += r.trace.error_at(t);
              ++n;
            }
          os << ',' << (n ? s / static_cast<double>(n) : 0.0);
        }
        os << '\n';
      }
      rep.write_table(std::cout);
      return kOk;
    }

    if (*sa_cmd) {
      ParameterArchive a = load_checkpoint(ckpt);
      const auto files = validation_images(data_dir, count);
      std::vector<Image> covers, stegos;
      OptimizeConfig oc;
      for (std::size_t i = 0; i < files.size(); ++i) {
        Image c = load_image(files[i]);
        if (size > 0) c = fit_square(c, size);
        const auto m = sample_random_message(c.dim(2), c.dim(3), a.config.bpp, common.seed + i);
        stegos.push_back(liso_encode(c, m, a, oc).stego);
        covers.push_back(quantize(c));
      }
      ParameterArchive det;
      if (sa_eval_only) {
        det = load_checkpoint(detector_path);
      } else {
        const std::size_t half = covers.size() / 2;
        require(half >= 1, ErrorCode::EmptyDataset, "need at least two images");
        DetectorTrainConfig dc;
        dc.epochs = det_epochs;
        dc.seed = common.seed;
        det = train_detector({covers.begin(), covers.begin() + half}, {stegos.begin(), stegos.begin() + half}, dc);
        save_checkpoint(det, detector_path);
        covers.erase(covers.begin(), covers.begin() + half);
        stegos.erase(stegos.begin(), stegos.begin() + half);
      }
      std::cout << "accuracy " << detection_accuracy(det, covers, stegos) << '\n';
      if (!defend_path.empty() || sa_eval_only) {
        ParameterArchive attack = defend_path.empty() ? det : load_checkpoint(defend_path);
        std::vector<Image> defended;
        double err = 0.0;
        for (std::size_t i = 0; i < covers.size(); ++i) {
          const auto m = sample_random_message(covers[i].dim(2), covers[i].dim(3), a.config.bpp, 7777 + i);
          const auto r = liso_encode(covers[i], m, a, oc, &attack);
          err += r.error_rate;
          defended.push_back(r.stego);
        }
        std::cout << "defended_accuracy " << detection_accuracy(det, covers, defended) << " defended_error "
                  << err / static_cast<double>(covers.size()) << '\n';
      }
      return kOk;
    }

    if (*synth_cmd) {
      write_synthetic_dataset(out_dir, synth_count, synth_size, common.seed);
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}

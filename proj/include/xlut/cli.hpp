#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xlut/image_io.hpp"
#include "xlut/nn/checkpoint.hpp"
#include "xlut/nn/gradcheck.hpp"
#include "xlut/objective.hpp"
#include "xlut/oracle_fit.hpp"
#include "xlut/param_maps_io.hpp"
#include "xlut/synth.hpp"
#include "xlut/trainer.hpp"

namespace xlut::cli {

/// Parses "WxH".
inline std::pair<int, int> parse_size(const std::string& text) {
  static const std::regex re(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw InvariantError("size must look like WxH, got '" + text + "'");
  return {std::stoi(m[1]), std::stoi(m[2])};
}

inline void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_regular_file(p)) throw IoError(std::string(what) + " '" + p.string() + "' does not exist");
}

/// Hook for `serve`, which needs the HTTP stack; the primary binary
/// installs it so this header stays free of socket code.
using ServeFn = std::function<int(int port, const std::string& host, const std::optional<std::string>& ckpt,
                                  const std::string& data, std::ostream& out)>;

/// Entry point shared by the binary and the tests. Returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const ServeFn& serve = {}) {
  CLI::App app{"Per-pixel LUT parameter maps for X-ray brightness/contrast enhancement"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  int count = 0, downscale = 8;
  std::string size = "64x64", out_dir;
  std::uint64_t seed = 0;
  synth->add_option("--count", count, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image size WxH")->required();
  synth->add_option("--downscale", downscale, "Map downscale factor")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Dataset seed")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a parameter-map predictor");
  std::string data_dir, val_dir, ckpt_path, history_path;
  TrainConfig tc;
  bool no_augment = false;
  train_cmd->add_option("--data", data_dir, "Training dataset directory")->required();
  train_cmd->add_option("--val", val_dir, "Validation dataset directory")->required();
  train_cmd->add_option("--downscale", tc.downscale, "Map downscale factor")->required()->check(CLI::PositiveNumber);
  train_cmd->add_option("--levels", tc.levels, "Resolution levels")->check(CLI::Range(2, 8));
  train_cmd->add_option("--features", tc.features, "Feature channels")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tc.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", tc.epochs_max, "Maximum epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--patience", tc.patience, "Early-stopping patience (epochs)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tc.seed, "Training seed");
  train_cmd->add_option("--ckpt", ckpt_path, "Output checkpoint")->required();
  train_cmd->add_option("--history", history_path, "Write the loss history here");
  train_cmd->add_flag("--no-augment", no_augment, "Disable mirror/rotation/shear augmentation");

  // enhance
  auto* enhance_cmd = app.add_subcommand("enhance", "Run the full model pipeline on one image");
  std::string input_path, output_path, maps_out;
  enhance_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  enhance_cmd->add_option("--input", input_path, "Input PGM")->required();
  enhance_cmd->add_option("--out", output_path, "Output PGM")->required();
  enhance_cmd->add_option("--maps-out", maps_out, "Also write the predicted maps");

  // remap
  auto* remap_cmd = app.add_subcommand("remap", "Apply a maps file to an image");
  std::string maps_path;
  remap_cmd->add_option("--input", input_path, "Input PGM")->required();
  remap_cmd->add_option("--maps", maps_path, "XLUTMAPS file")->required();
  remap_cmd->add_option("--out", output_path, "Output PGM")->required();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Recover LUT parameters from an (input, target) pair");
  std::string target_path, mode;
  int tile = 0;
  fit_cmd->add_option("--input", input_path, "Input PGM")->required();
  fit_cmd->add_option("--target", target_path, "Target PGM")->required();
  fit_cmd->add_option("--mode", mode, "global or tiles")->required()->check(CLI::IsMember({"global", "tiles"}));
  fit_cmd->add_option("--tile", tile, "Tile size (tiles mode); map downscale (global mode, default 8)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--out", output_path, "Output XLUTMAPS file")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint (or a baseline) on a dataset");
  std::string report_path;
  bool baseline = false, identity = false;
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint");
  eval_cmd->add_option("--data", data_dir, "Test dataset directory")->required();
  eval_cmd->add_option("--report", report_path, "Report file")->required();
  eval_cmd->add_flag("--baseline-global", baseline, "Also report the per-image global-window baseline");
  eval_cmd->add_flag("--identity", identity, "Also report the identity baseline");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
  nn::GradCheckOptions gopt;
  grad_cmd->add_option("--seed", seed, "Model and sample seed")->required();
  grad_cmd->add_option("--step", gopt.step, "Central-difference step")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--coordinates", gopt.min_coordinates, "Minimum sampled coordinates")->check(CLI::PositiveNumber);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Annotation and preview HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1";
  serve_cmd->add_option("--port", port, "TCP port")->required()->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--ckpt", ckpt_path, "Checkpoint for /enhance");
  serve_cmd->add_option("--data", data_dir, "Store directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth) {
      const auto [w, h] = parse_size(size);
      const auto samples = make_dataset(seed, count, w, h, downscale);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        std::ostringstream name;
        name << "sample-" << std::setw(4) << std::setfill('0') << i;
        write_sample(samples[i], std::filesystem::path(out_dir) / name.str());
      }
      out << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    } else if (*train_cmd) {
      tc.augment.enabled = !no_augment;
      const auto train_set = read_dataset(data_dir);
      const auto val_set = read_dataset(val_dir);
      const TrainResult res = train(tc, train_set, val_set, [&](const HistoryRow& r) {
        out << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << "\n";
        return true;
      });
      nn::save_checkpoint(res.best, ckpt_path);
      if (!history_path.empty()) write_file_atomic(history_path, format_history(res.history));
      out << "best epoch " << res.best_epoch << " val " << res.best_val.total << "; checkpoint " << ckpt_path << "\n";
    } else if (*enhance_cmd) {
      require_file(ckpt_path, "checkpoint");
      require_file(input_path, "input");
      const nn::Model model = nn::model_from_checkpoint(nn::load_checkpoint(ckpt_path));
      const Enhanced e = enhance(model, read_pgm(input_path));
      write_pgm(e.image, output_path);
      if (!maps_out.empty()) write_maps(e.maps, maps_out);
    } else if (*remap_cmd) {
      require_file(input_path, "input");
      require_file(maps_path, "maps");
      write_pgm(apply_maps(read_pgm(input_path), read_maps(maps_path)), output_path);
    } else if (*fit_cmd) {
      require_file(input_path, "input");
      require_file(target_path, "target");
      const Image16 in = read_pgm(input_path);
      const Image16 tgt = read_pgm(target_path);
      const GlobalFit g = fit_global(in, tgt);
      out << std::setprecision(9) << "wc " << g.params.wc << " ww " << g.params.ww << " residual " << g.residual << "\n";
      if (mode == "tiles") {
        if (tile == 0) throw InvariantError("fit --mode tiles requires --tile");
        write_maps(fit_local_tiles(in, tgt, g.params, tile), output_path);
      } else {
        const int s = tile == 0 ? 8 : tile;
        write_maps(ParamMaps::constant(map_extent(in.width(), s), map_extent(in.height(), s), s,
                                       {1.0, 0.0, g.params.wc, g.params.ww}),
                   output_path);
      }
    } else if (*eval_cmd) {
      if (ckpt_path.empty() && !baseline && !identity) {
        throw InvariantError("eval needs --ckpt, --baseline-global or --identity");
      }
      const auto test_set = read_dataset(data_dir);
      std::string text;
      if (!ckpt_path.empty()) {
        require_file(ckpt_path, "checkpoint");
        const EvalReport r = evaluate(nn::load_checkpoint(ckpt_path), test_set,
                                      std::filesystem::path(ckpt_path).stem().string());
        out << "model mean PSNR " << r.mean_psnr_db << " dB, SSIM " << r.mean_ssim << "\n";
        text += format_report(r);
      }
      if (baseline) {
        const EvalReport r = baseline_global(test_set);
        out << "baseline_global mean PSNR " << r.mean_psnr_db << " dB, SSIM " << r.mean_ssim << "\n";
        text += format_report(r);
      }
      if (identity) {
        const EvalReport r = identity_baseline(test_set);
        out << "identity mean PSNR " << r.mean_psnr_db << " dB, SSIM " << r.mean_ssim << "\n";
        text += format_report(r);
      }
      write_file_atomic(report_path, text);
    } else if (*grad_cmd) {
      const nn::GradCheckResult r = nn::check_model_gradients(seed, gopt);
      out << std::setprecision(6) << "max relative error " << r.max_rel_error << " over " << r.checked
          << " coordinates (worst " << r.worst << ")\n";
      return r.max_rel_error < 1e-3 ? 0 : 1;
    } else if (*serve_cmd) {
      if (!serve) throw InvariantError("serve is not available in this build");
      std::optional<std::string> ck;
      if (!ckpt_path.empty()) {
        require_file(ckpt_path, "checkpoint");
        ck = ckpt_path;
      }
      return serve(port, host, ck, data_dir, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace xlut::cli

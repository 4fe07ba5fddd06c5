#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cstn/config.hpp"
#include "cstn/data_io.hpp"
#include "cstn/detector.hpp"
#include "cstn/errors.hpp"
#include "cstn/losses.hpp"
#include "cstn/metrics.hpp"
#include "cstn/model.hpp"
#include "cstn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

bool g_verbose = false;

void info(const std::string& msg) {
  if (g_verbose) std::cerr << "[cstn] " << msg << "\n";
}

// Declared outputs are removed again if the command fails part-way.
class ArtifactGuard {
 public:
  std::string declare(const std::string& path) {
    paths_.push_back(path);
    return path;
  }
  void commit() { committed_ = true; }
  ~ArtifactGuard() {
    if (committed_) return;
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::vector<std::string> paths_;
  bool committed_ = false;
};

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "key=value configuration file");
  cmd->add_option("--out", common.out_dir, "output directory")->required();
  cmd->add_option("--seed", common.seed, "root random seed (overrides the config file)")
      ->each([&common](const std::string&) { common.seed_given = true; });
  cmd->add_option("--workers", common.workers, "worker threads for metric sweeps")->default_val(1);
  cmd->add_flag("--verbose", g_verbose, "log progress to stderr");
}

cstn::RunConfig resolve_config(const CommonOptions& common) {
  cstn::RunConfig cfg;
  if (!common.config_path.empty()) cfg = cstn::load_run_config(common.config_path);
  if (common.seed_given) cfg.train.seed = common.seed;
  cfg.validate();
  return cfg;
}

std::string out_file(const CommonOptions& common, const std::string& name) {
  fs::create_directories(common.out_dir);
  return (fs::path(common.out_dir) / name).string();
}

cstn::Tensor load_normalized(const std::string& path, const cstn::RunConfig& cfg) {
  cstn::Tensor img = cstn::load_raster(path);
  if (cfg.resample) img = cstn::resample_bilinear(img, cfg.resample_height, cfg.resample_width);
  return cstn::normalize(img);
}

cstn::Tensor to_visual(const cstn::Tensor& di) {
  cstn::Tensor vis({di.dim(0), di.dim(1), 1});
  const double lo = di.min_value(), hi = di.max_value();
  const double inv = hi > lo ? 1.0 / (hi - lo) : 0.0;
  for (std::size_t i = 0; i < di.size(); ++i) vis[i] = (di[i] - lo) * inv;
  return vis;
}

void write_curve_csv(const std::string& path, const std::vector<cstn::CurvePoint>& points) {
  std::ofstream out(path);
  if (!out) throw cstn::IoError("cannot open '" + path + "' for writing");
  out << "threshold,x,y\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", p.threshold, p.x, p.y);
    out << buf;
  }
}

// Deterministic parallel map: per-index writes, no shared accumulation.
cstn::Tensor extract_features_parallel(const std::vector<cstn::Tensor>& tiles, const std::string& extractor,
                                       int workers) {
  if (workers <= 1 || tiles.size() < 2) return cstn::extract_features(tiles, extractor);
  const cstn::FeatureExtractorFn fn = cstn::FeatureExtractorRegistry::instance().get(extractor);
  std::vector<std::vector<double>> rows(tiles.size());
  std::vector<std::thread> pool;
  std::size_t next = 0;
  const std::size_t chunk = (tiles.size() + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
  for (int w = 0; w < workers && next < tiles.size(); ++w) {
    const std::size_t begin = next;
    const std::size_t end = std::min(tiles.size(), begin + chunk);
    next = end;
    pool.emplace_back([&tiles, &rows, &fn, begin, end]() {
      for (std::size_t i = begin; i < end; ++i) rows[i] = fn(tiles[i]);
    });
  }
  for (auto& t : pool) t.join();
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  cstn::Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != d) {
      throw cstn::ValidationError("feature extraction produced inconsistent dimensions");
    }
    for (int j = 0; j < d; ++j) {
      out[static_cast<std::size_t>(i) * d + j] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return out;
}

int run_synth(const CommonOptions& common, int size, int height, int width, double change, int channels) {
  cstn::RunConfig cfg = resolve_config(common);
  const int h = height > 0 ? height : size;
  const int w = width > 0 ? width : size;
  cstn::SensorProfiles profiles;
  profiles.channels_x = channels;
  info("generating synthetic scene " + std::to_string(h) + "x" + std::to_string(w));
  const cstn::SyntheticScene scene = cstn::generate_synthetic_pair(cfg.train.seed, h, w, change, profiles);

  ArtifactGuard guard;
  fs::create_directories(common.out_dir);
  guard.declare((fs::path(common.out_dir) / "x.raw").string());
  guard.declare((fs::path(common.out_dir) / "y.raw").string());
  guard.declare((fs::path(common.out_dir) / "gt.png").string());
  guard.declare((fs::path(common.out_dir) / "meta.json").string());
  cstn::save_scene(common.out_dir, scene);
  guard.commit();
  std::printf("scene written to %s (achieved change fraction %.4f)\n", common.out_dir.c_str(),
              scene.achieved_fraction);
  return kExitOk;
}

int run_train(const CommonOptions& common, const std::string& path_x, const std::string& path_y,
              const std::vector<std::string>& disabled) {
  cstn::RunConfig cfg = resolve_config(common);
  for (const std::string& name : disabled) {
    if (name == "recon") cfg.train.losses.recon = false;
    else if (name == "trans") cfg.train.losses.trans = false;
    else if (name == "cyc") cfg.train.losses.cyc = false;
    else if (name == "align") cfg.train.losses.align = false;
    else throw cstn::ConfigError("--disable: unknown loss component '" + name + "' (recon|trans|cyc|align)");
  }

  const cstn::Tensor ix = load_normalized(path_x, cfg);
  const cstn::Tensor iy = load_normalized(path_y, cfg);
  info("training on " + std::to_string(ix.dim(0)) + "x" + std::to_string(ix.dim(1)) + " pair");
  const cstn::FitResult result = cstn::fit(ix, iy, cfg.arch, cfg.train);

  ArtifactGuard guard;
  const std::string ckpt = guard.declare(out_file(common, "model.ckpt"));
  const std::string csv = guard.declare(out_file(common, "loss_history.csv"));
  const std::string pc = guard.declare(out_file(common, "pc.png"));
  cstn::save_model(result.params, ckpt);
  cstn::write_loss_history_csv(csv, result.history);
  cstn::save_mask_png(pc, result.change_mask);
  guard.commit();
  if (!result.history.empty()) {
    std::printf("final loss %.6f over %zu epochs\n", result.history.back().losses.total, result.history.size());
  }
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return kExitOk;
}

int run_detect(const CommonOptions& common, const std::string& checkpoint, const std::string& path_x,
               const std::string& path_y, bool no_filter, double sigma, int kernel) {
  cstn::RunConfig cfg = resolve_config(common);
  if (no_filter) cfg.filter.enabled = false;
  if (sigma > 0) cfg.filter.sigma = sigma;
  if (kernel > 0) cfg.filter.kernel_size = kernel;
  cfg.filter.validate();

  const cstn::ModelParameters params = cstn::load_model(checkpoint);
  const cstn::Tensor ix = load_normalized(path_x, cfg);
  const cstn::Tensor iy = load_normalized(path_y, cfg);
  info("running change detection");
  const cstn::DetectionResult result = cstn::detect_changes(params, ix, iy, cfg.filter);

  ArtifactGuard guard;
  const std::string di_raw = guard.declare(out_file(common, "di.raw"));
  const std::string di_png = guard.declare(out_file(common, "di.png"));
  const std::string cm_png = guard.declare(out_file(common, "cm.png"));
  cstn::save_difference_image(di_raw, result.di);
  cstn::save_image_png(di_png, to_visual(result.di));
  cstn::save_mask_png(cm_png, result.cm);
  guard.commit();
  std::printf("threshold T=%.9g%s\n", result.threshold, result.degenerate ? " (degenerate constant input)" : "");
  return kExitOk;
}

int run_translate(const CommonOptions& common, const std::string& checkpoint, const std::string& path_x,
                  const std::string& path_y, bool cycle) {
  cstn::RunConfig cfg = resolve_config(common);
  const cstn::ModelParameters params = cstn::load_model(checkpoint);
  const cstn::Tensor ix = load_normalized(path_x, cfg);
  const cstn::Tensor iy = load_normalized(path_y, cfg);
  if (ix.dim(0) != iy.dim(0) || ix.dim(1) != iy.dim(1)) {
    throw cstn::ShapeError("translate: images must share spatial dims");
  }

  info("translating both directions");
  const cstn::Tensor content_x = cstn::infer_content_code(params, ix, cstn::Domain::X);
  const cstn::Tensor content_y = cstn::infer_content_code(params, iy, cstn::Domain::Y);
  const cstn::Tensor style_x = cstn::infer_style_code(params, ix, cstn::Domain::X);
  const cstn::Tensor style_y = cstn::infer_style_code(params, iy, cstn::Domain::Y);
  const cstn::Tensor into_x = cstn::infer_decode(params, content_y, style_x, cstn::Domain::X);
  const cstn::Tensor into_y = cstn::infer_decode(params, content_x, style_y, cstn::Domain::Y);

  ArtifactGuard guard;
  const std::string xy_raw = guard.declare(out_file(common, "x_to_y.raw"));
  const std::string yx_raw = guard.declare(out_file(common, "y_to_x.raw"));
  cstn::save_raster_raw(xy_raw, into_y);
  cstn::save_raster_raw(yx_raw, into_x);
  const auto maybe_png = [&](const std::string& name, const cstn::Tensor& img) {
    if (img.dim(2) == 1 || img.dim(2) == 3) {
      cstn::save_image_png(guard.declare(out_file(common, name)), img);
    }
  };
  maybe_png("x_to_y.png", into_y);
  maybe_png("y_to_x.png", into_x);

  if (cycle) {
    const cstn::Tensor content_x_rec = cstn::infer_content_code(params, into_y, cstn::Domain::Y);
    const cstn::Tensor content_y_rec = cstn::infer_content_code(params, into_x, cstn::Domain::X);
    const cstn::Tensor style_x_rec = cstn::infer_style_code(params, into_x, cstn::Domain::X);
    const cstn::Tensor style_y_rec = cstn::infer_style_code(params, into_y, cstn::Domain::Y);
    const cstn::Tensor cycle_x = cstn::infer_decode(params, content_x_rec, style_x_rec, cstn::Domain::X);
    const cstn::Tensor cycle_y = cstn::infer_decode(params, content_y_rec, style_y_rec, cstn::Domain::Y);
    cstn::save_raster_raw(guard.declare(out_file(common, "x_cycle.raw")), cycle_x);
    cstn::save_raster_raw(guard.declare(out_file(common, "y_cycle.raw")), cycle_y);
  }
  guard.commit();
  std::printf("translated rasters written to %s\n", common.out_dir.c_str());
  return kExitOk;
}

int run_evaluate(const CommonOptions& common, const std::string& di_path, const std::string& cm_path,
                 const std::string& gt_path, const std::string& real_path, const std::string& trans_path,
                 const std::string& counts_arg) {
  cstn::RunConfig cfg = resolve_config(common);
  json report;
  ArtifactGuard guard;

  if (!counts_arg.empty()) {
    std::vector<long long> values;
    std::string token;
    std::stringstream ss(counts_arg);
    while (std::getline(ss, token, ',')) {
      try {
        values.push_back(std::stoll(token));
      } catch (const std::exception&) {
        throw cstn::ValidationError("--counts expects integers fp,fn,n[,tp]");
      }
    }
    if (values.size() != 3 && values.size() != 4) {
      throw cstn::ValidationError("--counts expects fp,fn,n[,tp]");
    }
    cstn::ConfusionCounts c;
    c.fp = values[0];
    c.fn = values[1];
    const long long n = values[2];
    c.tp = values.size() == 4 ? values[3] : 0;
    c.tn = n - c.fp - c.fn - c.tp;
    if (c.tn < 0) throw cstn::ValidationError("--counts: counts exceed the pixel total");
    const cstn::ClassificationMetrics m = cstn::classification_metrics(c);
    report["counts"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
    report["classification"] = {{"oe", m.oe}, {"oa", m.oa}};
    if (values.size() == 4) {
      report["classification"]["f1"] = m.f1;
      report["classification"]["kc"] = m.kc;
    }
    std::printf("OE %lld OA %.4f\n", static_cast<long long>(m.oe), m.oa);
  }

  cstn::Tensor gt;
  if (!gt_path.empty()) gt = cstn::load_mask_png(gt_path);

  if (!cm_path.empty()) {
    if (gt.empty()) throw cstn::ValidationError("--cm requires --gt");
    const cstn::Tensor cm = cstn::load_mask_png(cm_path);
    const cstn::ConfusionCounts c = cstn::confusion_counts(cm, gt);
    const cstn::ClassificationMetrics m = cstn::classification_metrics(c);
    report["counts"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
    report["classification"] = {{"oe", m.oe},
                                {"oa", m.oa},
                                {"f1", m.f1},
                                {"kc", m.kc},
                                {"gt_empty", m.gt_empty},
                                {"chance_degenerate", m.chance_degenerate}};
    std::printf("FP %lld FN %lld OE %lld OA %.4f F1 %.4f KC %.4f\n", static_cast<long long>(c.fp),
                static_cast<long long>(c.fn), static_cast<long long>(m.oe), m.oa, m.f1, m.kc);
  }

  if (!di_path.empty()) {
    if (gt.empty()) throw cstn::ValidationError("--di requires --gt");
    const cstn::Tensor di = cstn::load_difference_image(di_path);
    const cstn::RocPrResult curves = cstn::roc_pr_curves(di, gt);
    report["di"] = {{"auc", curves.auc}, {"ap", curves.ap}};
    write_curve_csv(guard.declare(out_file(common, "roc.csv")), curves.roc);
    write_curve_csv(guard.declare(out_file(common, "pr.csv")), curves.pr);
    std::printf("AUC %.4f AP %.4f\n", curves.auc, curves.ap);
  }

  if (!real_path.empty() || !trans_path.empty()) {
    if (real_path.empty() || trans_path.empty()) {
      throw cstn::ValidationError("translation quality needs both --real and --trans");
    }
    const cstn::Tensor real = cstn::load_raster(real_path);
    const cstn::Tensor trans = cstn::load_raster(trans_path);
    const auto real_tiles = cstn::tile_image(real, cfg.metrics.eval_tile, cfg.metrics.eval_tile_stride);
    const auto trans_tiles = cstn::tile_image(trans, cfg.metrics.eval_tile, cfg.metrics.eval_tile_stride);
    const cstn::Tensor f_real = extract_features_parallel(real_tiles, cfg.metrics.feature_extractor, common.workers);
    const cstn::Tensor f_trans =
        extract_features_parallel(trans_tiles, cfg.metrics.feature_extractor, common.workers);
    const double fid_value = cstn::fid(f_real, f_trans);
    const double kid_value = cstn::kid(f_real, f_trans, cfg.metrics.kid_unbiased);
    report["translation"] = {{"fid", fid_value}, {"kid", kid_value}};
    std::printf("FID %.6g KID %.6g\n", fid_value, kid_value);
  }

  if (report.empty()) {
    throw cstn::ValidationError("evaluate: nothing to do (pass --counts, --cm/--gt, --di/--gt or --real/--trans)");
  }
  const std::string report_path = guard.declare(out_file(common, "report.json"));
  std::ofstream out(report_path);
  if (!out) throw cstn::IoError("cannot write '" + report_path + "'");
  out << report.dump(2) << "\n";
  out.close();
  guard.commit();
  std::printf("report: %s\n", report_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Large tensors churn quickly; keep freed blocks mapped for reuse.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"content/style separating multimodal change detection"};
  app.require_subcommand(1);

  CommonOptions synth_common, train_common, detect_common, translate_common, evaluate_common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multimodal scene with ground truth");
  int synth_size = 256, synth_height = 0, synth_width = 0, synth_channels = 3;
  double synth_change = 0.1;
  add_common(synth, synth_common);
  synth->add_option("--size", synth_size, "square scene size")->check(CLI::PositiveNumber);
  synth->add_option("--height", synth_height, "scene height (overrides --size)");
  synth->add_option("--width", synth_width, "scene width (overrides --size)");
  synth->add_option("--change", synth_change, "target changed-pixel fraction in (0, 0.5)");
  synth->add_option("--channels", synth_channels, "bands of the smooth modality")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train a model on a co-registered pair");
  std::string train_x, train_y;
  std::vector<std::string> train_disable;
  add_common(train, train_common);
  train->add_option("--x", train_x, "pre-event raster")->required();
  train->add_option("--y", train_y, "post-event raster")->required();
  train->add_option("--disable", train_disable, "disable a loss component (recon|trans|cyc|align)");

  auto* detect = app.add_subcommand("detect", "produce a difference image and binary change map");
  std::string detect_ckpt, detect_x, detect_y;
  bool detect_no_filter = false;
  double detect_sigma = 0.0;
  int detect_kernel = 0;
  add_common(detect, detect_common);
  detect->add_option("--checkpoint", detect_ckpt, "trained model checkpoint")->required();
  detect->add_option("--x", detect_x, "pre-event raster")->required();
  detect->add_option("--y", detect_y, "post-event raster")->required();
  detect->add_flag("--no-filter", detect_no_filter, "skip the smoothing filter");
  detect->add_option("--sigma", detect_sigma, "filter standard deviation");
  detect->add_option("--kernel", detect_kernel, "odd filter kernel size");

  auto* translate = app.add_subcommand("translate", "export cross-domain translations");
  std::string translate_ckpt, translate_x, translate_y;
  bool translate_cycle = false;
  add_common(translate, translate_common);
  translate->add_option("--checkpoint", translate_ckpt, "trained model checkpoint")->required();
  translate->add_option("--x", translate_x, "pre-event raster")->required();
  translate->add_option("--y", translate_y, "post-event raster")->required();
  translate->add_flag("--cycle", translate_cycle, "also export round-trip reconstructions");

  auto* evaluate = app.add_subcommand("evaluate", "score detection and translation artifacts");
  std::string eval_di, eval_cm, eval_gt, eval_real, eval_trans, eval_counts;
  add_common(evaluate, evaluate_common);
  evaluate->add_option("--di", eval_di, "difference image (.raw)");
  evaluate->add_option("--cm", eval_cm, "change map (.png)");
  evaluate->add_option("--gt", eval_gt, "ground truth mask (.png)");
  evaluate->add_option("--real", eval_real, "reference raster for translation quality");
  evaluate->add_option("--trans", eval_trans, "translated raster for translation quality");
  evaluate->add_option("--counts", eval_counts, "direct confusion counts fp,fn,n[,tp]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return kExitOk;  // --help
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      return run_synth(synth_common, synth_size, synth_height, synth_width, synth_change, synth_channels);
    }
    if (train->parsed()) return run_train(train_common, train_x, train_y, train_disable);
    if (detect->parsed()) {
      return run_detect(detect_common, detect_ckpt, detect_x, detect_y, detect_no_filter, detect_sigma, detect_kernel);
    }
    if (translate->parsed()) {
      return run_translate(translate_common, translate_ckpt, translate_x, translate_y, translate_cycle);
    }
    if (evaluate->parsed()) {
      return run_evaluate(evaluate_common, eval_di, eval_cm, eval_gt, eval_real, eval_trans, eval_counts);
    }
  } catch (const cstn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cstn::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cstn::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cstn::GenerationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cstn::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const cstn::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const cstn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

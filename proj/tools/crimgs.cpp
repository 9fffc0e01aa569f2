// crimgs: generate blurry toy scenes, train, render and evaluate.
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "crimgs/crimgs.hpp"

namespace fs = std::filesystem;
using namespace crimgs;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
};

struct TrainOptions {
  std::string data;
  std::string out = "run";
  std::string resume;
  std::optional<std::size_t> iters, n_poses;
  std::optional<std::string> solver, model, precision;
  std::optional<double> rtol, atol;
  bool quiet = false;
};

struct ModelOptions {
  std::string checkpoint;
  std::string data;
  std::string out = "renders";
  std::string out_file;
  bool with_kernel = false;
  std::size_t image = 0;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "settings file (key = value lines)");
  app->add_option("--seed", o.seed, "random seed for generation and training (default 0)");
  app->add_option("--set", o.set, "override a setting, e.g. --set train.iterations=500");
}

RunConfig build_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  std::string extra;
  for (const auto& s : o.set) extra += s + "\n";
  if (o.seed) extra += "seed = " + std::to_string(*o.seed) + "\n";
  apply_config_text(cfg, extra, "command line");
  return cfg;
}

RunConfig config_from_checkpoint(const CheckpointData& c) {
  RunConfig cfg;
  apply_config_text(cfg, c.config_text, "checkpoint");
  return cfg;
}

Dataset dataset_for(const std::string& data, const RunConfig& cfg) {
  if (data.empty()) return generate_dataset(cfg.data, cfg.train.render);
  fs::path p = data;
  if (fs::is_directory(p)) p /= "manifest.json";
  return load_dataset(p);
}

int cmd_generate(const CommonOptions& co, const std::string& out) {
  const RunConfig cfg = build_config(co);
  const Dataset d = generate_dataset(cfg.data, cfg.train.render);
  const fs::path manifest = save_dataset(out, d);
  std::cout << "wrote " << d.train.size() << " training and " << d.test.size() << " test views to " << manifest.string()
            << "\n";
  return kOk;
}

int cmd_train(const CommonOptions& co, const TrainOptions& to) {
  RunConfig cfg = build_config(co);
  std::string extra;
  if (to.iters) extra += "train.iterations = " + std::to_string(*to.iters) + "\n";
  if (to.n_poses) extra += "train.n_poses = " + std::to_string(*to.n_poses) + "\n";
  if (to.solver) extra += "solver.method = " + *to.solver + "\n";
  if (to.model) extra += "train.model = " + *to.model + "\n";
  if (to.precision) extra += "train.precision = " + *to.precision + "\n";
  if (to.rtol) extra += "solver.rtol = " + std::to_string(*to.rtol) + "\n";
  if (to.atol) extra += "solver.atol = " + std::to_string(*to.atol) + "\n";
  apply_config_text(cfg, extra, "command line");
  cfg.train.validate();

  const Dataset data = dataset_for(to.data, cfg);
  const fs::path out = to.out;
  fs::create_directories(out);
  std::ofstream(out / "config.cfg") << ConfigSchema().dump(cfg);
  std::ofstream log(out / "metrics.jsonl", to.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write '" + (out / "metrics.jsonl").string() + "'");

  return selftest::with_precision(cfg.train.precision, [&](auto tag) {
    using Real = decltype(tag);
    Trainer<Real> trainer(data, cfg);
    if (!to.resume.empty()) trainer.load(to.resume);
    typename Trainer<Real>::RunOptions opt;
    opt.log = &log;
    opt.progress = to.quiet ? nullptr : &std::cout;
    opt.checkpoint = out / "checkpoint.ckpt";
    const auto s = trainer.run(opt);
    std::cout << "final sharp PSNR " << s.final.train_psnr << " dB (blurry inputs " << s.final.blur_psnr
              << " dB), test PSNR " << s.final.test_psnr << " dB, " << s.seconds << " s\n";
    std::cout << "checkpoint: " << opt.checkpoint.string() << "\n";
    return kOk;
  });
}

template <typename F>
int with_trainer(const ModelOptions& mo, F&& fn) {
  const CheckpointData ck = read_checkpoint(mo.checkpoint);
  const RunConfig cfg = config_from_checkpoint(ck);
  const Dataset data = dataset_for(mo.data, cfg);
  return selftest::with_precision(cfg.train.precision, [&](auto tag) {
    using Real = decltype(tag);
    Trainer<Real> trainer(data, cfg);
    trainer.restore(ck);
    return fn(trainer);
  });
}

int cmd_render(const ModelOptions& mo) {
  return with_trainer(mo, [&](auto& trainer) {
    const fs::path out = mo.out;
    fs::create_directories(out);
    const auto& data = trainer.dataset();
    std::size_t written = 0;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "train_%03zu_sharp.png", i);
      write_png(out / name, trainer.render_train_view(i));
      ++written;
      if (mo.with_kernel) {
        ad::NoGradGuard guard;
        const auto p = trainer.predict(i);
        for (std::size_t k = 0; k < p.frames.size(); ++k) {
          std::snprintf(name, sizeof name, "train_%03zu_frame_%02zu.png", i, k);
          write_png(out / name, p.frames[k]);
          ++written;
        }
        std::snprintf(name, sizeof name, "train_%03zu_blur.png", i);
        write_png(out / name, p.blur.image);
        ++written;
      }
    }
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "test_%03zu.png", i);
      write_png(out / name, trainer.render_sharp(data.test[i].pose));
      ++written;
    }
    std::cout << "wrote " << written << " images to " << out.string() << "\n";
    return int(kOk);
  });
}

int cmd_eval(const ModelOptions& mo) {
  return with_trainer(mo, [&](auto& trainer) {
    const std::string line = trainer.evaluate().json_line();
    const nlohmann::json metrics = nlohmann::json::parse(line);
    for (const auto& [key, value] : metrics.items()) {
      std::printf("%-16s %s\n", key.c_str(), value.dump().c_str());
    }
    const fs::path file = mo.out_file.empty() ? fs::path(mo.checkpoint).parent_path() / "eval.json" : fs::path(mo.out_file);
    std::ofstream f(file);
    if (!(f << line << "\n")) throw DataError("cannot write '" + file.string() + "'");
    std::cout << "wrote " << file.string() << "\n";
    return int(kOk);
  });
}

/// Rows of a [3, 4] or [4, 4] transform as a 4x4 homogeneous matrix.
template <typename Real>
nlohmann::json homogeneous(const ad::Tensor<Real>& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> row{0.0, 0.0, 0.0, 1.0};
    if (r < t.dim(0))
      for (std::size_t c = 0; c < 4; ++c) row[c] = static_cast<double>(t.data()[r * 4 + c]);
    rows.push_back(row);
  }
  return rows;
}

template <typename Real>
std::vector<double> values(const ad::Tensor<Real>& t) {
  return {t.data().begin(), t.data().end()};
}

int cmd_traj(const ModelOptions& mo) {
  return with_trainer(mo, [&](auto& trainer) {
    using Real = typename std::decay_t<decltype(trainer)>::Scalar;
    if (mo.image >= trainer.dataset().train.size()) throw DataError("--image is out of range");
    ad::NoGradGuard guard;
    const auto s = trainer.sample(mo.image);
    const auto times = sample_times<Real>(trainer.config().train.kernel.n_poses);
    const auto& kernel = trainer.kernel();
    std::vector<ad::Tensor<Real>> latents;
    if (!s.rigid.empty()) latents = kernel.latents(mo.image, times, true);
    nlohmann::json j;
    j["image"] = mo.image;
    j["samples"] = nlohmann::json::array();
    for (std::size_t k = 0; k < s.poses.size(); ++k) {
      nlohmann::json e;
      e["t"] = static_cast<double>(times[k]);
      e["pose"] = homogeneous(s.poses[k]);
      if (!s.rigid.empty()) {
        e["rigid"] = homogeneous(s.rigid[k]);
        const auto screw = kernel.decode_screw(latents[k]);
        e["screw"] = {{"axis", values(screw.axis)}, {"angle", values(screw.angle)[0]}, {"v", values(screw.v)}};
      }
      if (!s.deform.empty()) e["deform"] = homogeneous(s.deform[k]);
      j["samples"].push_back(e);
    }
    const std::string text = j.dump(2);
    std::cout << text << "\n";
    if (!mo.out_file.empty()) std::ofstream(mo.out_file) << text << "\n";
    return int(kOk);
  });
}

int cmd_settings(const CommonOptions& co) {
  const RunConfig cfg = build_config(co);
  const ConfigSchema schema;
  for (const auto& e : schema.entries())
    std::printf("%-26s = %-14s # %s\n", e.key.c_str(), e.get(cfg).c_str(), e.doc.c_str());
  return kOk;
}

int cmd_selftest(bool verbose) {
  std::vector<selftest::CheckResult> rs;
  rs.push_back(selftest::lie_suite());
  rs.push_back(selftest::ode_suite());
  rs.push_back(selftest::gradient_suite(verbose ? &std::cout : nullptr));
  rs.push_back(selftest::invariant_suite());
  bool ok = true;
  for (const auto& r : rs) {
    std::cout << r.line() << "\n";
    ok = ok && r.pass;
  }
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  selftest::retain_freed_memory();
  CLI::App app{"Continuous camera-motion deblurring with Gaussian splatting"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.footer("Settings not covered by a flag are set with --set key=value; 'crimgs settings' lists them with defaults.");
  CommonOptions co;
  TrainOptions to;
  ModelOptions mo;
  std::string gen_out = "data";
  bool verbose = false;

  auto* gen = app.add_subcommand("generate", "synthesize a blurry toy dataset");
  add_common(gen, co);
  gen->add_option("-o,--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "train a scene and blur kernel");
  add_common(train, co);
  train->add_option("-d,--data", to.data, "dataset directory or manifest (default: generate from the config)");
  train->add_option("-o,--out", to.out, "run directory for the log and checkpoint");
  train->add_option("--resume", to.resume, "continue from a checkpoint");
  const ConfigSchema schema;
  const RunConfig defaults;
  auto shortcut = [&](const std::string& text, const std::string& key) {
    for (const auto& e : schema.entries())
      if (e.key == key) return text + " (sets " + key + ", default " + e.get(defaults) + ")";
    return text;
  };
  train->add_option("--iters", to.iters, shortcut("optimisation steps", "train.iterations"));
  train->add_option("--n-poses", to.n_poses, shortcut("poses sampled along each exposure", "train.n_poses"));
  train->add_option("--solver", to.solver, shortcut("euler, rk4 or dopri5", "solver.method"));
  train->add_option("--rtol", to.rtol, shortcut("solver relative tolerance", "solver.rtol"));
  train->add_option("--atol", to.atol, shortcut("solver absolute tolerance", "solver.atol"));
  train->add_option("--model", to.model, shortcut("rigid, rigid_compositor or full", "train.model"));
  train->add_option("--precision", to.precision, shortcut("double or float", "train.precision"));
  train->add_flag("-q,--quiet", to.quiet, "no progress output");

  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", mo.checkpoint, "checkpoint file")->required();
    sub->add_option("-d,--data", mo.data, "dataset directory or manifest (default: regenerate from the config)");
  };
  auto* render = app.add_subcommand("render", "render sharp views from a checkpoint");
  add_model(render);
  render->add_option("-o,--out", mo.out, "output directory");
  render->add_flag("--with-kernel", mo.with_kernel, "also write the sub-frames and the composited blurry image of each training view");
  auto* eval = app.add_subcommand("eval", "print metrics of a checkpoint as JSON");
  add_model(eval);
  eval->add_option("-o,--output", mo.out_file, "metrics file (default: eval.json next to the checkpoint)");
  auto* traj = app.add_subcommand("traj", "print the learned camera trajectory of one image as JSON");
  add_model(traj);
  traj->add_option("--image", mo.image, "training image index");
  traj->add_option("-o,--output", mo.out_file, "also write the trajectory to this file");
  auto* settings = app.add_subcommand("settings", "list every setting with its value and meaning");
  add_common(settings, co);
  auto* self = app.add_subcommand("selftest", "run the numerical self-checks");
  self->add_flag("-v,--verbose", verbose, "list every gradient check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  try {
    if (*gen) return cmd_generate(co, gen_out);
    if (*train) return cmd_train(co, to);
    if (*render) return cmd_render(mo);
    if (*eval) return cmd_eval(mo);
    if (*traj) return cmd_traj(mo);
    if (*settings) return cmd_settings(co);
    if (*self) return cmd_selftest(verbose);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

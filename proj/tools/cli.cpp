#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dfi/error.hpp"
#include "dfi/fixtures.hpp"
#include "dfi/gradcheck.hpp"
#include "dfi/image_io.hpp"
#include "dfi/inpaint.hpp"
#include "dfi/kernels.hpp"
#include "dfi/manifest.hpp"
#include "dfi/reconstruct.hpp"

namespace dfi::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string weights;
  bool any_topology = false;
  int jobs = 1;
};

struct OptimizerOptions {
  double lambda = TvConfig{}.lambda;
  double tv_exponent = TvConfig{}.exponent;
  int max_iter = LbfgsConfig{}.max_iterations;
  double grad_tol = LbfgsConfig{}.gradient_tolerance;
  int history = LbfgsConfig{}.history;
  std::string init = "input";
  double init_noise = ReconstructionConfig{}.init_noise_stddev;
  std::uint64_t seed = 0;
  std::string trace;
};

void add_weights(CLI::App* cmd, Common& c) {
  cmd->add_option("--weights", c.weights, "DFIW weight file")->required();
  cmd->add_flag("--allow-any-topology", c.any_topology,
                "Accept weight files that are not the full VGG-19 stack (reduced test networks)");
}

void add_jobs(CLI::App* cmd, Common& c) {
  cmd->add_option("--jobs", c.jobs, "Worker thread cap")->check(CLI::PositiveNumber);
}

void add_optimizer(CLI::App* cmd, OptimizerOptions& o) {
  cmd->add_option("--lambda", o.lambda, "TV weight")->capture_default_str();
  cmd->add_option("--tv-exponent", o.tv_exponent, "TV exponent")->capture_default_str();
  cmd->add_option("--max-iter", o.max_iter, "L-BFGS iteration cap")->capture_default_str();
  cmd->add_option("--grad-tol", o.grad_tol, "Relative gradient-norm stop")->capture_default_str();
  cmd->add_option("--history", o.history, "L-BFGS memory")->capture_default_str();
  cmd->add_option("--init", o.init, "Initialisation")
      ->check(CLI::IsMember({"input", "input-plus-noise"}))
      ->capture_default_str();
  cmd->add_option("--init-noise", o.init_noise, "Noise stddev for input-plus-noise (RGB units)")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd->add_option("--trace", o.trace, "Write the optimizer trace as CSV");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::is_regular_file(path)) {
    throw UsageError(std::string(what) + " not found: " + path);
  }
}

Network open_network(const Common& c) {
  require_file(c.weights, "weights file");
  return load_weights(c.weights, c.any_topology ? TopologyCheck::any : TopologyCheck::vgg19);
}

ReconstructionConfig reconstruction_config(const OptimizerOptions& o, double beta) {
  ReconstructionConfig cfg;
  cfg.tv.lambda = o.lambda;
  cfg.tv.exponent = o.tv_exponent;
  cfg.lbfgs.max_iterations = o.max_iter;
  cfg.lbfgs.gradient_tolerance = o.grad_tol;
  cfg.lbfgs.history = o.history;
  cfg.strength_beta = beta;
  cfg.init = o.init == "input" ? InitMode::input : InitMode::input_plus_noise;
  cfg.init_noise_stddev = o.init_noise;
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

void record_optimizer(RunManifest& m, const ReconstructionConfig& cfg, const OptimizerOptions& o) {
  m.set("tv_lambda", cfg.tv.lambda);
  m.set("tv_exponent", cfg.tv.exponent);
  m.set("lbfgs_history", cfg.lbfgs.history);
  m.set("max_iterations", cfg.lbfgs.max_iterations);
  m.set("gradient_tolerance", cfg.lbfgs.gradient_tolerance);
  m.set("init", std::string(to_string(cfg.init)));
  if (cfg.init == InitMode::input_plus_noise) m.set("init_noise_stddev", cfg.init_noise_stddev);
  m.set("seed", cfg.seed);
  m.set("trace", o.trace);
}

void record_result(RunManifest& m, const LbfgsResult& r) {
  m.set("status", std::string(to_string(r.status)));
  m.set("iterations", r.iterations);
  m.set("evaluations", r.evaluations);
  m.set("final_objective", r.value);
}

void write_trace(const OptimizerOptions& o, const LbfgsResult& r) {
  if (o.trace.empty()) return;
  std::ofstream out(o.trace, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace " + o.trace);
  write_trace_csv(out, r.trace);
}

std::string manifest_path(const std::string& out) { return out + ".manifest"; }

// Records whose file is the same as any of `paths`.
Exclusions exclusions_for(const DatasetIndex& index, const std::vector<std::string>& paths) {
  Exclusions ex;
  for (const auto& r : index.records) {
    for (const auto& p : paths) {
      std::error_code ec;
      if (fs::equivalent(r.path, p, ec) && !ec) ex.insert(r.id);
    }
  }
  return ex;
}

std::string ids_to_string(const std::vector<std::uint32_t>& ids) {
  std::string s;
  for (std::uint32_t id : ids) s += (s.empty() ? "" : ",") + std::to_string(id);
  return s;
}

int cmd_build_index(const Common& c, const std::string& images, const std::string& attrs,
                    const std::string& out_path, std::ostream& out, std::ostream& err) {
  const Network net = open_network(c);
  std::optional<AttributeTable> table;
  if (!attrs.empty()) {
    require_file(attrs, "attribute file");
    table = load_attribute_csv(attrs);
  }
  const std::vector<fs::path> files = list_images(images);
  if (files.empty()) err << "warning: no PNG images in " << images << "; writing an empty index\n";
  set_compute_threads(1);
  const BuildIndexResult built = build_index(files, table ? &*table : nullptr, net, c.jobs);
  for (const auto& r : built.rejects) err << "warning: skipped " << r.path << ": " << r.reason << '\n';
  save_index(built.index, out_path);

  RunManifest m;
  m.set("command", "build-index");
  m.set("tool_version", kToolVersion);
  m.set("images", images);
  m.set("attrs", attrs);
  m.set("weights", c.weights);
  m.set("out", out_path);
  m.set("jobs", c.jobs);
  m.set("records", static_cast<std::uint64_t>(built.index.records.size()));
  m.set("rejected", static_cast<std::uint64_t>(built.rejects.size()));
  m.set("attributes", static_cast<std::uint64_t>(built.index.attribute_names.size()));
  m.save(manifest_path(out_path));
  out << "indexed " << built.index.records.size() << " images (" << built.rejects.size()
      << " skipped) -> " << out_path << '\n';
  return kOk;
}

struct TransformArgs {
  std::string input, index, target_attrs, out;
  std::vector<std::string> exclude;
  std::size_t k = kDefaultNeighbors;
  double beta = kDefaultStrength;
};

int cmd_transform(const Common& c, const TransformArgs& a, const OptimizerOptions& o,
                  std::ostream& out, std::ostream& err) {
  require_file(c.weights, "weights file");
  require_file(a.input, "input image");
  require_file(a.index, "index file");
  const Network net = open_network(c);
  const DatasetIndex index = load_index(a.index);
  const AttributeQuery query = parse_attribute_spec(a.target_attrs, index.attribute_names);
  const ReconstructionConfig cfg = reconstruction_config(o, a.beta);
  const Tensor x = read_png_rgb(a.input);
  std::vector<std::string> excluded = a.exclude;
  excluded.push_back(a.input);
  const Exclusions ex = exclusions_for(index, excluded);

  set_compute_threads(c.jobs);
  const TransformResult r = transform(x, index, query, a.k, cfg, net, ex);
  if (r.report.target_shortfall || r.report.source_shortfall) {
    err << "warning: K=" << a.k << " requested but only " << r.report.target_ids.size()
        << " target / " << r.report.source_ids.size() << " source neighbours available\n";
  }
  write_png_rgb(a.out, r.image);
  write_trace(o, r.optimization);

  RunManifest m;
  m.set("command", "transform");
  m.set("tool_version", kToolVersion);
  m.set("input", a.input);
  m.set("index", a.index);
  m.set("weights", c.weights);
  m.set("out", a.out);
  m.set("target_attrs", a.target_attrs);
  m.set("k", static_cast<std::uint64_t>(a.k));
  m.set("strength_beta", cfg.strength_beta);
  record_optimizer(m, cfg, o);
  m.set("jobs", c.jobs);
  m.set("working_size", std::to_string(r.report.working_shape.h) + "x" +
                            std::to_string(r.report.working_shape.w));
  m.set("excluded", ids_to_string({ex.begin(), ex.end()}));
  m.set("target_ids", ids_to_string(r.report.target_ids));
  m.set("source_ids", ids_to_string(r.report.source_ids));
  m.set("alpha", r.report.alpha);
  record_result(m, r.optimization);
  m.save(manifest_path(a.out));
  out << "wrote " << a.out << " (" << to_string(r.optimization.status) << ", "
      << r.optimization.iterations << " iterations)\n";
  return kOk;
}

struct InpaintArgs {
  std::string input, mask, index, out, preset = "faces";
  std::vector<std::string> exclude;
  std::size_t k = kDefaultNeighbors;
  std::optional<double> beta;
  bool composite = true;
  double fill = kDefaultMaskFill;
};

int cmd_inpaint(const Common& c, const InpaintArgs& a, const OptimizerOptions& o,
                std::ostream& out, std::ostream& err) {
  require_file(c.weights, "weights file");
  require_file(a.input, "input image");
  require_file(a.mask, "mask image");
  require_file(a.index, "index file");
  const Network net = open_network(c);
  const DatasetIndex index = load_index(a.index);
  const InpaintPreset preset = parse_inpaint_preset(a.preset);

  InpaintConfig cfg;
  cfg.reconstruction = reconstruction_config(o, a.beta.value_or(preset_strength(preset)));
  cfg.k = a.k;
  cfg.composite = a.composite;
  cfg.fill = static_cast<float>(a.fill);
  cfg.jobs = c.jobs;

  const Tensor x = read_png_rgb(a.input);
  const Mask mask = Mask::from_gray(read_png_gray(a.mask));
  std::vector<std::string> excluded = a.exclude;
  excluded.push_back(a.input);
  const Exclusions ex = exclusions_for(index, excluded);

  set_compute_threads(c.jobs);
  const InpaintResult r = inpaint(x, mask, index, cfg, net, ex);
  if (r.report.shortfall) {
    err << "warning: K=" << a.k << " requested but only " << r.report.neighbor_ids.size()
        << " neighbours available\n";
  }
  write_png_rgb(a.out, r.image);
  write_trace(o, r.optimization);

  RunManifest m;
  m.set("command", "inpaint");
  m.set("tool_version", kToolVersion);
  m.set("input", a.input);
  m.set("mask", a.mask);
  m.set("index", a.index);
  m.set("weights", c.weights);
  m.set("out", a.out);
  m.set("preset", std::string(to_string(preset)));
  m.set("k", static_cast<std::uint64_t>(cfg.k));
  m.set("strength_beta", cfg.reconstruction.strength_beta);
  m.set("composite", cfg.composite);
  m.set("mask_fill", static_cast<double>(cfg.fill));
  record_optimizer(m, cfg.reconstruction, o);
  m.set("jobs", c.jobs);
  m.set("working_size", std::to_string(r.report.working_shape.h) + "x" +
                            std::to_string(r.report.working_shape.w));
  m.set("excluded", ids_to_string({ex.begin(), ex.end()}));
  m.set("neighbor_ids", ids_to_string(r.report.neighbor_ids));
  m.set("alpha", r.report.alpha);
  record_result(m, r.optimization);
  m.save(manifest_path(a.out));
  out << "wrote " << a.out << " (" << to_string(r.optimization.status) << ", "
      << r.optimization.iterations << " iterations)\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault, std::ostream& out) {
  GradcheckConfig cfg;
  cfg.seed = seed;
  cfg.inject_fault = inject_fault;
  const GradcheckReport report = run_gradcheck(cfg);
  print_gradcheck(out, report);
  return report.passed() ? kOk : kRuntimeFailure;
}

Tensor synthetic_calibration(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 255.0);
  Tensor t({1, 3, kMinWorkingSide, kMinWorkingSide});
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

int cmd_init_weights(const std::string& out_path, std::uint64_t seed,
                     const std::string& calibration, bool normalize, std::ostream& out) {
  Network net = random_network(vgg19_topology(), seed);
  if (normalize) {
    Tensor cal;
    if (calibration.empty()) {
      cal = synthetic_calibration(seed);
    } else {
      require_file(calibration, "calibration image");
      cal = to_working_resolution(read_png_rgb(calibration));
    }
    normalize_activations(net, cal);
  }
  save_weights(net, out_path);

  RunManifest m;
  m.set("command", "init-weights");
  m.set("tool_version", kToolVersion);
  m.set("out", out_path);
  m.set("seed", seed);
  m.set("normalize", normalize);
  m.set("calibration", calibration.empty() ? std::string("synthetic") : calibration);
  m.save(manifest_path(out_path));
  out << "wrote random VGG-19 weights -> " << out_path << '\n';
  return kOk;
}

int cmd_verify_fixtures(const Common& c, const std::vector<std::string>& dirs,
                        std::ostream& out) {
  const Network net = open_network(c);
  bool ok = true;
  for (const auto& dir : dirs) {
    if (!fs::is_directory(dir)) throw UsageError("fixture directory not found: " + dir);
    const FixtureSet f = load_fixture_set(dir);
    for (const auto& cmp : compare_with_fixture(net, f)) {
      out << (cmp.passed ? "ok   " : "FAIL ") << dir << ' ' << cmp.layer
          << " max_rel_err=" << format_real(cmp.max_rel_error)
          << " tol=" << format_real(f.tolerance) << '\n';
      ok = ok && cmp.passed;
    }
  }
  return ok ? kOk : kRuntimeFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep feature interpolation: attribute transforms and inpainting", "dfi"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  OptimizerOptions opt;

  std::string images, attrs, index_out;
  auto* build = app.add_subcommand("build-index", "Index a directory of PNG images");
  build->add_option("--images", images, "Image directory")->required();
  build->add_option("--attrs", attrs, "Attribute CSV (path column, then one column per attribute)");
  build->add_option("--out", index_out, "Index file to write")->required();
  add_weights(build, common);
  add_jobs(build, common);

  TransformArgs ta;
  auto* tr = app.add_subcommand("transform", "Change attributes of one image");
  tr->add_option("--input", ta.input, "Input PNG")->required();
  tr->add_option("--index", ta.index, "Index file")->required();
  tr->add_option("--target-attrs", ta.target_attrs, "Target attributes, e.g. Smiling=+1,Male=-1")
      ->required();
  tr->add_option("--k", ta.k, "Neighbours per set")->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--beta", ta.beta, "Transformation strength")->capture_default_str();
  tr->add_option("--out", ta.out, "Output PNG")->required();
  tr->add_option("--exclude", ta.exclude, "Extra images to leave out of the neighbour search");
  add_weights(tr, common);
  add_jobs(tr, common);
  add_optimizer(tr, opt);

  InpaintArgs ia;
  std::optional<double> inpaint_beta;
  auto* ip = app.add_subcommand(
      "inpaint", "Fill the masked region of an image (presets: faces beta 1.6, shoes beta 2.8)");
  ip->add_option("--input", ia.input, "Input PNG")->required();
  ip->add_option("--mask", ia.mask, "Grayscale mask PNG, >= 128 marks missing pixels")->required();
  ip->add_option("--index", ia.index, "Index of unmasked images")->required();
  ip->add_option("--preset", ia.preset, "Dataset preset selecting the default strength")
      ->check(CLI::IsMember({"faces", "shoes"}))
      ->capture_default_str();
  ip->add_option("--k", ia.k, "Neighbour pairs")->capture_default_str()->check(CLI::PositiveNumber);
  ip->add_option("--beta", inpaint_beta, "Strength, overrides the preset");
  ip->add_option("--composite", ia.composite, "Copy known pixels from the input")
      ->capture_default_str();
  ip->add_option("--fill", ia.fill, "Gray level written into masked pixels")->capture_default_str();
  ip->add_option("--out", ia.out, "Output PNG")->required();
  ip->add_option("--exclude", ia.exclude, "Extra images to leave out of the neighbour search");
  add_weights(ip, common);
  add_jobs(ip, common);
  add_optimizer(ip, opt);

  std::uint64_t gc_seed = 0;
  bool inject_fault = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
  gc->add_flag("--inject-fault", inject_fault, "Flip the sign of conv input gradients (self-test)");

  std::string init_out, calibration;
  std::uint64_t init_seed = 0;
  bool no_normalize = false;
  auto* iw = app.add_subcommand("init-weights", "Write random VGG-19 weights in DFIW format");
  iw->add_option("--out", init_out, "Weight file to write")->required();
  iw->add_option("--seed", init_seed, "Random seed")->capture_default_str();
  iw->add_option("--calibration", calibration, "Image used to normalise activations");
  iw->add_flag("--no-normalize", no_normalize, "Skip activation normalisation");

  std::vector<std::string> fixture_dirs;
  auto* vf = app.add_subcommand("verify-fixtures", "Compare activations with exported fixtures");
  vf->add_option("--fixtures", fixture_dirs, "Fixture directories")->required();
  add_weights(vf, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  if (inpaint_beta) ia.beta = inpaint_beta;

  try {
    if (build->parsed()) return cmd_build_index(common, images, attrs, index_out, out, err);
    if (tr->parsed()) return cmd_transform(common, ta, opt, out, err);
    if (ip->parsed()) return cmd_inpaint(common, ia, opt, out, err);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, inject_fault, out);
    if (iw->parsed()) return cmd_init_weights(init_out, init_seed, calibration, !no_normalize, out);
    if (vf->parsed()) return cmd_verify_fixtures(common, fixture_dirs, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace dfi::cli

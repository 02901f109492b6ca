// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here; the process exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "dfi/gradcheck.hpp"
#include "dfi/image_io.hpp"
#include "dfi/inpaint.hpp"
#include "dfi/kernels.hpp"
#include "dfi/lbfgs.hpp"
#include "dfi/manifest.hpp"
#include "dfi/reconstruct.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace dfi::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr int kOracleInstances = 60;
constexpr double kOracleTolerance = 1e-5;
constexpr double kOracleSeconds = 30.0;
constexpr double kGradientTolerance = 1e-3;
constexpr double kGradientSeconds = 60.0;
constexpr double kTvFdTolerance = 1e-3;
constexpr double kQuadraticTolerance = 1e-6;
constexpr double kRosenbrockValue = 1e-10;
constexpr double kCosineTolerance = 1e-12;
constexpr double kSelfReconstructionPsnr = 30.0;
constexpr int kSelfReconstructionIterations = 500;
constexpr int kPerformanceIterations = 200;
constexpr double kPerformanceSeconds = 600.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "dfi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, errs;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, errs);
  if (err) *err = errs.str();
  return code;
}

// Smoke fixture, reduced and full networks, and indexes, built once on demand.
class Workspace {
 public:
  const fs::path& dir() const { return tmp_.path(); }

  const testing::SyntheticDataset& faces() {
    if (faces_.images.empty()) faces_ = testing::write_face_dataset(dir() / "faces", 10, 77);
    return faces_;
  }

  std::string tiny_weights() {
    const fs::path p = dir() / "tiny.dfiw";
    if (!fs::exists(p)) save_weights(testing::tiny_network(2), p);
    return p.string();
  }

  std::string vgg_weights() {
    const fs::path p = dir() / "vgg19.dfiw";
    if (!fs::exists(p) && run_cli({"init-weights", "--out", p.string(), "--seed", "1"}) != 0) {
      throw Error("init-weights failed");
    }
    return p.string();
  }

  std::string index(bool full) {
    const fs::path p = dir() / (full ? "faces_vgg.dfix" : "faces_tiny.dfix");
    if (fs::exists(p)) return p.string();
    std::vector<std::string> args{"build-index", "--images", (dir() / "faces").string(),
                                  "--attrs", faces().attributes_csv.string(), "--out",
                                  p.string(), "--weights", full ? vgg_weights() : tiny_weights()};
    if (!full) args.push_back("--allow-any-topology");
    std::string err;
    if (run_cli(args, &err) != 0) throw Error("build-index failed: " + err);
    return p.string();
  }

  std::string mask() {
    const fs::path p = dir() / "mask.png";
    if (!fs::exists(p)) {
      Tensor m({1, 1, 64, 64});
      for (std::size_t y = 16; y < 48; ++y)
        for (std::size_t x = 16; x < 48; ++x) m.at(0, 0, y, x) = 255.0f;
      write_png_gray(p, m);
    }
    return p.string();
  }

 private:
  testing::TempDir tmp_;
  testing::SyntheticDataset faces_;
};

double max_rel_error(std::span<const float> got, std::span<const double> want) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::abs(got[i] - want[i]));
    scale = std::max(scale, std::abs(want[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

Outcome kernel_oracles(Workspace&) {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 10), ch(1, 5), half(0, 2), stride(1, 2), level(0, 3);
  double conv_err = 0.0, pool_err = 0.0, resize_err = 0.0;
  bool shapes = true, argmax = true;
  for (int t = 0; t < kOracleInstances; ++t) {
    const std::size_t k = 2 * static_cast<std::size_t>(half(rng)) + 1;
    const Shape in{1, static_cast<std::size_t>(ch(rng)), static_cast<std::size_t>(dim(rng)),
                   static_cast<std::size_t>(dim(rng))};
    ConvParams<float> p{testing::normal_tensor<float>({static_cast<std::size_t>(ch(rng)), in.c, k, k}, rng),
                        {}, stride(rng), static_cast<int>(k / 2)};
    for (std::size_t o = 0; o < p.out_channels(); ++o) p.bias.push_back(0.05f * o);
    const Tensor x = testing::uniform_tensor<float>(in, rng, -2, 2);
    const Tensor got = conv2d_forward(x, p);
    const auto want = oracle::conv2d(x.cast<double>(), p.weights.cast<double>(),
                                     {p.bias.begin(), p.bias.end()}, p.stride, p.pad);
    shapes = shapes && got.shape() == want.shape();
    if (got.shape() == want.shape()) conv_err = std::max(conv_err, max_rel_error(got.data(), want.data()));

    Tensor px({1, 2, static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))});
    for (float& v : px.data()) v = static_cast<float>(level(rng)) + 0.25f * level(rng);
    const PoolResult<float> pg = maxpool2x2_forward(px);
    const oracle::Pool pw = oracle::maxpool2x2(px.cast<double>());
    shapes = shapes && pg.output.shape() == pw.out.shape();
    if (pg.output.shape() == pw.out.shape()) {
      pool_err = std::max(pool_err, max_rel_error(pg.output.data(), pw.out.data()));
    }
    argmax = argmax && pg.argmax.index == pw.argmax;

    const Tensor rx = testing::uniform_tensor<float>(
        {1, 3, static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))}, rng, 0, 255);
    const std::size_t oh = dim(rng) + 2, ow = dim(rng) + 2;
    const Tensor rg = bilinear_resize(rx, oh, ow);
    resize_err = std::max(resize_err, max_rel_error(rg.data(), oracle::bilinear(rx.cast<double>(), oh, ow).data()));
  }
  const double elapsed = seconds_since(start);
  Outcome o;
  o.require(shapes, "shapes match");
  o.require(conv_err < kOracleTolerance, "conv max_rel_err=" + fmt(conv_err));
  o.require(pool_err < kOracleTolerance && argmax, "pool max_rel_err=" + fmt(pool_err) + (argmax ? "" : " argmax differs"));
  o.require(resize_err < kOracleTolerance, "resize max_rel_err=" + fmt(resize_err));
  o.require(elapsed < kOracleSeconds,
            std::to_string(3 * kOracleInstances) + " instances in " + fmt(elapsed) + "s");
  return o;
}

Outcome gradient_suite(Workspace&) {
  const auto start = Clock::now();
  const GradcheckReport report = run_gradcheck({});
  double worst = 0.0;
  bool all = !report.entries.empty();
  bool objective = false;
  for (const auto& e : report.entries) {
    all = all && e.passed() && e.max_rel_error < kGradientTolerance;
    worst = std::max(worst, e.max_rel_error);
    objective = objective || e.name == "objective";
  }
  const int code = run_cli({"gradcheck", "--seed", "0"});
  const int faulty = run_cli({"gradcheck", "--seed", "0", "--inject-fault"});
  const double elapsed = seconds_since(start);
  Outcome o;
  o.require(all && objective, std::to_string(report.entries.size()) + " checks, worst max_rel_err=" + fmt(worst));
  o.require(code == 0, "gradcheck exit " + std::to_string(code));
  o.require(faulty != 0, "sign-flip hook exit " + std::to_string(faulty));
  o.require(elapsed < kGradientSeconds, fmt(elapsed) + "s");
  return o;
}

Outcome tv_regularizer(Workspace&) {
  Outcome o;
  const double hand = tv_value_grad(BasicTensor<double>({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3}), 2.0).value;
  o.require(hand == 10.0, "2x2 hand case=" + fmt(hand));
  const TvResult<double> flat = tv_value_grad(BasicTensor<double>({1, 3, 6, 5}, 77.0), 2.0);
  const bool zero_grad = std::all_of(flat.gradient.data().begin(), flat.gradient.data().end(),
                                     [](double g) { return g == 0.0; });
  o.require(flat.value == 0.0 && zero_grad, "constant image value=" + fmt(flat.value));

  std::mt19937_64 rng(5);
  auto z = testing::uniform_tensor<double>({1, 3, 8, 8}, rng, 0, 255);
  const TvResult<double> r = tv_value_grad(z, 2.0);
  double max_abs = 0.0, worst = 0.0;
  for (double g : r.gradient.data()) max_abs = std::max(max_abs, std::abs(g));
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = 1e-4, keep = z[i];
    z[i] = keep + eps;
    const double up = tv_value_grad(z, 2.0).value;
    z[i] = keep - eps;
    const double down = tv_value_grad(z, 2.0).value;
    z[i] = keep;
    const double numeric = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(numeric - r.gradient[i]) /
                                std::max({std::abs(numeric), std::abs(r.gradient[i]), 1e-3 * max_abs}));
  }
  o.require(worst < kTvFdTolerance, "exponent 2 FD max_rel_err=" + fmt(worst));
  return o;
}

bool monotone(const LbfgsResult& r) {
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    if (r.trace[i].value > r.trace[i - 1].value) return false;
  }
  return true;
}

Outcome optimizer(Workspace&) {
  Outcome o;
  bool descent = true;
  double quad_err = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const std::size_t n = 40;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<std::vector<double>> m(n, std::vector<double>(n)), a(n, std::vector<double>(n));
    std::vector<double> b(n);
    for (auto& row : m)
      for (double& v : row) v = d(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) a[i][j] += m[i][k] * m[j][k] / n;
      a[i][i] += 0.5;
      b[i] = d(rng);
    }
    const Objective f = [&](std::span<const double> x) {
      ObjectiveEval e{0.0, std::vector<double>(n)};
      for (std::size_t i = 0; i < n; ++i) {
        double ax = 0.0;
        for (std::size_t j = 0; j < n; ++j) ax += a[i][j] * x[j];
        e.value += 0.5 * x[i] * ax - b[i] * x[i];
        e.gradient[i] = ax - b[i];
      }
      return e;
    };
    LbfgsConfig cfg;
    cfg.gradient_tolerance = 1e-12;
    cfg.max_iterations = 2000;
    const LbfgsResult r = lbfgs_minimize(f, std::vector<double>(n, 0.0), cfg);
    const std::vector<double> want = oracle::solve(a, b);
    for (std::size_t i = 0; i < n; ++i) quad_err = std::max(quad_err, std::abs(r.x[i] - want[i]));
    descent = descent && monotone(r);
  }
  o.require(quad_err <= kQuadraticTolerance, "quadratic vs dense solve max_abs_err=" + fmt(quad_err));

  LbfgsConfig cfg;
  cfg.gradient_tolerance = 1e-12;
  cfg.max_iterations = 1000;
  const LbfgsResult rosen = lbfgs_minimize(
      [](std::span<const double> x) {
        const double t = x[1] - x[0] * x[0];
        return ObjectiveEval{(1 - x[0]) * (1 - x[0]) + 100 * t * t,
                             {-2 * (1 - x[0]) - 400 * x[0] * t, 200 * t}};
      },
      {-1.2, 1.0}, cfg);
  o.require(rosen.value < kRosenbrockValue, "Rosenbrock f=" + fmt(rosen.value));
  descent = descent && monotone(rosen);

  const Network net = testing::tiny_network(3);
  const Tensor x = testing::synthetic_face(4, {true, false}, 200, 200);
  ReconstructionConfig rc;
  rc.lbfgs.max_iterations = 50;
  rc.init = InitMode::input_plus_noise;
  rc.init_noise_stddev = 20.0;
  descent = descent && monotone(reconstruct(net, phi(net, x), x, rc).optimization);
  o.require(descent, descent ? "all traces monotone" : "non-monotone trace");
  return o;
}

DatasetIndex random_index(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 1), valid(0, 3), level(0, 2);
  DatasetIndex idx;
  idx.attribute_names = {"A", "B", "C"};
  for (std::uint32_t i = 0; i < 40; ++i) {
    IndexRecord r;
    r.id = 2 * i + 1;
    r.path = std::to_string(i) + ".png";
    r.attributes = AttributeBits::unlabeled(3);
    for (std::size_t b = 0; b < 3; ++b) {
      r.attributes.values[b] = coin(rng);
      r.attributes.valid[b] = valid(rng) != 0;
    }
    for (int k = 0; k < 8; ++k) r.pool5.push_back(static_cast<float>(level(rng)));
    idx.records.push_back(r);
  }
  return idx;
}

Outcome degenerate_cases(Workspace& ws) {
  Outcome o;
  std::size_t knn_cases = 0, knn_mismatch = 0;
  double metric_err = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DatasetIndex idx = random_index(seed);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_int_distribution<int> coin(0, 1), kd(1, 45);
    const AttributeQuery q{{true, coin(rng) == 1, true}, {coin(rng) == 1, true, coin(rng) == 1}};
    std::vector<float> probe(8);
    for (float& v : probe) v = static_cast<float>(coin(rng) + coin(rng));
    Exclusions ex;
    if (seed % 2) ex = {idx.records[seed % 40].id, idx.records[(seed * 7) % 40].id};
    const std::size_t k = kd(rng);
    for (const auto& r : idx.records) {
      metric_err = std::max(metric_err, std::abs(cosine_distance(probe, r.pool5) -
                                                 oracle::cosine_distance(probe, r.pool5)));
    }
    knn_mismatch += knn_by_attributes(idx, q, k, ex, probe).ids !=
                    oracle::knn_by_attributes(idx, q, k, ex, probe);
    knn_mismatch += knn_by_attributes(idx, q.negated(), k, ex, {}).ids !=
                    oracle::knn_by_attributes(idx, q.negated(), k, ex, {});
    knn_mismatch += knn_by_cosine(idx, probe, k, ex).ids != oracle::knn_by_cosine(idx, probe, k, ex);
    knn_cases += 3;
  }
  o.require(knn_mismatch == 0, std::to_string(knn_cases - knn_mismatch) + "/" +
                                   std::to_string(knn_cases) +
                                   " K-NN queries equal the exhaustive scan");
  o.require(metric_err < kCosineTolerance, "cosine metric max_abs_err=" + fmt(metric_err));

  // Full-size VGG-19, 200x200 input, default initialisation.
  const Network net = load_weights(ws.vgg_weights());
  const Tensor x = testing::synthetic_face(5, {true, true}, 200, 200);
  const AttributeQuery q = parse_attribute_spec("Smiling=+1", {"Smiling"});
  DatasetIndex empty;
  empty.attribute_names = {"Smiling"};
  ReconstructionConfig cfg;
  cfg.strength_beta = 0.0;
  cfg.lbfgs.max_iterations = kSelfReconstructionIterations;
  set_compute_threads(1);
  const TransformResult r = transform(x, empty, q, kDefaultNeighbors, cfg, net);
  const double db = psnr(r.image, x);
  o.require(db > kSelfReconstructionPsnr,
            "strength 0 self-reconstruction PSNR=" + fmt(db) + " dB after " +
                std::to_string(r.optimization.iterations) + " iterations (" +
                std::string(to_string(r.optimization.status)) + ")");
  o.require(monotone(r.optimization), "trace monotone");
  return o;
}

Outcome hyperparameters(Workspace& ws) {
  Outcome o;
  const auto& faces = ws.faces();
  const std::string index = ws.index(false);
  const std::string out = (ws.dir() / "default.png").string();
  std::string err;
  const int code = run_cli({"transform", "--input", faces.images[0].string(), "--index", index,
                            "--target-attrs", "Smiling=+1", "--out", out, "--weights",
                            ws.tiny_weights(), "--allow-any-topology"},
                           &err);
  o.require(code == 0, "default transform exit " + std::to_string(code) + (code ? " " + err : ""));
  if (code != 0) return o;
  const RunManifest m = RunManifest::load(out + ".manifest");
  const auto check = [&](const RunManifest& man, const char* key, const std::string& want) {
    const std::string got = man.get(key).value_or("<missing>");
    o.require(got == want, std::string(key) + "=" + got);
  };
  check(m, "tv_lambda", "0.001");
  check(m, "tv_exponent", "2");
  check(m, "k", "100");
  check(m, "strength_beta", "0.4");

  for (const char* preset : {"faces", "shoes"}) {
    const std::string ip = (ws.dir() / (std::string(preset) + ".png")).string();
    const int c = run_cli({"inpaint", "--input", faces.images[1].string(), "--mask", ws.mask(),
                           "--index", index, "--preset", preset, "--out", ip, "--weights",
                           ws.tiny_weights(), "--allow-any-topology"},
                          &err);
    o.require(c == 0, std::string("inpaint --preset ") + preset + " exit " + std::to_string(c));
    if (c != 0) continue;
    const RunManifest im = RunManifest::load(ip + ".manifest");
    check(im, "strength_beta", std::string(preset) == "faces" ? "1.6" : "2.8");
    check(im, "k", "100");
  }
  return o;
}

Outcome performance(Workspace& ws) {
  Outcome o;
  const auto& faces = ws.faces();
  const std::string index = ws.index(true);
  const std::string weights = ws.vgg_weights();
  const std::string out = (ws.dir() / "perf.png").string();
  std::string err;
  const auto start = Clock::now();
  const int code = run_cli({"transform", "--input", faces.images[0].string(), "--index", index,
                            "--target-attrs", "Smiling=+1", "--out", out, "--weights", weights,
                            "--max-iter", std::to_string(kPerformanceIterations), "--grad-tol",
                            "1e-300", "--jobs", "1"},
                           &err);
  const double elapsed = seconds_since(start);
  o.require(code == 0, "transform exit " + std::to_string(code) + (code ? " " + err : ""));
  if (code != 0) return o;
  const RunManifest m = RunManifest::load(out + ".manifest");
  const std::string iterations = m.get("iterations").value_or("?");
  o.require(iterations == std::to_string(kPerformanceIterations),
            "VGG-19 at " + m.get("working_size").value_or("?") + ", " + iterations +
                " L-BFGS iterations, " + m.get("evaluations").value_or("?") + " evaluations");
  o.require(elapsed <= kPerformanceSeconds,
            fmt(elapsed) + "s on " + std::to_string(std::thread::hardware_concurrency()) +
                " hardware thread(s)");
  return o;
}

Outcome determinism(Workspace& ws) {
  Outcome o;
  const auto& faces = ws.faces();
  const auto twice = [&](const std::string& label, const std::vector<std::string>& args,
                         const std::vector<fs::path>& outputs) {
    std::vector<std::string> first;
    for (int round = 0; round < 2; ++round) {
      std::string err;
      const int code = run_cli(args, &err);
      if (code != 0) {
        o.require(false, label + " exit " + std::to_string(code) + " " + err);
        return;
      }
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        const std::string bytes = slurp(outputs[i]);
        if (round == 0) {
          first.push_back(bytes);
        } else if (bytes != first[i] || bytes.empty()) {
          o.require(false, label + ": " + outputs[i].filename().string() + " differs");
          return;
        }
      }
    }
    o.require(true, label + " bit-identical");
  };

  const fs::path idx = ws.dir() / "det.dfix";
  twice("build-index",
        {"build-index", "--images", (ws.dir() / "faces").string(), "--attrs",
         faces.attributes_csv.string(), "--out", idx.string(), "--weights", ws.vgg_weights(),
         "--jobs", "2"},
        {idx, idx.string() + ".manifest"});
  const fs::path tr = ws.dir() / "det.png";
  twice("transform",
        {"transform", "--input", faces.images[3].string(), "--index", idx.string(),
         "--target-attrs", "Eyeglasses=+1", "--out", tr.string(), "--weights", ws.vgg_weights(),
         "--max-iter", "8", "--init", "input-plus-noise", "--seed", "11"},
        {tr, tr.string() + ".manifest"});
  const fs::path ip = ws.dir() / "det_inpaint.png";
  twice("inpaint",
        {"inpaint", "--input", faces.images[4].string(), "--mask", ws.mask(), "--index",
         ws.index(false), "--out", ip.string(), "--weights", ws.tiny_weights(),
         "--allow-any-topology", "--max-iter", "20", "--jobs", "3"},
        {ip, ip.string() + ".manifest"});
  return o;
}

struct Criterion {
  const char* name;
  Outcome (*run)(Workspace&);
};

constexpr Criterion kCriteria[] = {
    {"kernel-oracle-equivalence", kernel_oracles},
    {"gradient-suite", gradient_suite},
    {"tv-regularizer", tv_regularizer},
    {"optimizer", optimizer},
    {"pipeline-degenerate-cases", degenerate_cases},
    {"hyperparameter-conformance", hyperparameters},
    {"performance-sanity", performance},
    {"determinism", determinism},
};

}  // namespace
}  // namespace dfi::acceptance

int main(int argc, char** argv) {
  using namespace dfi::acceptance;
  const std::vector<std::string> only(argv + 1, argv + argc);
  Workspace ws;
  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run(ws);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " ["
              << fmt(seconds_since(start)) << "s]" << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criterion(s) failed"
                       : std::string("acceptance: all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}

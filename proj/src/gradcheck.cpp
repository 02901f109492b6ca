#include "dfi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>

#include "dfi/featurespace.hpp"
#include "dfi/kernels.hpp"
#include "dfi/network.hpp"
#include "dfi/reconstruct.hpp"

namespace dfi {

namespace {

using Signature = std::vector<std::size_t>;

// The numerical side always runs in double on the exactly converted input,
// so the f32 entries measure the float analytic gradient alone.
template <typename T>
struct Problem {
  BasicTensor<T> x;
  BasicTensor<T> analytic;
  std::function<double(const BasicTensor<double>&)> loss;
  std::function<Signature(const BasicTensor<double>&)> signature;  // empty = smooth
};

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
GradcheckEntry finite_difference(std::string name, const Problem<T>& p, double eps,
                                 double tolerance) {
  GradcheckEntry e;
  e.name = std::move(name);
  e.precision = precision_name<T>();
  e.tolerance = tolerance;
  double max_abs = 0.0;
  for (T v : p.analytic.data()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  const double floor = std::max(1e-3 * max_abs, 1e-30);
  BasicTensor<double> probe = p.x.template cast<double>();
  const Signature base = p.signature ? p.signature(probe) : Signature{};

  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double center = probe[i];
    const double up = center + eps;
    const double down = center - eps;
    probe[i] = up;
    const double f_up = p.loss(probe);
    const bool kink_up = p.signature && p.signature(probe) != base;
    probe[i] = down;
    const double f_down = p.loss(probe);
    const bool kink_down = p.signature && p.signature(probe) != base;
    probe[i] = center;
    if (kink_up || kink_down) {
      ++e.skipped;
      continue;
    }
    const double numeric = (f_up - f_down) / (up - down);
    const double a = p.analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    e.max_rel_error = std::max(e.max_rel_error, err);
    ++e.checked;
  }
  return e;
}

template <typename A, typename B>
double dot(const BasicTensor<A>& a, const BasicTensor<B>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return s;
}

template <typename T>
BasicTensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  BasicTensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
BasicTensor<T> normal_tensor(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  BasicTensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

Signature network_signature(const BasicNetwork<double>& net, const BasicTensor<double>& x,
                            const CaptureSet& capture) {
  const ForwardState<double> st = net.forward(x, capture);
  Signature sig;
  for (const auto& r : st.relu_inputs) {
    for (double v : r.data()) sig.push_back(v > 0.0 ? 1 : 0);
  }
  for (const auto& p : st.pool_indices) sig.insert(sig.end(), p.index.begin(), p.index.end());
  return sig;
}

const Topology& toy_topology() {
  static const Topology t{{"conv1_1", 3, 4, 3}, {"conv1_2", 4, 4, 3}, {"conv2_1", 4, 5, 3}};
  return t;
}

template <typename T>
struct Suite {
  std::mt19937_64& rng;
  double tolerance;
  std::vector<GradcheckEntry>& out;

  static constexpr double eps_kernel = 1e-5;
  static constexpr double eps_smooth = 1e-4;
  static constexpr double eps_image = 1e-3;

  void conv(const char* name, std::size_t in_c, std::size_t out_c, std::size_t k, int pad) {
    ConvParams<T> p{normal_tensor<T>({out_c, in_c, k, k}, rng), {}, 1, pad};
    p.bias.resize(out_c, T{0.1});
    const BasicTensor<T> x = random_tensor<T>({2, in_c, 8, 8}, rng, -1.0, 1.0);
    const Shape os = conv2d_output_shape(x.shape(), p, name);
    const BasicTensor<T> g = normal_tensor<T>(os, rng);
    const ConvParams<double> p64 = p.template cast<double>();
    Problem<T> prob{x, conv2d_backward_input(g, p, x.shape(), name),
                    [&](const BasicTensor<double>& z) {
                      return dot(g, conv2d_forward(z, p64, name));
                    },
                    {}};
    out.push_back(finite_difference(name, prob, eps_kernel, tolerance));
  }

  void relu() {
    const BasicTensor<T> x = random_tensor<T>({1, 3, 8, 8}, rng, -1.0, 1.0);
    const BasicTensor<T> g = normal_tensor<T>(x.shape(), rng);
    Problem<T> prob{x, relu_backward(g, x),
                    [&](const BasicTensor<double>& z) { return dot(g, relu_forward(z)); },
                    [](const BasicTensor<double>& z) {
                      Signature s;
                      for (double v : z.data()) s.push_back(v > 0.0 ? 1 : 0);
                      return s;
                    }};
    out.push_back(finite_difference("relu", prob, eps_kernel, tolerance));
  }

  void pool(const char* name, std::size_t side) {
    const BasicTensor<T> x = random_tensor<T>({1, 3, side, side}, rng, -1.0, 1.0);
    const PoolResult<T> fwd = maxpool2x2_forward(x);
    const BasicTensor<T> g = normal_tensor<T>(fwd.output.shape(), rng);
    Problem<T> prob{x, maxpool2x2_backward(g, fwd.argmax),
                    [&](const BasicTensor<double>& z) {
                      return dot(g, maxpool2x2_forward(z).output);
                    },
                    [](const BasicTensor<double>& z) { return maxpool2x2_forward(z).argmax.index; }};
    out.push_back(finite_difference(name, prob, eps_kernel, tolerance));
  }

  void tv(double exponent) {
    // Ramp plus noise keeps every neighbour difference away from zero.
    BasicTensor<T> x({1, 3, 6, 6});
    std::uniform_real_distribution<double> noise(0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
          x.at(0, c, i, j) = static_cast<T>((2.0 + c) * i + (3.0 - c) * j + noise(rng));
        }
      }
    }
    Problem<T> prob{x, tv_value_grad(x, exponent).gradient,
                    [=](const BasicTensor<double>& z) { return tv_value_grad(z, exponent).value; },
                    {}};
    char name[32];
    std::snprintf(name, sizeof name, "tv(exponent=%g)", exponent);
    out.push_back(finite_difference(name, prob, eps_smooth, tolerance));
  }

  void network(const BasicNetwork<T>& net, const BasicNetwork<double>& net64) {
    const CaptureSet capture{"relu1_2", "relu2_1"};
    const BasicTensor<T> x =
        preprocess(net.preprocessing(), random_tensor<T>({1, 3, 8, 8}, rng, 0.0, 255.0));
    const ForwardState<T> st = net.forward(x, capture);
    ActivationMap<T> grads;
    for (const auto& [name, act] : st.captures) grads[name] = normal_tensor<T>(act.shape(), rng);
    Problem<T> prob{x, net.input_gradient(st, grads),
                    [&](const BasicTensor<double>& z) {
                      const ActivationMap<double> a = net64.forward_capture(z, capture);
                      double s = 0.0;
                      for (const auto& [name, g] : grads) s += dot(g, a.at(name));
                      return s;
                    },
                    [&](const BasicTensor<double>& z) {
                      return network_signature(net64, z, capture);
                    }};
    out.push_back(finite_difference("network input_gradient", prob, eps_image, tolerance));
  }

  void objective(const BasicNetwork<T>& net, const BasicNetwork<double>& net64) {
    const CaptureSet capture{"relu1_2", "relu2_1"};
    const Preprocessing& pre = net.preprocessing();
    const BasicTensor<T> other =
        preprocess(pre, random_tensor<T>({1, 3, 8, 8}, rng, 0.0, 255.0));
    const BasicFeatureVector<T> target = flatten(net.forward_capture(other, capture), capture);
    const TvConfig tv{0.05, 2.0};
    const FeatureObjective<T> f(net, target, {1, 3, 8, 8}, tv);
    const FeatureObjective<double> f64(
        net64, {std::vector<double>(target.data.begin(), target.data.end()), target.layout},
        {1, 3, 8, 8}, tv);
    const BasicTensor<T> z = preprocess(pre, random_tensor<T>({1, 3, 8, 8}, rng, 0.0, 255.0));
    Problem<T> prob{z, f.evaluate(z).gradient,
                    [&](const BasicTensor<double>& v) { return f64.evaluate(v).value; },
                    [&](const BasicTensor<double>& v) {
                      return network_signature(net64, v, capture);
                    }};
    out.push_back(finite_difference("objective", prob, eps_image, tolerance));
  }

  void run(const BasicNetwork<T>& net, const BasicNetwork<double>& net64) {
    conv("conv3x3", 3, 4, 3, 1);
    conv("conv1x1", 4, 3, 1, 0);
    conv("conv5x5", 2, 3, 5, 2);
    relu();
    pool("maxpool(8x8)", 8);
    pool("maxpool(7x7)", 7);
    for (double e : {1.5, 2.0, 3.0}) tv(e);
    network(net, net64);
    objective(net, net64);
  }
};

}  // namespace

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  struct FaultGuard {
    explicit FaultGuard(bool on) { fault::set_flip_conv_gradient(on); }
    ~FaultGuard() { fault::set_flip_conv_gradient(false); }
  } guard(cfg.inject_fault);

  GradcheckReport report;
  const Network net = random_network(toy_topology(), cfg.seed);
  const BasicNetwork<double> net64 = net.cast<double>();
  {
    std::mt19937_64 rng(cfg.seed);
    Suite<float>{rng, cfg.float_tolerance, report.entries}.run(net, net64);
  }
  {
    std::mt19937_64 rng(cfg.seed);
    Suite<double>{rng, cfg.double_tolerance, report.entries}.run(net64, net64);
  }
  return report;
}

void print_gradcheck(std::ostream& out, const GradcheckReport& report) {
  char line[160];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof line, "%-4s %-24s %s max_rel_err=%.3e tol=%.0e checked=%zu skipped=%zu\n",
                  e.passed() ? "ok" : "FAIL", e.name.c_str(), e.precision.c_str(),
                  e.max_rel_error, e.tolerance, e.checked, e.skipped);
    out << line;
  }
  out << (report.passed() ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
}

}  // namespace dfi

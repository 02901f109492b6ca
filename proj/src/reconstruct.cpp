#include "dfi/reconstruct.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace dfi {

void TvConfig::validate() const {
  if (!(lambda >= 0.0)) throw UsageError("TV lambda must be >= 0");
  if (!(exponent > 0.0)) throw UsageError("TV exponent must be > 0");
}

std::string_view to_string(InitMode mode) {
  return mode == InitMode::input ? "input" : "input-plus-noise";
}

void ReconstructionConfig::validate() const {
  tv.validate();
  lbfgs.validate();
  if (!(strength_beta >= 0.0)) throw UsageError("strength beta must be >= 0");
  if (!(init_noise_stddev >= 0.0)) throw UsageError("init noise must be >= 0");
}

template <typename T>
TvResult<T> tv_value_grad(const BasicTensor<T>& z, double exponent) {
  if (!(exponent > 0.0)) throw UsageError("tv_value_grad: exponent must be > 0");
  if (z.h() < 2 || z.w() < 2) {
    throw ShapeError("tv_value_grad: need spatial dims >= 2, got " + to_string(z.shape()));
  }
  TvResult<T> result{0.0, BasicTensor<T>(z.shape())};
  const std::size_t h = z.h();
  const std::size_t w = z.w();
  const double half = exponent / 2.0;
  const bool quadratic = exponent == 2.0;
  double total = 0.0;
  for (std::size_t b = 0; b < z.n(); ++b) {
    for (std::size_t c = 0; c < z.c(); ++c) {
      const T* p = z.plane(b, c);
      T* g = result.gradient.plane(b, c);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t at = i * w + j;
          const double dx = j + 1 < w ? static_cast<double>(p[at + 1]) - p[at] : 0.0;
          const double dy = i + 1 < h ? static_cast<double>(p[at + w]) - p[at] : 0.0;
          const double s = dx * dx + dy * dy;
          if (s == 0.0) continue;
          double coef;
          if (quadratic) {
            total += s;
            coef = 1.0;
          } else {
            const double term = std::pow(s, half);
            total += term;
            coef = half * term / s;
          }
          // d(term)/d(dx) = 2 coef dx
          const double gx = 2.0 * coef * dx;
          const double gy = 2.0 * coef * dy;
          if (j + 1 < w) g[at + 1] += static_cast<T>(gx);
          if (i + 1 < h) g[at + w] += static_cast<T>(gy);
          g[at] -= static_cast<T>(gx + gy);
        }
      }
    }
  }
  result.value = total;
  return result;
}

template <typename T>
FeatureObjective<T>::FeatureObjective(const BasicNetwork<T>& net,
                                      BasicFeatureVector<T> target, Shape image_shape,
                                      TvConfig tv)
    : net_(&net), target_(std::move(target)), shape_(image_shape), tv_(tv) {
  tv_.validate();
  if (target_.data.size() != layout_size(target_.layout)) {
    throw ShapeError("objective: target length does not match its layout");
  }
  for (const auto& s : target_.layout) capture_.push_back(s.layer);
  if (capture_.empty()) throw UsageError("objective: empty target layout");
}

template <typename T>
typename FeatureObjective<T>::Evaluation FeatureObjective<T>::evaluate(
    const BasicTensor<T>& z) const {
  if (z.shape() != shape_) {
    throw ShapeError("objective: image dims " + to_string(z.shape()) + " vs expected " +
                     to_string(shape_));
  }
  ForwardState<T> state = net_->forward(z, capture_);
  const BasicFeatureVector<T> phi_z = flatten(state.captures, capture_);
  if (phi_z.layout != target_.layout) {
    throw ShapeError("objective: target layout " + to_string(target_.layout) +
                     " does not match phi(z) layout " + to_string(phi_z.layout));
  }
  std::vector<T> residual(phi_z.data.size());
  double feature = 0.0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    residual[i] = phi_z.data[i] - target_.data[i];
    feature += static_cast<double>(residual[i]) * residual[i];
  }
  feature *= 0.5;

  Evaluation out;
  out.feature_term = feature;
  out.gradient = net_->input_gradient(
      state, unflatten<T>(std::span<const T>(residual), target_.layout));

  if (tv_.lambda > 0.0) {
    const Preprocessing& pre = net_->preprocessing();
    const TvResult<T> tv = tv_value_grad(deprocess(pre, z, false), tv_.exponent);
    out.tv_term = tv_.lambda * tv.value;
    const BasicTensor<T> tv_grad = rgb_gradient_to_input(pre, tv.gradient);
    T* g = out.gradient.ptr();
    const T* add = tv_grad.ptr();
    const T lambda = static_cast<T>(tv_.lambda);
    for (std::size_t i = 0; i < out.gradient.size(); ++i) g[i] += lambda * add[i];
  }
  out.value = out.feature_term + out.tv_term;
  return out;
}

template <typename T>
ObjectiveEval FeatureObjective<T>::operator()(std::span<const double> z) const {
  BasicTensor<T> image(shape_, std::vector<T>(z.begin(), z.end()));
  Evaluation e = evaluate(image);
  return {e.value, std::vector<double>(e.gradient.data().begin(), e.gradient.data().end())};
}

ReconstructionResult reconstruct(const Network& net, const FeatureVector& target,
                                 const Tensor& init_rgb, const ReconstructionConfig& cfg) {
  cfg.validate();
  Tensor start = init_rgb;
  if (cfg.init == InitMode::input_plus_noise && cfg.init_noise_stddev > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.init_noise_stddev);
    for (float& v : start.data()) v = static_cast<float>(v + noise(rng));
  }
  const Tensor z0 = preprocess(net.preprocessing(), start);
  const FeatureObjective<float> objective(net, target, z0.shape(), cfg.tv);

  ReconstructionResult result;
  result.optimization = lbfgs_minimize(
      [&](std::span<const double> z) { return objective(z); },
      std::vector<double>(z0.data().begin(), z0.data().end()), cfg.lbfgs);
  const Tensor z(z0.shape(), std::vector<float>(result.optimization.x.begin(),
                                                result.optimization.x.end()));
  result.image = deprocess(net.preprocessing(), z, true);
  return result;
}

FeatureVector shifted_target(const FeatureVector& phi_x, const FeatureVector& w,
                             double alpha) {
  if (phi_x.layout != w.layout || phi_x.data.size() != w.data.size()) {
    throw ShapeError("shifted_target: layouts differ: " + to_string(phi_x.layout) + " vs " +
                     to_string(w.layout));
  }
  FeatureVector out = phi_x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(phi_x.data[i] + alpha * w.data[i]);
  }
  return out;
}

InterpolationTarget interpolation_target(const Network& net, const DatasetIndex& index,
                                         const FeatureVector& phi_x,
                                         std::span<const std::uint32_t> target_ids,
                                         std::span<const std::uint32_t> source_ids,
                                         std::size_t h, std::size_t w, double strength_beta,
                                         const ImagePreparer& prepare_source) {
  const FeatureVector target_mean = mean_feature(net, index, target_ids, h, w);
  const FeatureVector source_mean =
      mean_feature(net, index, source_ids, h, w, prepare_source);
  InterpolationTarget out;
  out.attribute = attribute_vector(target_mean, source_mean);
  out.attribute.k_used = std::min(target_ids.size(), source_ids.size());
  out.attribute.alpha = scale_alpha(out.attribute.w.data, strength_beta);
  out.target = shifted_target(phi_x, out.attribute.w, out.attribute.alpha);
  return out;
}

TransformResult transform(const Tensor& x_rgb, const DatasetIndex& index,
                          const AttributeQuery& query, std::size_t k,
                          const ReconstructionConfig& cfg, const Network& net,
                          const Exclusions& exclusions) {
  cfg.validate();
  if (k == 0) throw UsageError("transform: K must be >= 1");
  const Tensor working = to_working_resolution(x_rgb);
  TransformResult result;
  TransformReport& report = result.report;
  report.k_requested = k;
  report.working_shape = working.shape();

  FeatureVector target;
  if (cfg.strength_beta == 0.0) {
    target = phi(net, working);
  } else {
    const ImageFeatures x = phi_and_pool5(net, working);
    const KnnResult targets = knn_by_attributes(index, query, k, exclusions, x.pool5);
    const KnnResult sources =
        knn_by_attributes(index, query.negated(), k, exclusions, x.pool5);
    if (targets.ids.empty() || sources.ids.empty()) {
      throw UsageError("transform: index has no candidate neighbours");
    }
    report.target_ids = targets.ids;
    report.source_ids = sources.ids;
    report.target_shortfall = targets.shortfall();
    report.source_shortfall = sources.shortfall();
    InterpolationTarget shift =
        interpolation_target(net, index, x.phi, targets.ids, sources.ids, working.h(),
                             working.w(), cfg.strength_beta);
    report.alpha = shift.attribute.alpha;
    target = std::move(shift.target);
  }

  ReconstructionResult recon = reconstruct(net, target, working, cfg);
  result.image = std::move(recon.image);
  result.optimization = std::move(recon.optimization);
  return result;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: dims " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

template TvResult<float> tv_value_grad(const BasicTensor<float>&, double);
template TvResult<double> tv_value_grad(const BasicTensor<double>&, double);
template class FeatureObjective<float>;
template class FeatureObjective<double>;

}  // namespace dfi

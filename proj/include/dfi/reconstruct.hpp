#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfi/featurespace.hpp"
#include "dfi/lbfgs.hpp"
#include "dfi/neighbors.hpp"

namespace dfi {

struct TvConfig {
  double lambda = 0.001;
  // Exponent applied to each squared-gradient magnitude is exponent / 2.
  double exponent = 2.0;

  void validate() const;
};

enum class InitMode { input, input_plus_noise };

std::string_view to_string(InitMode mode);

inline constexpr std::size_t kDefaultNeighbors = 100;
inline constexpr double kDefaultStrength = 0.4;

struct ReconstructionConfig {
  TvConfig tv;
  LbfgsConfig lbfgs;
  double strength_beta = kDefaultStrength;
  InitMode init = InitMode::input;
  double init_noise_stddev = 8.0;  // RGB units, input_plus_noise only
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename T>
struct TvResult {
  double value = 0.0;
  BasicTensor<T> gradient;
};

/// Total variation, summed over channels:
///   sum_ij ((z[i][j+1]-z[i][j])^2 + (z[i+1][j]-z[i][j])^2)^(exponent/2)
/// A difference that would leave the image counts as zero.
template <typename T>
TvResult<T> tv_value_grad(const BasicTensor<T>& z, double exponent);

/// 1/2 |target - phi(z)|^2 + lambda * TV(deprocess(z)) over the network
/// input domain. Captured layers come from the target's layout.
template <typename T>
class FeatureObjective {
 public:
  struct Evaluation {
    double value = 0.0;
    double feature_term = 0.0;
    double tv_term = 0.0;
    BasicTensor<T> gradient;
  };

  FeatureObjective(const BasicNetwork<T>& net, BasicFeatureVector<T> target,
                   Shape image_shape, TvConfig tv);

  Evaluation evaluate(const BasicTensor<T>& z) const;
  ObjectiveEval operator()(std::span<const double> z) const;

  const Shape& image_shape() const { return shape_; }
  const BasicFeatureVector<T>& target() const { return target_; }

 private:
  const BasicNetwork<T>* net_;
  BasicFeatureVector<T> target_;
  CaptureSet capture_;
  Shape shape_;
  TvConfig tv_;
};

struct ReconstructionResult {
  Tensor image;  // RGB, clamped to [0, 255]
  LbfgsResult optimization;
};

/// Minimises the objective from `init_rgb` (already at working resolution).
ReconstructionResult reconstruct(const Network& net, const FeatureVector& target,
                                 const Tensor& init_rgb, const ReconstructionConfig& cfg);

/// phi(x) + alpha * w.
FeatureVector shifted_target(const FeatureVector& phi_x, const FeatureVector& w,
                             double alpha);

struct InterpolationTarget {
  FeatureVector target;
  AttributeVector attribute;
};

/// Means of phi over the two neighbour sets at h x w, their difference, the
/// alpha scaling and the shifted target. `prepare_source` is applied to
/// every source image (inpainting masks them).
InterpolationTarget interpolation_target(const Network& net, const DatasetIndex& index,
                                         const FeatureVector& phi_x,
                                         std::span<const std::uint32_t> target_ids,
                                         std::span<const std::uint32_t> source_ids,
                                         std::size_t h, std::size_t w, double strength_beta,
                                         const ImagePreparer& prepare_source = {});

struct TransformReport {
  std::size_t k_requested = 0;
  std::vector<std::uint32_t> target_ids;
  std::vector<std::uint32_t> source_ids;
  bool target_shortfall = false;
  bool source_shortfall = false;
  double alpha = 0.0;
  Shape working_shape;
};

struct TransformResult {
  Tensor image;
  TransformReport report;
  LbfgsResult optimization;
};

/// Full attribute transformation: neighbour selection by attributes, mean
/// features, attribute vector, alpha, shifted target and reverse mapping.
/// With strength 0 the target is phi(x) and no neighbours are used.
TransformResult transform(const Tensor& x_rgb, const DatasetIndex& index,
                          const AttributeQuery& query, std::size_t k,
                          const ReconstructionConfig& cfg, const Network& net,
                          const Exclusions& exclusions = {});

/// Peak signal-to-noise ratio in dB for [0, 255] images.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace dfi

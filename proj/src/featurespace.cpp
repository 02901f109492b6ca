#include "dfi/featurespace.hpp"

#include <algorithm>
#include <cmath>

namespace dfi {

std::size_t layout_size(const FeatureLayout& layout) {
  std::size_t total = 0;
  for (const auto& s : layout) total += s.size();
  return total;
}

std::string to_string(const FeatureLayout& layout) {
  std::string out;
  for (const auto& s : layout) {
    if (!out.empty()) out += ", ";
    out += s.layer + ":" + std::to_string(s.c) + "x" + std::to_string(s.h) +
           "x" + std::to_string(s.w);
  }
  return "[" + out + "]";
}

const CaptureSet& phi_layers() {
  static const CaptureSet layers = {"relu3_1", "relu4_1", "relu5_1"};
  return layers;
}

std::pair<std::size_t, std::size_t> working_size(std::size_t h, std::size_t w) {
  const std::size_t short_side = std::min(h, w);
  if (short_side == 0) throw ShapeError("working_size: empty image");
  if (short_side >= kMinWorkingSide) return {h, w};
  const auto scale = [&](std::size_t side) {
    if (side == short_side) return kMinWorkingSide;
    const double scaled = static_cast<double>(side) *
                          static_cast<double>(kMinWorkingSide) /
                          static_cast<double>(short_side);
    return static_cast<std::size_t>(std::floor(scaled + 0.5));
  };
  return {scale(h), scale(w)};
}

Tensor to_working_resolution(const Tensor& rgb) {
  const auto [h, w] = working_size(rgb.h(), rgb.w());
  return bilinear_resize(rgb, h, w);
}

template <typename T>
BasicFeatureVector<T> flatten(const ActivationMap<T>& captures,
                              const CaptureSet& order) {
  BasicFeatureVector<T> out;
  for (const auto& name : order) {
    const auto it = captures.find(name);
    if (it == captures.end()) {
      throw UsageError("flatten: capture '" + name + "' missing");
    }
    const BasicTensor<T>& t = it->second;
    if (t.n() != 1) {
      throw ShapeError("flatten: expected batch size 1 for " + name + ", got " +
                       to_string(t.shape()));
    }
    out.layout.push_back({name, t.c(), t.h(), t.w()});
    out.data.insert(out.data.end(), t.data().begin(), t.data().end());
  }
  return out;
}

template <typename T>
ActivationMap<T> unflatten(std::span<const T> data, const FeatureLayout& layout) {
  if (data.size() != layout_size(layout)) {
    throw ShapeError("unflatten: " + std::to_string(data.size()) +
                     " values for layout " + to_string(layout));
  }
  ActivationMap<T> out;
  std::size_t offset = 0;
  for (const auto& s : layout) {
    std::vector<T> values(data.begin() + static_cast<std::ptrdiff_t>(offset),
                          data.begin() + static_cast<std::ptrdiff_t>(offset + s.size()));
    out.emplace(s.layer, BasicTensor<T>(Shape{1, s.c, s.h, s.w}, std::move(values)));
    offset += s.size();
  }
  return out;
}

template <typename T>
BasicFeatureVector<T> phi_input(const BasicNetwork<T>& net,
                                const BasicTensor<T>& input) {
  return flatten(net.forward_capture(input, phi_layers()), phi_layers());
}

FeatureVector phi(const Network& net, const Tensor& rgb) {
  return phi_input(net, preprocess(net.preprocessing(), to_working_resolution(rgb)));
}

FeatureVector phi_at(const Network& net, const Tensor& rgb, std::size_t h,
                     std::size_t w) {
  return phi_input(net, preprocess(net.preprocessing(), bilinear_resize(rgb, h, w)));
}

Pool5Descriptor pool5_input(const Network& net, const Tensor& input) {
  const auto captures = net.forward_capture(input, {kPool5Layer});
  const Tensor& t = captures.at(kPool5Layer);
  return {t.data().begin(), t.data().end()};
}

Pool5Descriptor pool5_descriptor(const Network& net, const Tensor& rgb) {
  return pool5_input(net, preprocess(net.preprocessing(), to_working_resolution(rgb)));
}

Pool5Descriptor pool5_descriptor_at(const Network& net, const Tensor& rgb,
                                    std::size_t h, std::size_t w) {
  return pool5_input(net, preprocess(net.preprocessing(), bilinear_resize(rgb, h, w)));
}

ImageFeatures phi_and_pool5(const Network& net, const Tensor& rgb) {
  CaptureSet capture = phi_layers();
  capture.push_back(kPool5Layer);
  auto captures = net.forward_capture(
      preprocess(net.preprocessing(), to_working_resolution(rgb)), capture);
  const Tensor& pool5 = captures.at(kPool5Layer);
  return {flatten(captures, phi_layers()), {pool5.data().begin(), pool5.data().end()}};
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_distance: lengths " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return std::clamp(1.0 - dot / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 2.0);
}

void RunningMean::add(const FeatureVector& v) {
  if (count_ == 0) {
    layout_ = v.layout;
    sum_.assign(v.data.size(), 0.0);
  } else if (v.layout != layout_) {
    throw ShapeError("RunningMean: layout " + to_string(v.layout) +
                     " differs from " + to_string(layout_));
  }
  if (v.data.size() != sum_.size()) {
    throw ShapeError("RunningMean: feature length does not match its layout");
  }
  for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += v.data[i];
  ++count_;
}

FeatureVector RunningMean::mean() const {
  if (count_ == 0) throw UsageError("RunningMean: no samples");
  FeatureVector out{std::vector<float>(sum_.size()), layout_};
  const auto k = static_cast<double>(count_);
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    out.data[i] = static_cast<float>(sum_[i] / k);
  }
  return out;
}

template BasicFeatureVector<float> flatten(const ActivationMap<float>&, const CaptureSet&);
template BasicFeatureVector<double> flatten(const ActivationMap<double>&, const CaptureSet&);
template ActivationMap<float> unflatten(std::span<const float>, const FeatureLayout&);
template ActivationMap<double> unflatten(std::span<const double>, const FeatureLayout&);
template BasicFeatureVector<float> phi_input(const BasicNetwork<float>&, const BasicTensor<float>&);
template BasicFeatureVector<double> phi_input(const BasicNetwork<double>&, const BasicTensor<double>&);

}  // namespace dfi

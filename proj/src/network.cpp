#include "dfi/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <set>

#include "binary_io.hpp"

namespace dfi {
namespace {

constexpr std::string_view kWeightsMagic = "DFIW";
constexpr std::uint32_t kWeightsVersion = 1;

// Parses "convB_I" into (B, I).
std::optional<std::pair<int, int>> parse_conv_name(std::string_view name) {
  if (!name.starts_with("conv")) return std::nullopt;
  name.remove_prefix(4);
  const auto sep = name.find('_');
  if (sep == std::string_view::npos || sep == 0 || sep + 1 == name.size()) {
    return std::nullopt;
  }
  int block = 0;
  int item = 0;
  const auto b = std::from_chars(name.data(), name.data() + sep, block);
  const auto i = std::from_chars(name.data() + sep + 1,
                                 name.data() + name.size(), item);
  if (b.ec != std::errc{} || b.ptr != name.data() + sep ||
      i.ec != std::errc{} || i.ptr != name.data() + name.size()) {
    return std::nullopt;
  }
  return std::pair{block, item};
}

void check_rgb(const Shape& s, std::string_view what) {
  if (s.c != 3) {
    throw ShapeError(std::string(what) + ": expected 3 channels, got " +
                     to_string(s));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> preprocess(const Preprocessing& pre, const BasicTensor<T>& rgb) {
  check_rgb(rgb.shape(), "preprocess");
  BasicTensor<T> out(rgb.shape());
  const std::size_t plane = rgb.shape().plane();
  for (std::size_t b = 0; b < rgb.n(); ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const T* src = rgb.plane(b, pre.source_channel(c));
      T* dst = out.plane(b, c);
      const T mean = static_cast<T>(pre.mean[c]);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] - mean;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> deprocess(const Preprocessing& pre, const BasicTensor<T>& input,
                         bool clamp) {
  check_rgb(input.shape(), "deprocess");
  BasicTensor<T> out(input.shape());
  const std::size_t plane = input.shape().plane();
  for (std::size_t b = 0; b < input.n(); ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const T* src = input.plane(b, c);
      T* dst = out.plane(b, pre.source_channel(c));
      const T mean = static_cast<T>(pre.mean[c]);
      for (std::size_t i = 0; i < plane; ++i) {
        const T v = src[i] + mean;
        dst[i] = clamp ? std::clamp(v, T{0}, T{255}) : v;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> rgb_gradient_to_input(const Preprocessing& pre,
                                     const BasicTensor<T>& grad_rgb) {
  check_rgb(grad_rgb.shape(), "rgb_gradient_to_input");
  BasicTensor<T> out(grad_rgb.shape());
  const std::size_t plane = grad_rgb.shape().plane();
  for (std::size_t b = 0; b < grad_rgb.n(); ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const T* src = grad_rgb.plane(b, pre.source_channel(c));
      std::copy(src, src + plane, out.plane(b, c));
    }
  }
  return out;
}

const Topology& vgg19_topology() {
  static const Topology topology = [] {
    Topology t;
    const int blocks[5] = {2, 2, 4, 4, 4};
    const std::size_t widths[5] = {64, 128, 256, 512, 512};
    std::size_t in = 3;
    for (int b = 0; b < 5; ++b) {
      for (int i = 0; i < blocks[b]; ++i) {
        t.push_back({"conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1),
                     in, widths[b], 3});
        in = widths[b];
      }
    }
    return t;
  }();
  return topology;
}

template <typename T>
BasicNetwork<T>::BasicNetwork(std::vector<NamedConv<T>> convs, Preprocessing pre)
    : convs_(std::move(convs)), pre_(pre) {
  std::size_t in_channels = 3;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& conv = convs_[i];
    const auto id = parse_conv_name(conv.name);
    if (!id) {
      throw ShapeError("layer " + conv.name +
                       ": conv names must have the form convB_I");
    }
    const ConvParams<T>& p = conv.params;
    if (p.in_channels() != in_channels) {
      throw ShapeError("layer " + conv.name + ": expects " +
                       std::to_string(p.in_channels()) +
                       " input channels but the previous layer produces " +
                       std::to_string(in_channels));
    }
    if (p.bias.size() != p.out_channels()) {
      throw ShapeError("layer " + conv.name + ": bias length " +
                       std::to_string(p.bias.size()) + " vs " +
                       std::to_string(p.out_channels()) + " output channels");
    }
    in_channels = p.out_channels();

    layers_.push_back({conv.name, LayerKind::conv, i});
    layers_.push_back({"relu" + std::to_string(id->first) + "_" +
                           std::to_string(id->second),
                       LayerKind::relu, 0});
    const bool block_ends =
        i + 1 == convs_.size() ||
        parse_conv_name(convs_[i + 1].name).value_or(std::pair{-1, 0}).first !=
            id->first;
    if (block_ends) {
      layers_.push_back({"pool" + std::to_string(id->first), LayerKind::maxpool, 0});
    }
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!by_name_.emplace(layers_[i].name, i).second) {
      throw ShapeError("duplicate layer name " + layers_[i].name);
    }
  }
}

template <typename T>
std::optional<std::size_t> BasicNetwork<T>::find(std::string_view name) const {
  const auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::vector<std::string> BasicNetwork<T>::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) names.push_back(l.name);
  return names;
}

template <typename T>
ForwardState<T> BasicNetwork<T>::run(const BasicTensor<T>& image,
                                     const CaptureSet& capture,
                                     bool save) const {
  ForwardState<T> state;
  state.input_shape = image.shape();
  state.saved = save;
  std::set<std::size_t> wanted;
  for (const auto& name : capture) {
    const auto idx = find(name);
    if (!idx) {
      std::string known;
      for (const auto& l : layers_) known += (known.empty() ? "" : ", ") + l.name;
      throw UsageError("unknown capture layer '" + name + "' (known: " + known +
                       ")");
    }
    wanted.insert(*idx);
  }
  if (wanted.empty()) return state;

  const std::size_t depth = *wanted.rbegin() + 1;
  if (save) {
    state.output_shapes.resize(depth);
    state.relu_inputs.resize(depth);
    state.pool_indices.resize(depth);
  }
  BasicTensor<T> x = image;
  for (std::size_t i = 0; i < depth; ++i) {
    const Layer& layer = layers_[i];
    switch (layer.kind) {
      case LayerKind::conv:
        x = conv2d_forward(x, convs_[layer.conv_index].params, layer.name);
        break;
      case LayerKind::relu: {
        BasicTensor<T> y = relu_forward(x);
        if (save) state.relu_inputs[i] = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::maxpool: {
        PoolResult<T> pooled = maxpool2x2_forward(x);
        if (save) state.pool_indices[i] = std::move(pooled.argmax);
        x = std::move(pooled.output);
        break;
      }
    }
    if (save) state.output_shapes[i] = x.shape();
    if (wanted.contains(i)) state.captures.emplace(layer.name, x);
  }
  state.depth = depth;
  return state;
}

template <typename T>
ActivationMap<T> BasicNetwork<T>::forward_capture(
    const BasicTensor<T>& image, const CaptureSet& capture) const {
  return run(image, capture, false).captures;
}

template <typename T>
ForwardState<T> BasicNetwork<T>::forward(const BasicTensor<T>& image,
                                         const CaptureSet& capture) const {
  return run(image, capture, true);
}

template <typename T>
BasicTensor<T> BasicNetwork<T>::input_gradient(
    const ForwardState<T>& state, const ActivationMap<T>& capture_grads) const {
  if (!state.saved) {
    throw UsageError("input_gradient: forward pass kept no saved state");
  }
  std::size_t start = 0;
  bool any = false;
  for (const auto& [name, grad] : capture_grads) {
    if (!state.captures.contains(name)) {
      throw UsageError("input_gradient: no saved state for capture '" + name +
                       "'");
    }
    const std::size_t idx = *find(name);
    if (grad.shape() != state.output_shapes[idx]) {
      throw ShapeError("input_gradient: gradient for " + name + " has dims " +
                       to_string(grad.shape()) + ", activation has " +
                       to_string(state.output_shapes[idx]));
    }
    start = any ? std::max(start, idx) : idx;
    any = true;
  }
  if (!any) return BasicTensor<T>(state.input_shape);

  BasicTensor<T> grad(state.output_shapes[start]);
  for (std::size_t i = start + 1; i-- > 0;) {
    const Layer& layer = layers_[i];
    if (const auto it = capture_grads.find(layer.name); it != capture_grads.end()) {
      T* g = grad.ptr();
      const T* add = it->second.ptr();
      for (std::size_t k = 0; k < grad.size(); ++k) g[k] += add[k];
    }
    switch (layer.kind) {
      case LayerKind::conv: {
        const Shape& in = i == 0 ? state.input_shape : state.output_shapes[i - 1];
        grad = conv2d_backward_input(grad, convs_[layer.conv_index].params, in,
                                     layer.name);
        break;
      }
      case LayerKind::relu:
        grad = relu_backward(grad, state.relu_inputs[i]);
        break;
      case LayerKind::maxpool:
        grad = maxpool2x2_backward(grad, state.pool_indices[i]);
        break;
    }
  }
  return grad;
}

std::vector<std::uint8_t> serialize_weights(const Network& net) {
  detail::ByteWriter out;
  out.raw(kWeightsMagic);
  out.u32(kWeightsVersion);
  const Preprocessing& pre = net.preprocessing();
  out.u8(static_cast<std::uint8_t>(pre.order));
  for (float m : pre.mean) out.f32(m);
  out.u32(static_cast<std::uint32_t>(net.convs().size()));
  for (const auto& conv : net.convs()) {
    if (conv.name.size() > 0xFFFF) throw UsageError("layer name too long");
    out.u16(static_cast<std::uint16_t>(conv.name.size()));
    out.raw(conv.name);
    const Shape& k = conv.params.weights.shape();
    for (std::size_t d : {k.n, k.c, k.h, k.w}) out.u32(static_cast<std::uint32_t>(d));
    out.f32_array(conv.params.weights.data());
    out.u32(static_cast<std::uint32_t>(conv.params.bias.size()));
    out.f32_array(conv.params.bias);
  }
  return out.take();
}

Network parse_weights(std::span<const std::uint8_t> bytes, TopologyCheck check) {
  detail::ByteReader in(bytes, "weights header");
  if (in.raw(4) != kWeightsMagic) throw FormatError("weights: bad magic (expected DFIW)");
  const std::uint32_t version = in.u32();
  if (version != kWeightsVersion) {
    throw FormatError("weights: unsupported version " + std::to_string(version));
  }
  Preprocessing pre;
  const std::uint8_t order = in.u8();
  if (order > 1) {
    throw FormatError("weights: invalid channel-order byte " + std::to_string(order));
  }
  pre.order = static_cast<ChannelOrder>(order);
  for (float& m : pre.mean) m = in.f32();
  const std::uint32_t count = in.u32();

  const Topology& vgg = vgg19_topology();
  if (check == TopologyCheck::vgg19 && count != vgg.size()) {
    throw FormatError("weights: expected " + std::to_string(vgg.size()) +
                      " VGG-19 conv layers, file has " + std::to_string(count));
  }

  std::vector<NamedConv<float>> convs;
  std::size_t in_channels = 3;
  for (std::uint32_t i = 0; i < count; ++i) {
    in.set_context("weights layer #" + std::to_string(i));
    const std::uint16_t name_len = in.u16();
    std::string name = in.raw(name_len);
    in.set_context("weights layer " + name);
    Shape k;
    k.n = in.u32();
    k.c = in.u32();
    k.h = in.u32();
    k.w = in.u32();
    if (check == TopologyCheck::vgg19) {
      const ConvLayerSpec& spec = vgg[i];
      if (name != spec.name || k.n != spec.out_channels ||
          k.c != spec.in_channels || k.h != spec.kernel || k.w != spec.kernel) {
        throw FormatError("weights layer " + name + ": dims " + to_string(k) +
                          " do not match VGG-19 " + spec.name + " (" +
                          std::to_string(spec.out_channels) + "x" +
                          std::to_string(spec.in_channels) + "x3x3)");
      }
    }
    if (k.n * k.c > in.remaining() || k.h * k.w > in.remaining() ||
        k.count() > in.remaining() / 4) {
      in.require(in.remaining() + 1);
    }
    if (k.count() == 0 || k.h != k.w || k.h % 2 == 0) {
      throw FormatError("weights layer " + name + ": unsupported kernel dims " +
                        to_string(k));
    }
    if (k.c != in_channels) {
      throw FormatError("weights layer " + name + ": expects " +
                        std::to_string(k.c) + " input channels, previous layer has " +
                        std::to_string(in_channels));
    }
    in_channels = k.n;
    std::vector<float> weights = in.f32_array(k.count());
    const std::uint32_t bias_len = in.u32();
    if (bias_len != k.n) {
      throw FormatError("weights layer " + name + ": bias length " +
                        std::to_string(bias_len) + " vs " + std::to_string(k.n) +
                        " output channels");
    }
    std::vector<float> bias = in.f32_array(bias_len);
    ConvParams<float> params{Tensor(k, std::move(weights)), std::move(bias), 1,
                             static_cast<int>(k.h / 2)};
    convs.push_back({std::move(name), std::move(params)});
  }
  if (!in.at_end()) {
    throw FormatError("weights: " + std::to_string(in.remaining()) +
                      " trailing bytes after the last layer");
  }
  try {
    return Network(std::move(convs), pre);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }
}

Network load_weights(const std::filesystem::path& path, TopologyCheck check) {
  const auto bytes = detail::read_file(path);
  try {
    return parse_weights(bytes, check);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_weights(const Network& net, const std::filesystem::path& path) {
  detail::write_file(path, serialize_weights(net));
}

Network random_network(const Topology& topology, std::uint64_t seed,
                       Preprocessing pre) {
  std::mt19937_64 rng(seed);
  std::vector<NamedConv<float>> convs;
  for (const auto& spec : topology) {
    const Shape k{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    const double fan_in = static_cast<double>(k.c * k.h * k.w);
    std::normal_distribution<double> weight(0.0, std::sqrt(2.0 / fan_in));
    std::uniform_real_distribution<double> bias(-0.05, 0.1);
    Tensor w(k);
    for (float& v : w.data()) v = static_cast<float>(weight(rng));
    std::vector<float> b(k.n);
    for (float& v : b) v = static_cast<float>(bias(rng));
    convs.push_back({spec.name, ConvParams<float>{std::move(w), std::move(b), 1,
                                                  static_cast<int>(spec.kernel / 2)}});
  }
  return Network(std::move(convs), pre);
}

void normalize_activations(Network& net, const Tensor& calibration_rgb) {
  const Tensor input = preprocess(net.preprocessing(), calibration_rgb);
  for (std::size_t i = 0; i < net.convs().size(); ++i) {
    const std::string relu = "relu" + net.convs()[i].name.substr(4);
    const Tensor act = net.forward_capture(input, {relu}).at(relu);
    auto& params = net.mutable_convs()[i].params;
    const std::size_t per_filter = params.weights.size() / params.out_channels();
    for (std::size_t c = 0; c < act.c(); ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < act.n(); ++b) {
        const float* p = act.plane(b, c);
        for (std::size_t k = 0; k < act.shape().plane(); ++k) sum += p[k];
      }
      const double mean = sum / static_cast<double>(act.n() * act.shape().plane());
      if (mean <= 1e-12) continue;
      const float scale = static_cast<float>(1.0 / mean);
      float* w = params.weights.ptr() + c * per_filter;
      for (std::size_t k = 0; k < per_filter; ++k) w[k] *= scale;
      params.bias[c] *= scale;
    }
  }
}

template BasicTensor<float> preprocess(const Preprocessing&, const BasicTensor<float>&);
template BasicTensor<double> preprocess(const Preprocessing&, const BasicTensor<double>&);
template BasicTensor<float> deprocess(const Preprocessing&, const BasicTensor<float>&, bool);
template BasicTensor<double> deprocess(const Preprocessing&, const BasicTensor<double>&, bool);
template BasicTensor<float> rgb_gradient_to_input(const Preprocessing&,
                                                  const BasicTensor<float>&);
template BasicTensor<double> rgb_gradient_to_input(const Preprocessing&,
                                                   const BasicTensor<double>&);
template class BasicNetwork<float>;
template class BasicNetwork<double>;

}  // namespace dfi

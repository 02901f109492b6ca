#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dfi/kernels.hpp"
#include "dfi/tensor.hpp"

namespace dfi {

enum class LayerKind { conv, relu, maxpool };
enum class ChannelOrder : std::uint8_t { rgb = 0, bgr = 1 };

/// How RGB pixels in [0, 255] map to the network's input domain. Means are
/// listed in the network's channel order.
struct Preprocessing {
  ChannelOrder order = ChannelOrder::bgr;
  std::array<float, 3> mean{103.939f, 116.779f, 123.68f};

  // RGB channel feeding network channel c.
  std::size_t source_channel(std::size_t c) const {
    return order == ChannelOrder::bgr ? 2 - c : c;
  }
  friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

template <typename T>
BasicTensor<T> preprocess(const Preprocessing& pre, const BasicTensor<T>& rgb);

// Inverse of preprocess; clamps to [0, 255] unless `clamp` is false.
template <typename T>
BasicTensor<T> deprocess(const Preprocessing& pre, const BasicTensor<T>& input,
                         bool clamp = true);

// Pulls a gradient taken w.r.t. the unclamped deprocessed image back to the
// network input domain (the map is a channel permutation plus offsets).
template <typename T>
BasicTensor<T> rgb_gradient_to_input(const Preprocessing& pre,
                                     const BasicTensor<T>& grad_rgb);

struct ConvLayerSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
};
using Topology = std::vector<ConvLayerSpec>;

/// conv1_1 ... conv5_4 of VGG-19.
const Topology& vgg19_topology();

template <typename T>
struct NamedConv {
  std::string name;
  ConvParams<T> params;
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::size_t conv_index = 0;  // valid when kind == conv
};

using CaptureSet = std::vector<std::string>;

template <typename T>
using ActivationMap = std::map<std::string, BasicTensor<T>>;

/// Captured activations plus whatever backprop needs from one forward pass.
template <typename T>
struct ForwardState {
  ActivationMap<T> captures;
  Shape input_shape;
  std::size_t depth = 0;  // number of layers executed
  bool saved = false;
  std::vector<Shape> output_shapes;
  std::vector<BasicTensor<T>> relu_inputs;
  std::vector<ArgmaxIndices> pool_indices;
};

/// A VGG-style conv stack. Layer order is derived from the conv names:
/// every convB_I is followed by reluB_I, and the last conv of block B by
/// poolB.
template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;
  BasicNetwork(std::vector<NamedConv<T>> convs, Preprocessing pre = {});

  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<NamedConv<T>>& convs() const { return convs_; }
  std::vector<NamedConv<T>>& mutable_convs() { return convs_; }
  const Preprocessing& preprocessing() const { return pre_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::vector<std::string> layer_names() const;

  /// Runs the stack up to the deepest captured layer and returns copies of
  /// the captured outputs. An empty capture set does no work.
  ActivationMap<T> forward_capture(const BasicTensor<T>& image,
                                   const CaptureSet& capture) const;

  /// Like forward_capture but keeps the state needed by input_gradient.
  ForwardState<T> forward(const BasicTensor<T>& image,
                          const CaptureSet& capture) const;

  /// Gradient w.r.t. the input image of sum_l <capture_grads[l], act_l>.
  BasicTensor<T> input_gradient(const ForwardState<T>& state,
                                const ActivationMap<T>& capture_grads) const;

  template <typename U>
  BasicNetwork<U> cast() const {
    std::vector<NamedConv<U>> convs;
    convs.reserve(convs_.size());
    for (const auto& c : convs_) {
      convs.push_back({c.name, c.params.template cast<U>()});
    }
    return BasicNetwork<U>(std::move(convs), pre_);
  }

 private:
  ForwardState<T> run(const BasicTensor<T>& image, const CaptureSet& capture,
                      bool save) const;

  std::vector<NamedConv<T>> convs_;
  std::vector<Layer> layers_;
  std::unordered_map<std::string, std::size_t> by_name_;
  Preprocessing pre_;
};

using Network = BasicNetwork<float>;

enum class TopologyCheck { vgg19, any };

/// DFIW weight file codec.
std::vector<std::uint8_t> serialize_weights(const Network& net);
Network parse_weights(std::span<const std::uint8_t> bytes,
                      TopologyCheck check = TopologyCheck::vgg19);
Network load_weights(const std::filesystem::path& path,
                     TopologyCheck check = TopologyCheck::vgg19);
void save_weights(const Network& net, const std::filesystem::path& path);

/// He-initialised weights with small random biases.
Network random_network(const Topology& topology, std::uint64_t seed,
                       Preprocessing pre = {});

/// Rescales each conv filter (weights and bias) so that its post-ReLU mean
/// activation on `calibration_rgb` is 1, layer by layer.
void normalize_activations(Network& net, const Tensor& calibration_rgb);

}  // namespace dfi

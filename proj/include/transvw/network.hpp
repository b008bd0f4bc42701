// Copyright 2026 The transvw Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "transvw/autodiff.hpp"
#include "transvw/io.hpp"

namespace tvw {

// A classification head on the globally average-pooled deepest encoder stage:
// dense(hidden) -> ReLU -> dense(classes) -> softmax, or a single dense layer
// when hidden == 0. Softmax is skipped for single-class heads.
struct HeadConfig {
  std::string name;
  std::size_t classes = 2;
  std::size_t hidden = 64;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

// Encoder-decoder with optional skip connections. Encoder stage 0 is a 3x3
// convolution at input resolution; each later stage halves every spatial
// extent with a stride-2 convolution followed by a 3x3 convolution. Each
// decoder stage upsamples (nearest, x2) + convolves, concatenates the encoder
// stage of equal extent when skips are on, and fuses with a 3x3 convolution.
// The restoration output is a 1x1 convolution followed by a sigmoid.
struct NetworkConfig {
  std::size_t in_channels = 1;
  Shape input_extent{16, 16};
  std::vector<std::size_t> channels{8, 16, 32};
  bool decoder = true;
  bool skips = true;
  std::size_t out_channels = 1;
  std::vector<HeadConfig> heads;

  std::size_t spatial_rank() const { return input_extent.size(); }
  std::size_t depth() const { return channels.size(); }
  const HeadConfig* find_head(std::string_view name) const;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class LayerKind {
  conv,
  downsample_conv,
  upsample_conv,
  concat,
  dense,
  relu,
  sigmoid,
  softmax,
  global_avg_pool,
};

std::string_view to_string(LayerKind kind);

struct LayerDesc {
  LayerKind kind;
  std::string name;  // parameter prefix, or the joined stages for concat
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Shape extent;  // output spatial extent; empty for dense/pooled layers
};

// Ordered layer descriptors. Throws ConfigError when the stage count is
// incompatible with the input extents or a skip would join unequal extents.
std::vector<LayerDesc> describe_topology(const NetworkConfig& config);

// Decoder fuse-convolution input channel count at each decoder stage, index
// = encoder stage it joins (0 .. depth-2).
std::vector<std::size_t> decoder_input_channels(const NetworkConfig& config);

template <typename T>
struct ForwardOutput {
  std::vector<Var<T>> stages;  // encoder activations, shallow to deep
  Var<T> restoration;          // present when the decoder is on
  std::map<std::string, Var<T>> logits;
  std::map<std::string, Var<T>> probabilities;  // heads with >= 2 classes
};

template <typename T>
class Network {
 public:
  using NamedParam = std::pair<std::string, Var<T>>;

  // He-uniform weights (bound sqrt(6 / fan_in)), zero biases. Each parameter
  // draws from a stream derived from (seed, its name), so adding or removing
  // a head never changes the initial values of the shared trunk.
  Network(NetworkConfig config, std::uint64_t seed);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkConfig& config() const { return config_; }

  ForwardOutput<T> forward(const Var<T>& input) const;
  ForwardOutput<T> forward(const Tensor<T>& input) const {
    return forward(Var<T>::constant(input));
  }

  const std::vector<NamedParam>& parameters() const { return params_; }
  const Var<T>& parameter(std::string_view name) const;
  bool has_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // Vars of every trainable parameter, in declaration order.
  std::vector<Var<T>> trainable() const;
  std::vector<std::string> trainable_names() const;
  // Freezes/unfreezes parameters whose names start with `prefix`.
  void set_trainable(std::string_view prefix, bool trainable);

  void zero_grad();

  void add_head(const HeadConfig& head, std::uint64_t seed);
  void remove_head(std::string_view name);
  // Redraws parameters whose names start with `prefix` (fresh-layer swap).
  void reinitialize(std::string_view prefix, std::uint64_t seed);
  // Copies values of same-named, same-shaped parameters whose names start
  // with one of `prefixes`. Returns the names copied.
  std::vector<std::string> copy_from(const Network& other,
                                     const std::vector<std::string>& prefixes);

  TensorBundle<T> to_bundle(nlohmann::json extra_meta = nlohmann::json::object()) const;
  static Network from_bundle(const TensorBundle<T>& bundle);
  void save(const std::filesystem::path& path,
            nlohmann::json extra_meta = nlohmann::json::object()) const;
  static Network load(const std::filesystem::path& path);

 private:
  Network() = default;
  void build_parameters(std::uint64_t seed);
  void add_param(const std::string& name, Shape shape, std::size_t fan_in,
                 std::uint64_t seed, bool bias);
  void add_head_parameters(const HeadConfig& head, std::uint64_t seed);

  NetworkConfig config_;
  std::vector<NamedParam> params_;
};

std::string describe_network(const NetworkConfig& config);

}  // namespace tvw

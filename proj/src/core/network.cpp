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

#include "transvw/network.hpp"

#include <cmath>
#include <sstream>

#include "transvw/ops.hpp"
#include "transvw/rng.hpp"

namespace tvw {
namespace {

Shape kernel_shape(std::size_t cout, std::size_t cin, std::size_t rank,
                   std::size_t k) {
  Shape s{cout, cin};
  for (std::size_t a = 0; a < rank; ++a) s.push_back(k);
  return s;
}

std::size_t pow_int(std::size_t base, std::size_t k) {
  std::size_t v = 1;
  for (std::size_t i = 0; i < k; ++i) v *= base;
  return v;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

std::string head_prefix(const std::string& name) { return "head." + name + "."; }

}  // namespace

const HeadConfig* NetworkConfig::find_head(std::string_view name) const {
  for (const auto& h : heads)
    if (h.name == name) return &h;
  return nullptr;
}

nlohmann::json NetworkConfig::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["input_extent"] = input_extent;
  j["channels"] = channels;
  j["decoder"] = decoder;
  j["skips"] = skips;
  j["out_channels"] = out_channels;
  j["heads"] = nlohmann::json::array();
  for (const auto& h : heads) {
    j["heads"].push_back({{"name", h.name}, {"classes", h.classes}, {"hidden", h.hidden}});
  }
  return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  try {
    NetworkConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.input_extent = j.at("input_extent").get<Shape>();
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.decoder = j.at("decoder").get<bool>();
    c.skips = j.at("skips").get<bool>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    for (const auto& h : j.at("heads")) {
      c.heads.push_back({h.at("name").get<std::string>(),
                         h.at("classes").get<std::size_t>(),
                         h.at("hidden").get<std::size_t>()});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("network config: ") + e.what());
  }
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::downsample_conv: return "downsample_conv";
    case LayerKind::upsample_conv: return "upsample_conv";
    case LayerKind::concat: return "concat";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "unknown";
}

std::vector<std::size_t> decoder_input_channels(const NetworkConfig& config) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + 1 < config.depth(); ++s) {
    out.push_back(config.skips ? 2 * config.channels[s] : config.channels[s]);
  }
  return out;
}

std::vector<LayerDesc> describe_topology(const NetworkConfig& c) {
  const std::size_t rank = c.spatial_rank();
  if (rank < 1 || rank > 3) {
    throw ConfigError("network input must have 1-3 spatial axes, got " +
                      std::to_string(rank));
  }
  if (c.depth() == 0) throw ConfigError("network needs at least one encoder stage");
  if (c.in_channels == 0 || c.out_channels == 0) {
    throw ConfigError("network channel counts must be positive");
  }
  for (std::size_t ch : c.channels)
    if (ch == 0) throw ConfigError("encoder stage widths must be positive");
  const std::size_t factor = pow_int(2, c.depth() - 1);
  for (std::size_t e : c.input_extent) {
    if (e % factor != 0) {
      throw ConfigError("input extent " + shape_to_string(c.input_extent) +
                        " is not divisible by 2^" + std::to_string(c.depth() - 1) +
                        " required by " + std::to_string(c.depth()) +
                        " encoder stages");
    }
  }
  for (std::size_t i = 0; i < c.heads.size(); ++i) {
    if (c.heads[i].classes == 0) throw ConfigError("head classes must be positive");
    for (std::size_t j = 0; j < i; ++j)
      if (c.heads[i].name == c.heads[j].name)
        throw ConfigError("duplicate head name '" + c.heads[i].name + "'");
  }

  std::vector<Shape> extents;
  Shape ext = c.input_extent;
  std::vector<LayerDesc> layers;
  layers.push_back({LayerKind::conv, "enc0.conv", c.in_channels, c.channels[0], ext});
  layers.push_back({LayerKind::relu, "enc0", c.channels[0], c.channels[0], ext});
  extents.push_back(ext);
  for (std::size_t s = 1; s < c.depth(); ++s) {
    for (auto& e : ext) e = ops::conv_output_extent(e, 3, 2, 1);
    const std::string p = "enc" + std::to_string(s);
    layers.push_back({LayerKind::downsample_conv, p + ".down", c.channels[s - 1], c.channels[s], ext});
    layers.push_back({LayerKind::relu, p, c.channels[s], c.channels[s], ext});
    layers.push_back({LayerKind::conv, p + ".conv", c.channels[s], c.channels[s], ext});
    layers.push_back({LayerKind::relu, p, c.channels[s], c.channels[s], ext});
    extents.push_back(ext);
  }
  if (c.decoder) {
    for (std::size_t s = c.depth() - 1; s-- > 0;) {
      Shape up = extents[s + 1];
      for (auto& e : up) e *= 2;
      const std::string p = "dec" + std::to_string(s);
      layers.push_back({LayerKind::upsample_conv, p + ".up", c.channels[s + 1], c.channels[s], up});
      layers.push_back({LayerKind::relu, p, c.channels[s], c.channels[s], up});
      std::size_t fuse_in = c.channels[s];
      if (c.skips) {
        if (up != extents[s]) {
          throw ConfigError("skip connection would join encoder stage " +
                            std::to_string(s) + " " + shape_to_string(extents[s]) +
                            " to decoder extent " + shape_to_string(up));
        }
        layers.push_back({LayerKind::concat, "enc" + std::to_string(s) + "+" + p,
                          2 * c.channels[s], 2 * c.channels[s], up});
        fuse_in = 2 * c.channels[s];
      }
      layers.push_back({LayerKind::conv, p + ".fuse", fuse_in, c.channels[s], up});
      layers.push_back({LayerKind::relu, p, c.channels[s], c.channels[s], up});
    }
    layers.push_back({LayerKind::conv, "out", c.channels[0], c.out_channels, c.input_extent});
    layers.push_back({LayerKind::sigmoid, "out", c.out_channels, c.out_channels, c.input_extent});
  }
  const std::size_t deep = c.channels.back();
  for (const auto& h : c.heads) {
    const std::string p = "head." + h.name;
    layers.push_back({LayerKind::global_avg_pool, p, deep, deep, {}});
    std::size_t in = deep;
    if (h.hidden > 0) {
      layers.push_back({LayerKind::dense, p + ".fc1", in, h.hidden, {}});
      layers.push_back({LayerKind::relu, p, h.hidden, h.hidden, {}});
      in = h.hidden;
    }
    layers.push_back({LayerKind::dense, p + (h.hidden > 0 ? ".fc2" : ".fc"), in, h.classes, {}});
    if (h.classes >= 2) layers.push_back({LayerKind::softmax, p, h.classes, h.classes, {}});
  }
  return layers;
}

std::string describe_network(const NetworkConfig& config) {
  std::ostringstream ss;
  for (const auto& l : describe_topology(config)) {
    ss << to_string(l.kind) << ' ' << l.name << ' ' << l.in_channels << "->"
       << l.out_channels;
    if (!l.extent.empty()) ss << ' ' << shape_to_string(l.extent);
    ss << '\n';
  }
  return ss.str();
}

template <typename T>
Network<T>::Network(NetworkConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  describe_topology(config_);
  build_parameters(seed);
}

template <typename T>
Network<T>::Network(const Network& other) : config_(other.config_) {
  for (const auto& [name, var] : other.params_) {
    Var<T> copy = Var<T>::parameter(var.value());
    copy.node()->requires_grad = var.requires_grad();
    params_.emplace_back(name, std::move(copy));
  }
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

template <typename T>
void Network<T>::add_param(const std::string& name, Shape shape,
                           std::size_t fan_in, std::uint64_t seed, bool bias) {
  for (const auto& p : params_)
    if (p.first == name) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<T> value(std::move(shape));
  if (!bias) {
    Rng rng(derive_seed(seed, "init/" + name));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  params_.emplace_back(name, Var<T>::parameter(std::move(value)));
}

template <typename T>
void Network<T>::add_head_parameters(const HeadConfig& h, std::uint64_t seed) {
  const std::string p = head_prefix(h.name);
  const std::size_t deep = config_.channels.back();
  std::size_t in = deep;
  if (h.hidden > 0) {
    add_param(p + "fc1.w", {h.hidden, in}, in, seed, false);
    add_param(p + "fc1.b", {h.hidden}, in, seed, true);
    in = h.hidden;
    add_param(p + "fc2.w", {h.classes, in}, in, seed, false);
    add_param(p + "fc2.b", {h.classes}, in, seed, true);
  } else {
    add_param(p + "fc.w", {h.classes, in}, in, seed, false);
    add_param(p + "fc.b", {h.classes}, in, seed, true);
  }
}

template <typename T>
void Network<T>::build_parameters(std::uint64_t seed) {
  const auto& c = config_;
  const std::size_t r = c.spatial_rank();
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin,
                  std::size_t k) {
    add_param(name + ".w", kernel_shape(cout, cin, r, k), cin * pow_int(k, r), seed, false);
    add_param(name + ".b", {cout}, cin * pow_int(k, r), seed, true);
  };
  conv("enc0.conv", c.channels[0], c.in_channels, 3);
  for (std::size_t s = 1; s < c.depth(); ++s) {
    const std::string p = "enc" + std::to_string(s);
    conv(p + ".down", c.channels[s], c.channels[s - 1], 3);
    conv(p + ".conv", c.channels[s], c.channels[s], 3);
  }
  if (c.decoder) {
    for (std::size_t s = c.depth() - 1; s-- > 0;) {
      const std::string p = "dec" + std::to_string(s);
      conv(p + ".up", c.channels[s], c.channels[s + 1], 3);
      conv(p + ".fuse", c.channels[s], c.skips ? 2 * c.channels[s] : c.channels[s], 3);
    }
    conv("out", c.out_channels, c.channels[0], 1);
  }
  for (const auto& h : c.heads) add_head_parameters(h, seed);
}

template <typename T>
ForwardOutput<T> Network<T>::forward(const Var<T>& input) const {
  const auto& c = config_;
  const Shape& s = input.shape();
  if (s.size() != 2 + c.spatial_rank() || s[1] != c.in_channels ||
      !std::equal(c.input_extent.begin(), c.input_extent.end(), s.begin() + 2)) {
    Shape expected{0, c.in_channels};
    expected.insert(expected.end(), c.input_extent.begin(), c.input_extent.end());
    throw ConfigError("network input " + shape_to_string(s) +
                      " does not match [B, " + std::to_string(c.in_channels) +
                      ", " + shape_to_string(c.input_extent) + "]");
  }
  auto P = [this](const std::string& n) -> const Var<T>& { return parameter(n); };
  auto conv3 = [&](const Var<T>& x, const std::string& n, std::size_t stride) {
    return ops::relu(ops::conv(x, P(n + ".w"), P(n + ".b"), {stride, 1}));
  };

  ForwardOutput<T> out;
  out.stages.push_back(conv3(input, "enc0.conv", 1));
  for (std::size_t st = 1; st < c.depth(); ++st) {
    const std::string p = "enc" + std::to_string(st);
    Var<T> h = conv3(out.stages.back(), p + ".down", 2);
    out.stages.push_back(conv3(h, p + ".conv", 1));
  }
  if (c.decoder) {
    Var<T> d = out.stages.back();
    for (std::size_t st = c.depth() - 1; st-- > 0;) {
      const std::string p = "dec" + std::to_string(st);
      Var<T> u = conv3(ops::upsample_nearest(d, 2), p + ".up", 1);
      if (c.skips) u = ops::concat_channels(u, out.stages[st]);
      d = conv3(u, p + ".fuse", 1);
    }
    out.restoration = ops::sigmoid(ops::conv(d, P("out.w"), P("out.b"), {1, 0}));
  }
  if (!c.heads.empty()) {
    Var<T> pooled = ops::global_avg_pool(out.stages.back());
    for (const auto& h : c.heads) {
      const std::string p = head_prefix(h.name);
      Var<T> logits;
      if (h.hidden > 0) {
        Var<T> z = ops::relu(ops::dense(pooled, P(p + "fc1.w"), P(p + "fc1.b")));
        logits = ops::dense(z, P(p + "fc2.w"), P(p + "fc2.b"));
      } else {
        logits = ops::dense(pooled, P(p + "fc.w"), P(p + "fc.b"));
      }
      out.logits.emplace(h.name, logits);
      if (h.classes >= 2) out.probabilities.emplace(h.name, ops::softmax(logits));
    }
  }
  return out;
}

template <typename T>
const Var<T>& Network<T>::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.first == name) return p.second;
  throw UsageError("network has no parameter '" + std::string(name) + "'");
}

template <typename T>
bool Network<T>::has_parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.first == name) return true;
  return false;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.value().size();
  return n;
}

template <typename T>
std::vector<Var<T>> Network<T>::trainable() const {
  std::vector<Var<T>> out;
  for (const auto& p : params_)
    if (p.second.requires_grad()) out.push_back(p.second);
  return out;
}

template <typename T>
std::vector<std::string> Network<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (p.second.requires_grad()) out.push_back(p.first);
  return out;
}

template <typename T>
void Network<T>::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& p : params_)
    if (starts_with(p.first, prefix)) p.second.node()->requires_grad = trainable;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.second.zero_grad();
}

template <typename T>
void Network<T>::add_head(const HeadConfig& head, std::uint64_t seed) {
  NetworkConfig next = config_;
  next.heads.push_back(head);
  describe_topology(next);
  config_ = std::move(next);
  add_head_parameters(head, seed);
}

template <typename T>
void Network<T>::remove_head(std::string_view name) {
  auto it = std::find_if(config_.heads.begin(), config_.heads.end(),
                         [&](const HeadConfig& h) { return h.name == name; });
  if (it == config_.heads.end()) {
    throw UsageError("network has no head '" + std::string(name) + "'");
  }
  config_.heads.erase(it);
  const std::string prefix = head_prefix(std::string(name));
  std::erase_if(params_, [&](const NamedParam& p) { return starts_with(p.first, prefix); });
}

template <typename T>
void Network<T>::reinitialize(std::string_view prefix, std::uint64_t seed) {
  bool any = false;
  for (auto& [name, var] : params_) {
    if (!starts_with(name, prefix)) continue;
    any = true;
    Tensor<T>& v = var.mutable_value();
    const bool is_bias = name.size() >= 2 && name.substr(name.size() - 2) == ".b";
    if (is_bias) {
      v.fill(T(0));
      continue;
    }
    // Dense [out, in] or conv [out, in, k...]: fan_in = in * k^r.
    std::size_t fan_in = v.dim(1);
    for (std::size_t a = 2; a < v.rank(); ++a) fan_in *= v.dim(a);
    Rng rng(derive_seed(seed, "init/" + name));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& x : v.data()) x = static_cast<T>(rng.uniform(-bound, bound));
  }
  if (!any) {
    throw UsageError("no parameters start with '" + std::string(prefix) + "'");
  }
}

template <typename T>
std::vector<std::string> Network<T>::copy_from(
    const Network& other, const std::vector<std::string>& prefixes) {
  std::vector<std::string> copied;
  for (auto& [name, var] : params_) {
    bool wanted = false;
    for (const auto& p : prefixes) wanted = wanted || starts_with(name, p);
    if (!wanted || !other.has_parameter(name)) continue;
    const Tensor<T>& src = other.parameter(name).value();
    if (src.shape() != var.value().shape()) continue;
    var.mutable_value() = src;
    copied.push_back(name);
  }
  return copied;
}

template <typename T>
TensorBundle<T> Network<T>::to_bundle(nlohmann::json extra_meta) const {
  TensorBundle<T> b;
  b.meta = std::move(extra_meta);
  b.meta["kind"] = "network";
  b.meta["network"] = config_.to_json();
  for (const auto& [name, var] : params_) b.tensors.emplace_back(name, var.value());
  return b;
}

template <typename T>
Network<T> Network<T>::from_bundle(const TensorBundle<T>& bundle) {
  if (!bundle.meta.contains("network")) {
    throw IntegrityError("tensor file carries no network configuration");
  }
  Network net;
  net.config_ = NetworkConfig::from_json(bundle.meta.at("network"));
  describe_topology(net.config_);
  Network reference(net.config_, 0);
  if (reference.params_.size() != bundle.tensors.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(bundle.tensors.size()) +
                         " tensors, topology needs " +
                         std::to_string(reference.params_.size()));
  }
  for (std::size_t i = 0; i < reference.params_.size(); ++i) {
    const auto& [name, t] = bundle.tensors[i];
    if (name != reference.params_[i].first ||
        t.shape() != reference.params_[i].second.value().shape()) {
      throw IntegrityError("checkpoint entry '" + name + "' " +
                           shape_to_string(t.shape()) + " does not match topology");
    }
    net.params_.emplace_back(name, Var<T>::parameter(t));
  }
  return net;
}

template <typename T>
void Network<T>::save(const std::filesystem::path& path,
                      nlohmann::json extra_meta) const {
  write_tensor_bundle(path, to_bundle(std::move(extra_meta)));
}

template <typename T>
Network<T> Network<T>::load(const std::filesystem::path& path) {
  return from_bundle(read_tensor_bundle<T>(path));
}

template class Network<float>;
template class Network<double>;

}  // namespace tvw

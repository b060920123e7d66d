#include "densepillars/backbone.hpp"

#include <charconv>

namespace dpp {

int GrowthSchedule::rate(int block) const {
  if (block < 1 || block > 3) throw ConfigError("growth schedule: block index must be 1..3");
  switch (mode) {
    case GrowthMode::kFixed:
      return k;
    case GrowthMode::kDoubling:
      return k << (block - 1);
    case GrowthMode::kTableMatched:
      return block == 3 ? 64 : 32;
  }
  return k;
}

std::string GrowthSchedule::describe() const {
  switch (mode) {
    case GrowthMode::kFixed:
      return "fixed:" + std::to_string(k);
    case GrowthMode::kDoubling:
      return "doubling:" + std::to_string(k);
    case GrowthMode::kTableMatched:
      return "table";
  }
  return "?";
}

GrowthSchedule parse_growth(const std::string& text) {
  if (text == "table" || text == "table_matched") return GrowthSchedule::table_matched();
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("growth: expected fixed:<k>, doubling:<k0> or table, got '" + text + "'");
  const std::string head = text.substr(0, colon);
  int k = 0;
  const char* first = text.data() + colon + 1;
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, k);
  if (ec != std::errc() || ptr != last || k < 1) throw ConfigError("growth: bad rate in '" + text + "'");
  if (head == "fixed") return GrowthSchedule::fixed(k);
  if (head == "doubling") return GrowthSchedule::doubling(k);
  throw ConfigError("growth: unknown mode '" + head + "'");
}

void DenseBackboneSpec::validate() const {
  if (input_channels < 1) throw ConfigError("dense backbone: input_channels must be >= 1");
  for (int b = 0; b < 3; ++b) {
    if (layers_per_block[b] < 1) throw ConfigError("dense backbone: every block needs >= 1 layer");
    if (transition_out_channels[b] < 1) throw ConfigError("dense backbone: transition channels must be >= 1");
    if (growth.rate(b + 1) < 1) throw ConfigError("dense backbone: growth rate must be >= 1");
  }
}

void BaselineBackboneSpec::validate() const {
  if (input_channels < 1) throw ConfigError("baseline backbone: input_channels must be >= 1");
  for (int b = 0; b < 3; ++b) {
    if (layers_per_block[b] < 0) throw ConfigError("baseline backbone: layer counts must be >= 0");
    if (channels[b] < 1) throw ConfigError("baseline backbone: channels must be >= 1");
  }
}

std::array<int, 3> BackboneConfig::out_channels() const {
  return kind == BackboneKind::kDense ? dense.transition_out_channels : baseline.channels;
}

template <typename T>
DenseBlock<T>::DenseBlock(int in_channels, int growth_rate, int n_layers, std::mt19937_64& rng)
    : out_channels_(in_channels + n_layers * growth_rate) {
  for (int i = 0; i < n_layers; ++i) stages_.emplace_back(i == 0 ? in_channels : growth_rate, growth_rate, 3, 1, rng);
}

template <typename T>
Var<T> DenseBlock<T>::forward(const Var<T>& x) {
  std::vector<Var<T>> parts{x};
  Var<T> h = x;
  for (auto& s : stages_) {
    h = s.forward(h);
    parts.push_back(h);
  }
  return channel_concat(parts);
}

template <typename T>
void DenseBlock<T>::set_mode(NormMode m) {
  for (auto& s : stages_) s.set_mode(m);
}

template <typename T>
void DenseBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect(prefix + ".layer" + std::to_string(i), out);
}

template <typename T>
TransitionLayer<T>::TransitionLayer(int in_channels, int out_channels, Downsample downsample, std::mt19937_64& rng)
    : downsample_(downsample), aggregate_(in_channels, out_channels, 1, 1, rng) {
  if (downsample_ == Downsample::kStridedConv) reduce_ = ConvBnRelu<T>(out_channels, out_channels, 3, 2, rng);
}

template <typename T>
Var<T> TransitionLayer<T>::forward(const Var<T>& x) {
  auto h = aggregate_.forward(x);
  return downsample_ == Downsample::kAvgPool ? avg_pool2x2(h) : reduce_.forward(h);
}

template <typename T>
void TransitionLayer<T>::set_mode(NormMode m) {
  aggregate_.set_mode(m);
  if (downsample_ == Downsample::kStridedConv) reduce_.set_mode(m);
}

template <typename T>
void TransitionLayer<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  aggregate_.collect(prefix + ".aggregate", out);
  if (downsample_ == Downsample::kStridedConv) reduce_.collect(prefix + ".reduce", out);
}

template <typename T>
DenseBackbone<T>::DenseBackbone(const DenseBackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  int c = spec_.input_channels;
  for (int b = 0; b < 3; ++b) {
    blocks_.emplace_back(c, spec_.growth.rate(b + 1), spec_.layers_per_block[b], rng);
    transitions_.emplace_back(blocks_.back().out_channels(), spec_.transition_out_channels[b], spec_.downsample, rng);
    c = spec_.transition_out_channels[b];
  }
}

template <typename T>
FeatureTaps<T> DenseBackbone<T>::forward(const Var<T>& pseudo_image) {
  if (pseudo_image.shape().size() != 4 || pseudo_image.shape()[1] != spec_.input_channels) {
    throw ConfigError("dense backbone: expected " + std::to_string(spec_.input_channels) + "-channel input, got " +
                      shape_str(pseudo_image.shape()));
  }
  FeatureTaps<T> taps;
  Var<T> h = pseudo_image;
  for (std::size_t b = 0; b < 3; ++b) {
    h = transitions_[b].forward(blocks_[b].forward(h));
    taps[b] = h;
  }
  return taps;
}

template <typename T>
void DenseBackbone<T>::set_mode(NormMode mode) {
  for (auto& b : blocks_) b.set_mode(mode);
  for (auto& t : transitions_) t.set_mode(mode);
}

template <typename T>
void DenseBackbone<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t b = 0; b < 3; ++b) {
    blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
    transitions_[b].collect(prefix + ".transition" + std::to_string(b), out);
  }
}

template <typename T>
BaselineBackbone<T>::BaselineBackbone(const BaselineBackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  int c = spec_.input_channels;
  for (int b = 0; b < 3; ++b) {
    std::vector<ConvBnRelu<T>> stage;
    stage.emplace_back(c, spec_.channels[b], 3, 2, rng);
    for (int i = 0; i < spec_.layers_per_block[b]; ++i) stage.emplace_back(spec_.channels[b], spec_.channels[b], 3, 1, rng);
    stages_.push_back(std::move(stage));
    c = spec_.channels[b];
  }
}

template <typename T>
FeatureTaps<T> BaselineBackbone<T>::forward(const Var<T>& pseudo_image) {
  if (pseudo_image.shape().size() != 4 || pseudo_image.shape()[1] != spec_.input_channels) {
    throw ConfigError("baseline backbone: expected " + std::to_string(spec_.input_channels) + "-channel input, got " +
                      shape_str(pseudo_image.shape()));
  }
  FeatureTaps<T> taps;
  Var<T> h = pseudo_image;
  for (std::size_t b = 0; b < 3; ++b) {
    for (auto& layer : stages_[b]) h = layer.forward(h);
    taps[b] = h;
  }
  return taps;
}

template <typename T>
void BaselineBackbone<T>::set_mode(NormMode mode) {
  for (auto& s : stages_)
    for (auto& l : s) l.set_mode(mode);
}

template <typename T>
void BaselineBackbone<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t b = 0; b < stages_.size(); ++b)
    for (std::size_t i = 0; i < stages_[b].size(); ++i)
      stages_[b][i].collect(prefix + ".block" + std::to_string(b) + ".layer" + std::to_string(i), out);
}

template <typename T>
std::unique_ptr<Backbone<T>> make_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == BackboneKind::kDense) return std::make_unique<DenseBackbone<T>>(cfg.dense, seed);
  return std::make_unique<BaselineBackbone<T>>(cfg.baseline, seed);
}

template class DenseBlock<float>;
template class DenseBlock<double>;
template class TransitionLayer<float>;
template class TransitionLayer<double>;
template class DenseBackbone<float>;
template class DenseBackbone<double>;
template class BaselineBackbone<float>;
template class BaselineBackbone<double>;
template std::unique_ptr<Backbone<float>> make_backbone<float>(const BackboneConfig&, std::uint64_t);
template std::unique_ptr<Backbone<double>> make_backbone<double>(const BackboneConfig&, std::uint64_t);

}  // namespace dpp

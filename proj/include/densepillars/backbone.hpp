#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "densepillars/layers.hpp"

namespace dpp {

enum class GrowthMode { kFixed, kDoubling, kTableMatched };

/// Per-block growth rates of the dense backbone.
///  fixed(k):      k, k, k
///  doubling(k0):  k0, 2 k0, 4 k0
///  table_matched: 32, 32, 64
struct GrowthSchedule {
  GrowthMode mode = GrowthMode::kTableMatched;
  int k = 32;

  static GrowthSchedule fixed(int k) { return {GrowthMode::kFixed, k}; }
  static GrowthSchedule doubling(int k0) { return {GrowthMode::kDoubling, k0}; }
  static GrowthSchedule table_matched() { return {GrowthMode::kTableMatched, 32}; }

  /// Growth rate of block `block` (1-based, 1..3).
  int rate(int block) const;
  std::array<int, 3> rates() const { return {rate(1), rate(2), rate(3)}; }
  std::string describe() const;
};

/// Parses `fixed:<k>`, `doubling:<k0>` or `table`.
GrowthSchedule parse_growth(const std::string& text);

enum class Downsample { kAvgPool, kStridedConv };

struct DenseBackboneSpec {
  std::array<int, 3> layers_per_block{3, 5, 5};
  GrowthSchedule growth;
  std::array<int, 3> transition_out_channels{64, 128, 256};
  int input_channels = 64;
  Downsample downsample = Downsample::kAvgPool;

  void validate() const;
};

struct BaselineBackboneSpec {
  std::array<int, 3> layers_per_block{3, 5, 5};
  std::array<int, 3> channels{64, 128, 256};
  int input_channels = 64;

  void validate() const;
};

enum class BackboneKind { kDense, kBaseline };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kDense;
  DenseBackboneSpec dense;
  BaselineBackboneSpec baseline;

  std::array<int, 3> out_channels() const;
};

/// Three feature taps at strides 2, 4 and 8 of the pseudo-image.
template <typename T>
using FeatureTaps = std::array<Var<T>, 3>;

template <typename T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual FeatureTaps<T> forward(const Var<T>& pseudo_image) = 0;
  virtual void set_mode(NormMode mode) = 0;
  virtual void collect(const std::string& prefix, ParameterSet<T>& out) = 0;
  virtual std::array<int, 3> out_channels() const = 0;
};

/// n chained 3x3 conv-BN-ReLU stages (first C_in -> k, then k -> k), each fed
/// only by the previous stage; the block input and all stage outputs are
/// concatenated once at the end.
template <typename T>
class DenseBlock {
 public:
  DenseBlock(int in_channels, int growth_rate, int n_layers, std::mt19937_64& rng);
  Var<T> forward(const Var<T>& x);
  int out_channels() const { return out_channels_; }
  std::vector<ConvBnRelu<T>>& stages() { return stages_; }
  void set_mode(NormMode m);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  int out_channels_;
  std::vector<ConvBnRelu<T>> stages_;
};

/// 1x1 conv-BN-ReLU aggregation followed by a stride-2 reduction (average
/// pooling, or a 3x3 stride-2 conv-BN-ReLU for the strided variant).
template <typename T>
class TransitionLayer {
 public:
  TransitionLayer(int in_channels, int out_channels, Downsample downsample, std::mt19937_64& rng);
  Var<T> forward(const Var<T>& x);
  void set_mode(NormMode m);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  Downsample downsample_;
  ConvBnRelu<T> aggregate_;
  ConvBnRelu<T> reduce_;  // strided variant only
};

template <typename T>
class DenseBackbone final : public Backbone<T> {
 public:
  DenseBackbone(const DenseBackboneSpec& spec, std::uint64_t seed);
  FeatureTaps<T> forward(const Var<T>& pseudo_image) override;
  void set_mode(NormMode mode) override;
  void collect(const std::string& prefix, ParameterSet<T>& out) override;
  std::array<int, 3> out_channels() const override { return spec_.transition_out_channels; }

  DenseBlock<T>& block(int i) { return blocks_.at(static_cast<std::size_t>(i)); }

 private:
  DenseBackboneSpec spec_;
  std::vector<DenseBlock<T>> blocks_;
  std::vector<TransitionLayer<T>> transitions_;
};

/// Three stages of (stride-2 conv + n same-resolution convs), all
/// conv-BN-ReLU, tapping each stage output.
template <typename T>
class BaselineBackbone final : public Backbone<T> {
 public:
  BaselineBackbone(const BaselineBackboneSpec& spec, std::uint64_t seed);
  FeatureTaps<T> forward(const Var<T>& pseudo_image) override;
  void set_mode(NormMode mode) override;
  void collect(const std::string& prefix, ParameterSet<T>& out) override;
  std::array<int, 3> out_channels() const override { return spec_.channels; }

 private:
  BaselineBackboneSpec spec_;
  std::vector<std::vector<ConvBnRelu<T>>> stages_;
};

template <typename T>
std::unique_ptr<Backbone<T>> make_backbone(const BackboneConfig& cfg, std::uint64_t seed);

}  // namespace dpp

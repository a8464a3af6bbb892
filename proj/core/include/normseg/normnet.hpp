#pragma once

// Miniature 3D encoder-decoder segmentation network with skip connections,
// trained from scratch with a Dice + binary cross-entropy loss and Adam.
// Scalar type is a template parameter: float for training and inference,
// double for gradient checking.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "normseg/lesionforge.hpp"
#include "normseg/rng.hpp"
#include "normseg/vol3.hpp"

namespace normseg::net {

struct NetConfig {
  int levels = 3;
  int base_channels = 8;
  int convs_per_level = 2;
  Dims patch{32, 32, 32};
  Dims tile{0, 0, 0};  // inference tile; zero means `patch`
  double lr = 3e-4;
  int batch_size = 2;
  int iterations = 300;
  double dice_weight = 1.0;
  double ce_weight = 1.0;
  double prob_threshold = 0.95;
  int ensemble_size = 5;
  int vote_quorum = 3;

  Dims inference_tile() const { return tile.size() ? tile : patch; }
  /// Spatial multiple every forward input must satisfy: 2^(levels-1).
  std::uint32_t granularity() const { return 1u << (levels - 1); }
  void validate() const;
};

/// Channel-major dense activation tensor.
template <typename T>
struct Tensor {
  int channels = 0;
  Dims dims{};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, Dims d) : channels(c), dims(d), data(static_cast<std::size_t>(c) * d.size(), T{}) {}
  std::size_t voxels() const { return dims.size(); }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * voxels(); }
};

/// One learnable tensor with its Adam moments.
template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
class TinyNet {
 public:
  TinyNet() = default;
  /// All weights and biases zero.
  explicit TinyNet(const NetConfig& cfg);
  /// He-normal weights, zero biases.
  static TinyNet initialized(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  NetConfig& config() { return cfg_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::size_t parameter_count() const;
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  /// Per-conv channel layout (in, out); the head is the last entry with a 1x1 kernel.
  struct ConvShape {
    int in;
    int out;
    int taps;
  };
  const std::vector<ConvShape>& convs() const { return convs_; }

  Gradients<T> zero_gradients() const;

  template <typename U>
  TinyNet<U> cast() const;

 private:
  NetConfig cfg_{};
  std::vector<ConvShape> convs_;
  std::vector<Param<T>> params_;  // weight, bias per conv, in declaration order
  long step_ = 0;
};

template <typename T>
Tensor<T> to_tensor(const Volume3& v);

/// Sigmoid probabilities, same spatial dims as the input. Throws ShapeError when
/// the dims are not multiples of the network granularity.
template <typename T>
Tensor<T> forward(const TinyNet<T>& net, const Tensor<T>& input);

/// Logits before the sigmoid head (used by equivariance checks).
template <typename T>
Tensor<T> forward_logits(const TinyNet<T>& net, const Tensor<T>& input);

struct LossWeights {
  double dice = 1.0;
  double ce = 1.0;
};

struct LossValue {
  double total = 0.0;
  double dice = 0.0;  // 1 - soft Dice
  double ce = 0.0;    // mean BCE
};

constexpr double kDiceEpsilon = 1e-5;
constexpr double kProbClamp = 1e-7;

/// Value of w_d (1 - Dice) + w_ce BCE; writes dL/dpred into `grad` when it is non-empty.
template <typename T>
LossValue segmentation_loss(std::span<const T> pred, std::span<const std::uint8_t> gt, const LossWeights& w,
                            std::span<T> grad);

/// Forward, loss and reverse pass for one sample; adds `scale` * dL/dparam into `grads`.
template <typename T>
LossValue backward(const TinyNet<T>& net, const Tensor<T>& input, std::span<const std::uint8_t> gt,
                   const LossWeights& w, Gradients<T>& grads, double scale = 1.0);

struct AdamSettings {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update; increments the step counter.
template <typename T>
void adam_step(TinyNet<T>& net, const Gradients<T>& grads, const AdamSettings& s);

/// A training sample cut from a pair.
struct PatchSample {
  Tensor<float> input;
  std::vector<std::uint8_t> gt;
};

/// Patch of `dims` whose centre voxel is `centre` (z, y, x); zero outside the volume.
PatchSample extract_patch(const forge::TrainPair& pair, const Dims& dims, long cz, long cy, long cx);

/// Random patches centred on lung voxels, drawn from the given stream.
std::vector<PatchSample> sample_batch(const std::vector<forge::TrainPair>& pairs, const Dims& dims, int count,
                                      Rng& rng);

double batch_loss(const TinyNet<float>& net, const std::vector<PatchSample>& batch, const LossWeights& w);

using TrainLogger = std::function<void(int iteration, double loss)>;

TinyNet<float> train(const std::vector<forge::TrainPair>& pairs, const NetConfig& cfg, std::uint64_t seed,
                     const TrainLogger& log = {});

/// Sliding-window probabilities over the lung bounding box, overlap-averaged; zero elsewhere.
Volume3 predict_probability(const TinyNet<float>& net, const Volume3& thorax, const Mask3& lung);
/// (probability > threshold) & lung.
Mask3 healthy_from_probability(const Volume3& prob, const Mask3& lung, double threshold);
Mask3 predict_healthy(const TinyNet<float>& net, const Volume3& thorax, const Mask3& lung, double threshold);

/// Voxel set iff at least `quorum` masks set it.
Mask3 ensemble_vote(const std::vector<Mask3>& masks, int quorum);

// TNET model files.
std::string encode_model(const TinyNet<float>& net);
TinyNet<float> decode_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const TinyNet<float>& net);
TinyNet<float> load_model(const std::filesystem::path& path);

}  // namespace normseg::net

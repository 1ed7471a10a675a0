#pragma once

#include "mlcc/episodes.hpp"
#include "mlcc/random.hpp"
#include "mlcc/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlcc {

enum class Arch { kMlp2, kConv4 };

const char* to_string(Arch arch);
Arch parse_arch(const std::string& text);

struct EncoderConfig {
  Arch arch = Arch::kMlp2;
  int embed_dim = 64;
  /// Hidden width of the perceptron, or channel count of each conv block.
  int width = 128;
  std::vector<int> input_shape;
  std::uint64_t init_seed = 0;

  void validate() const;
  Index input_dim() const;
  bool operator==(const EncoderConfig&) const = default;
};

using ParamSet = std::vector<Matrix>;

struct EncoderState {
  EncoderConfig config;
  /// mlp-2: W1, b1, W2, b2. conv-4: (W, b) per block, then the projection.
  ParamSet params;
  std::uint64_t step = 0;

  Index num_parameters() const;
  bool all_finite() const;
};

EncoderState init_encoder(const EncoderConfig& config);

/// Activations kept by a forward pass for the matching backward pass.
struct EncodeTape {
  Matrix input;
  std::vector<Matrix> activations;
  std::vector<std::vector<Eigen::VectorXi>> pool_argmax;
};

/// B x input_dim samples to B x embed_dim embeddings.
Matrix encode(const EncoderState& state, const Matrix& batch, EncodeTape* tape = nullptr);

/// Parameter gradients for dL/d(embeddings), same layout as `state.params`.
ParamSet encode_backward(const EncoderState& state, const EncodeTape& tape, const Matrix& grad_embeddings);

/// True when both passes hit the same ReLU and max-pool pattern, i.e. the
/// encoder is the same affine map on that batch.
bool same_linear_region(const EncoderState& state, const EncodeTape& a, const EncodeTape& b);

ParamSet zeros_like(const ParamSet& params);
void accumulate(ParamSet& into, const ParamSet& grad, Real scale = 1.0);

struct SgdConfig {
  Real lr = 1e-3;
  Real momentum = 0.9;
  Real weight_decay = 5e-4;
};

/// Heavy-ball SGD: v <- mu v + (g + wd theta); theta <- theta - lr v.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamSet& params, const ParamSet& grads);

  const SgdConfig& config() const { return cfg_; }
  const ParamSet& velocity() const { return velocity_; }
  void set_velocity(ParamSet v) { velocity_ = std::move(v); }

 private:
  SgdConfig cfg_;
  ParamSet velocity_;
};

struct PretrainConfig {
  int epochs = 20;
  Real lr = 0.05;
  int batch_size = 64;
  Real momentum = 0.9;
  Real weight_decay = 5e-4;
};

struct PretrainEpoch {
  int epoch = 0;
  Real loss = 0;
  Real accuracy = 0;
};

/// Supervised classification over every base class with a temporary linear
/// head on top of the encoder; the head is discarded. Throws kDivergence if
/// the loss becomes non-finite.
EncoderState pretrain(const EncoderState& init, const DatasetSplit& base_split, const PretrainConfig& cfg, Rng& rng,
                      std::vector<PretrainEpoch>* history = nullptr);

/// Versioned binary checkpoint: magic line, JSON header, raw float64 payload.
void save_encoder(const EncoderState& state, const std::filesystem::path& path);
EncoderState load_encoder(const std::filesystem::path& path);
/// Refuses a checkpoint whose config differs from `expected`.
EncoderState load_encoder(const std::filesystem::path& path, const EncoderConfig& expected);

}  // namespace mlcc

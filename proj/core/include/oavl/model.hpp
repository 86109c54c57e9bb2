#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oavl/caption_engine.hpp"
#include "oavl/nn/graph.hpp"
#include "oavl/nn/tensor.hpp"

namespace oavl::model {

enum class Modality : std::uint8_t { Image, Text };

// Learning-rate group of a parameter.
enum class ParamGroup : std::uint8_t { ImageEncoder, TextEncoder, Projection };

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  int vocab_size = 0;  // 0 = grammar vocabulary size
  int max_len = static_cast<int>(captions::kDefaultMaxLen);
  int embed_dim = 64;   // width of the unprojected embeddings
  int proj_dim = 32;
  double init_temperature = 0.07;
  double min_temperature = 1e-3;
  double max_temperature = 10.0;
};

// Stacked images, [N, 1, H, W].
template <typename Real>
nn::Tensor<Real> image_batch(std::span<const std::vector<float>* const> images, int height, int width);

// Token rows plus the non-pad mask consumed by the text encoder.
struct TokenBatch {
  int rows = 0;
  int max_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  static TokenBatch from(std::span<const captions::TokenSequence> seqs);
};

// Image CNN + token CNN, one linear projection head per modality, learnable
// temperature. Parameters are stored in a fixed order that defines the
// checkpoint layout.
template <typename Real>
class DualEncoder {
 public:
  using Graph = nn::Graph<Real>;

  DualEncoder(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }

  std::vector<nn::Parameter<Real>>& parameters() noexcept { return params_; }
  const std::vector<nn::Parameter<Real>>& parameters() const noexcept { return params_; }
  nn::Parameter<Real>& parameter(const std::string& name);
  ParamGroup group_of(std::size_t index) const { return groups_.at(index); }
  std::size_t parameter_count() const noexcept;
  void zero_grad();

  // Graph wiring. Parameters enter `g` as bound leaves when `trainable`,
  // otherwise as constants.
  struct Binder {
    Graph& g;
    DualEncoder& model;
    bool trainable;
    std::vector<nn::Var> vars;
    nn::Var get(std::size_t index);
  };

  // images: [N, 1, H, W] -> unprojected [N, embed_dim]. When `last_conv` is
  // given, it receives the final conv-stage activations [N, 64, h, w].
  nn::Var encode_image(Binder& b, nn::Var images, nn::Var* last_conv = nullptr) const;
  nn::Var encode_text(Binder& b, const TokenBatch& tokens) const;
  nn::Var project(Binder& b, nn::Var unprojected, Modality modality) const;
  // exp(clamp(log inverse temperature)) = 1 / tau, as a [1] node.
  nn::Var inverse_temperature(Binder& b) const;

  double temperature() const;

  // Frozen-model inference helpers (no graph kept).
  nn::Tensor<Real> embed_images(const nn::Tensor<Real>& images, bool projected);
  nn::Tensor<Real> embed_texts(const TokenBatch& tokens, bool projected);

 private:
  void add(std::string name, nn::Tensor<Real> value, ParamGroup group);

  ModelConfig cfg_;
  std::vector<nn::Parameter<Real>> params_;
  std::vector<ParamGroup> groups_;
};

// Parameter indices, in layout order.
namespace idx {
inline constexpr std::size_t kConv1W = 0, kConv1B = 1, kConv2W = 2, kConv2B = 3, kConv3W = 4, kConv3B = 5;
inline constexpr std::size_t kTokEmb = 6, kPosEmb = 7, kTConv1W = 8, kTConv1B = 9, kTConv2W = 10, kTConv2B = 11;
inline constexpr std::size_t kImgProjW = 12, kImgProjB = 13, kTxtProjW = 14, kTxtProjB = 15, kLogInvTemp = 16;
inline constexpr std::size_t kCount = 17;
}  // namespace idx

// S[i][j] = <I_p[i], T_p[j]>.
template <typename Real>
nn::Var similarity_matrix(nn::Graph<Real>& g, nn::Var image_proj, nn::Var text_proj);

// 1/2 [CE(S/tau, diag) + CE(S^T/tau, diag)]. `inverse_temperature` is [1].
template <typename Real>
nn::Var info_nce_loss(nn::Graph<Real>& g, nn::Var similarity, nn::Var inverse_temperature);

// Mean matched-pair cosine between positive and negative unprojected text embeddings.
template <typename Real>
nn::Var negative_caption_loss(nn::Graph<Real>& g, nn::Var text_pos, nn::Var text_neg);

// info_nce + lambda * negative; throws ValidationError for lambda < 0.
template <typename Real>
nn::Var total_loss(nn::Graph<Real>& g, nn::Var info_nce, nn::Var negative, double lambda);

}  // namespace oavl::model

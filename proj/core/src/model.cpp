#include "oavl/model.hpp"

#include <algorithm>
#include <cmath>

#include "oavl/errors.hpp"
#include "oavl/rng.hpp"

namespace oavl::model {

namespace {

constexpr int kConv1Channels = 16;
constexpr int kConv2Channels = 32;
constexpr int kInferenceChunk = 64;

template <typename Real>
nn::Tensor<Real> gaussian(nn::Shape shape, double stddev, Rng& rng) {
  nn::Tensor<Real> t(std::move(shape));
  for (auto& v : t.data) {
    v = static_cast<Real>(stddev * rng.normal());
  }
  return t;
}

template <typename Real>
nn::Tensor<Real> slice_rows(const nn::Tensor<Real>& t, int begin, int end) {
  nn::Shape s = t.shape;
  const std::size_t row = t.numel() / static_cast<std::size_t>(t.shape[0]);
  s[0] = end - begin;
  return nn::Tensor<Real>(s, std::vector<Real>(t.data.begin() + static_cast<std::ptrdiff_t>(row * begin),
                                               t.data.begin() + static_cast<std::ptrdiff_t>(row * end)));
}

TokenBatch slice_tokens(const TokenBatch& b, int begin, int end) {
  TokenBatch out;
  out.rows = end - begin;
  out.max_len = b.max_len;
  const auto l = static_cast<std::ptrdiff_t>(b.max_len);
  out.ids.assign(b.ids.begin() + begin * l, b.ids.begin() + end * l);
  out.mask.assign(b.mask.begin() + begin * l, b.mask.begin() + end * l);
  return out;
}

}  // namespace

template <typename Real>
nn::Tensor<Real> image_batch(std::span<const std::vector<float>* const> images, int height, int width) {
  const auto per = static_cast<std::size_t>(height * width);
  nn::Tensor<Real> out({static_cast<int>(images.size()), 1, height, width});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != per) {
      throw ValidationError("image batch: image " + std::to_string(i) + " has " + std::to_string(images[i]->size()) +
                            " pixels, expected " + std::to_string(per));
    }
    std::copy(images[i]->begin(), images[i]->end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

TokenBatch TokenBatch::from(std::span<const captions::TokenSequence> seqs) {
  TokenBatch b;
  b.rows = static_cast<int>(seqs.size());
  b.max_len = seqs.empty() ? 0 : static_cast<int>(seqs.front().ids.size());
  for (const auto& s : seqs) {
    if (static_cast<int>(s.ids.size()) != b.max_len) {
      throw ValidationError("token batch: sequences have different lengths");
    }
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      b.ids.push_back(s.ids[i]);
      b.mask.push_back(s.ids[i] != captions::Vocabulary::kPad ? 1 : 0);
    }
  }
  return b;
}

template <typename Real>
DualEncoder<Real>::DualEncoder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size == 0) {
    cfg_.vocab_size = static_cast<int>(captions::Vocabulary::grammar().size());
  }
  if (cfg_.image_height < 8 || cfg_.image_width < 8 || cfg_.max_len < 1 || cfg_.embed_dim < 1 || cfg_.proj_dim < 1) {
    throw ValidationError("model: invalid configuration");
  }
  if (!(cfg_.init_temperature >= cfg_.min_temperature && cfg_.init_temperature <= cfg_.max_temperature)) {
    throw ValidationError("model: initial temperature outside the clamp range");
  }
  Rng rng(seed, 0x30DE1);
  const int e = cfg_.embed_dim;
  auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

  add("image.conv1.weight", gaussian<Real>({kConv1Channels, 1, 3, 3}, he(9), rng), ParamGroup::ImageEncoder);
  add("image.conv1.bias", nn::Tensor<Real>({kConv1Channels}), ParamGroup::ImageEncoder);
  add("image.conv2.weight", gaussian<Real>({kConv2Channels, kConv1Channels, 3, 3}, he(kConv1Channels * 9), rng),
      ParamGroup::ImageEncoder);
  add("image.conv2.bias", nn::Tensor<Real>({kConv2Channels}), ParamGroup::ImageEncoder);
  add("image.conv3.weight", gaussian<Real>({e, kConv2Channels, 3, 3}, he(kConv2Channels * 9), rng),
      ParamGroup::ImageEncoder);
  add("image.conv3.bias", nn::Tensor<Real>({e}), ParamGroup::ImageEncoder);

  add("text.token_embedding", gaussian<Real>({cfg_.vocab_size, e}, 0.5, rng), ParamGroup::TextEncoder);
  add("text.position_embedding", gaussian<Real>({cfg_.max_len, e}, 0.1, rng), ParamGroup::TextEncoder);
  add("text.conv1.weight", gaussian<Real>({e, e, 1, 3}, he(e * 3), rng), ParamGroup::TextEncoder);
  add("text.conv1.bias", nn::Tensor<Real>({e}), ParamGroup::TextEncoder);
  add("text.conv2.weight", gaussian<Real>({e, e, 1, 3}, he(e * 3), rng), ParamGroup::TextEncoder);
  add("text.conv2.bias", nn::Tensor<Real>({e}), ParamGroup::TextEncoder);

  const double proj_std = 1.0 / std::sqrt(static_cast<double>(e));
  add("image.projection.weight", gaussian<Real>({e, cfg_.proj_dim}, proj_std, rng), ParamGroup::Projection);
  add("image.projection.bias", nn::Tensor<Real>({cfg_.proj_dim}), ParamGroup::Projection);
  add("text.projection.weight", gaussian<Real>({e, cfg_.proj_dim}, proj_std, rng), ParamGroup::Projection);
  add("text.projection.bias", nn::Tensor<Real>({cfg_.proj_dim}), ParamGroup::Projection);
  add("log_inverse_temperature",
      nn::Tensor<Real>({1}, {static_cast<Real>(std::log(1.0 / cfg_.init_temperature))}), ParamGroup::Projection);
}

template <typename Real>
void DualEncoder<Real>::add(std::string name, nn::Tensor<Real> value, ParamGroup group) {
  params_.emplace_back(std::move(name), std::move(value));
  groups_.push_back(group);
}

template <typename Real>
nn::Parameter<Real>& DualEncoder<Real>::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) {
      return p;
    }
  }
  throw ValidationError("model: no parameter named " + name);
}

template <typename Real>
std::size_t DualEncoder<Real>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) {
    n += p.value.numel();
  }
  return n;
}

template <typename Real>
void DualEncoder<Real>::zero_grad() {
  for (auto& p : params_) {
    p.zero_grad();
  }
}

template <typename Real>
nn::Var DualEncoder<Real>::Binder::get(std::size_t index) {
  if (vars.empty()) {
    vars.assign(idx::kCount, nn::Var{SIZE_MAX});
  }
  if (vars[index].id == SIZE_MAX) {
    auto& p = model.params_[index];
    vars[index] = trainable ? g.param(p) : g.constant(p.value);
  }
  return vars[index];
}

template <typename Real>
nn::Var DualEncoder<Real>::encode_image(Binder& b, nn::Var images, nn::Var* last_conv) const {
  auto& g = b.g;
  const auto& s = g.shape(images);
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.image_height || s[3] != cfg_.image_width) {
    throw ValidationError("encode_image: expected [N,1," + std::to_string(cfg_.image_height) + "," +
                          std::to_string(cfg_.image_width) + "], got " + nn::shape_string(s));
  }
  auto stage = [&](nn::Var x, std::size_t w, std::size_t bias) {
    return g.relu(g.add_channel_bias(g.conv2d(x, b.get(w), 2, 1), b.get(bias)));
  };
  nn::Var h = stage(images, idx::kConv1W, idx::kConv1B);
  h = stage(h, idx::kConv2W, idx::kConv2B);
  h = stage(h, idx::kConv3W, idx::kConv3B);
  if (last_conv != nullptr) {
    *last_conv = h;
  }
  return g.mean_pool(h);
}

template <typename Real>
nn::Var DualEncoder<Real>::encode_text(Binder& b, const TokenBatch& tokens) const {
  auto& g = b.g;
  if (tokens.max_len > cfg_.max_len) {
    throw ValidationError("encode_text: sequence length " + std::to_string(tokens.max_len) + " exceeds max_len " +
                          std::to_string(cfg_.max_len));
  }
  nn::Var x = g.embed_tokens(tokens.ids, tokens.mask, tokens.rows, tokens.max_len, b.get(idx::kTokEmb),
                             b.get(idx::kPosEmb));
  nn::Var h = g.relu(g.add_channel_bias(g.conv2d(x, b.get(idx::kTConv1W), 1, 0, 1), b.get(idx::kTConv1B)));
  h = g.mask_positions(h, tokens.mask);
  h = g.relu(g.add_channel_bias(g.conv2d(h, b.get(idx::kTConv2W), 1, 0, 1), b.get(idx::kTConv2B)));
  return g.masked_mean_pool(h, tokens.mask);
}

template <typename Real>
nn::Var DualEncoder<Real>::project(Binder& b, nn::Var unprojected, Modality modality) const {
  const bool image = modality == Modality::Image;
  const auto w = b.get(image ? idx::kImgProjW : idx::kTxtProjW);
  const auto bias = b.get(image ? idx::kImgProjB : idx::kTxtProjB);
  return b.g.l2_normalize(b.g.linear(unprojected, w, bias));
}

template <typename Real>
nn::Var DualEncoder<Real>::inverse_temperature(Binder& b) const {
  return b.g.exp_clamped(b.get(idx::kLogInvTemp), static_cast<Real>(std::log(1.0 / cfg_.max_temperature)),
                         static_cast<Real>(std::log(1.0 / cfg_.min_temperature)));
}

template <typename Real>
double DualEncoder<Real>::temperature() const {
  const double s = params_[idx::kLogInvTemp].value.data[0];
  const double lo = std::log(1.0 / cfg_.max_temperature);
  const double hi = std::log(1.0 / cfg_.min_temperature);
  return std::exp(-std::clamp(s, lo, hi));
}

template <typename Real>
nn::Tensor<Real> DualEncoder<Real>::embed_images(const nn::Tensor<Real>& images, bool projected) {
  const int n = images.shape.at(0);
  const int width = projected ? cfg_.proj_dim : cfg_.embed_dim;
  nn::Tensor<Real> out({n, width});
  for (int start = 0; start < n; start += kInferenceChunk) {
    const int end = std::min(n, start + kInferenceChunk);
    Graph g;
    Binder b{g, *this, false, {}};
    nn::Var v = encode_image(b, g.constant(slice_rows(images, start, end)));
    if (projected) {
      v = project(b, v, Modality::Image);
    }
    std::copy(g.value(v).data.begin(), g.value(v).data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

template <typename Real>
nn::Tensor<Real> DualEncoder<Real>::embed_texts(const TokenBatch& tokens, bool projected) {
  const int n = tokens.rows;
  const int width = projected ? cfg_.proj_dim : cfg_.embed_dim;
  nn::Tensor<Real> out({n, width});
  for (int start = 0; start < n; start += kInferenceChunk) {
    const int end = std::min(n, start + kInferenceChunk);
    Graph g;
    Binder b{g, *this, false, {}};
    nn::Var v = encode_text(b, slice_tokens(tokens, start, end));
    if (projected) {
      v = project(b, v, Modality::Text);
    }
    std::copy(g.value(v).data.begin(), g.value(v).data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

template <typename Real>
nn::Var similarity_matrix(nn::Graph<Real>& g, nn::Var image_proj, nn::Var text_proj) {
  return g.matmul_nt(image_proj, text_proj);
}

template <typename Real>
nn::Var info_nce_loss(nn::Graph<Real>& g, nn::Var similarity, nn::Var inverse_temperature) {
  const auto& s = g.shape(similarity);
  if (s.size() != 2 || s[0] != s[1]) {
    throw ValidationError("info_nce_loss: similarity must be square, got " + nn::shape_string(s));
  }
  if (s[0] < 2) {
    throw ValidationError("info_nce_loss: needs at least 2 pairs");
  }
  std::vector<int> diag(static_cast<std::size_t>(s[0]));
  for (int i = 0; i < s[0]; ++i) {
    diag[static_cast<std::size_t>(i)] = i;
  }
  const nn::Var logits = g.mul_scalar(similarity, inverse_temperature);
  const nn::Var image_to_text = g.softmax_cross_entropy(logits, diag);
  const nn::Var text_to_image = g.softmax_cross_entropy(g.transpose(logits), diag);
  return g.scale(g.add(image_to_text, text_to_image), Real(0.5));
}

template <typename Real>
nn::Var negative_caption_loss(nn::Graph<Real>& g, nn::Var text_pos, nn::Var text_neg) {
  if (g.shape(text_pos) != g.shape(text_neg)) {
    throw ValidationError("negative_caption_loss: shape mismatch " + nn::shape_string(g.shape(text_pos)) + " vs " +
                          nn::shape_string(g.shape(text_neg)));
  }
  return g.mean(g.rowwise_dot(g.l2_normalize(text_pos), g.l2_normalize(text_neg)));
}

template <typename Real>
nn::Var total_loss(nn::Graph<Real>& g, nn::Var info_nce, nn::Var negative, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ValidationError("total_loss: lambda must be >= 0");
  }
  if (lambda == 0.0) {
    return info_nce;
  }
  return g.add(info_nce, g.scale(negative, static_cast<Real>(lambda)));
}

template nn::Tensor<float> image_batch<float>(std::span<const std::vector<float>* const>, int, int);
template nn::Tensor<double> image_batch<double>(std::span<const std::vector<float>* const>, int, int);
template class DualEncoder<float>;
template class DualEncoder<double>;
template nn::Var similarity_matrix<float>(nn::Graph<float>&, nn::Var, nn::Var);
template nn::Var similarity_matrix<double>(nn::Graph<double>&, nn::Var, nn::Var);
template nn::Var info_nce_loss<float>(nn::Graph<float>&, nn::Var, nn::Var);
template nn::Var info_nce_loss<double>(nn::Graph<double>&, nn::Var, nn::Var);
template nn::Var negative_caption_loss<float>(nn::Graph<float>&, nn::Var, nn::Var);
template nn::Var negative_caption_loss<double>(nn::Graph<double>&, nn::Var, nn::Var);
template nn::Var total_loss<float>(nn::Graph<float>&, nn::Var, nn::Var, double);
template nn::Var total_loss<double>(nn::Graph<double>&, nn::Var, nn::Var, double);

}  // namespace oavl::model

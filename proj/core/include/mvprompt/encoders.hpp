#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "mvprompt/checkpoint.hpp"
#include "mvprompt/features.hpp"
#include "mvprompt/nn.hpp"
#include "mvprompt/prompting.hpp"
#include "mvprompt/tensor.hpp"

namespace mvp {

struct EncoderDims {
  int image_size = 224;  // vision encoder input side
  int patch_size = 14;   // 224 / 14 = 16 patches per side, 16^2 + 1 = 257 tokens
  int d_enc = 32;
  int d_ctx = 16;
  int local_tokens = 16;
  int resampler_dim = 32;
  int adaptor_hidden = 32;
  int latent_channels = 4;
  int downsample = 4;
  int text_tokens = 8;

  int grid() const { return image_size / patch_size; }
  int hidden_token_count() const { return grid() * grid() + 1; }
};

/// Vision encoder exposing its hidden state before global pooling.
/// Implementations are expected to be pure.
class ImageTokenEncoder {
 public:
  virtual ~ImageTokenEncoder() = default;
  virtual int input_size() const = 0;
  virtual int token_dim() const = 0;
  virtual int token_count() const = 0;
  virtual HiddenTokens encode(const Image& rgb) const = 0;
  virtual void save(Checkpoint& ck, const std::string& prefix) const = 0;
  virtual void load(const Checkpoint& ck, const std::string& prefix) = 0;
};

/// Patch-embedding encoder with a class token, learned position embedding and
/// one pre-norm self-attention block.
class ToyVisionEncoder final : public ImageTokenEncoder {
 public:
  ToyVisionEncoder(const EncoderDims& dims, std::uint64_t seed);

  int input_size() const override { return image_size_; }
  int token_dim() const override { return d_enc_; }
  int token_count() const override { return grid_ * grid_ + 1; }
  HiddenTokens encode(const Image& rgb) const override;
  void save(Checkpoint& ck, const std::string& prefix) const override;
  void load(const Checkpoint& ck, const std::string& prefix) override;

 private:
  int image_size_;
  int patch_;
  int grid_;
  int d_enc_;
  nn::Linear patch_embed_;
  RowVec class_token_;
  Mat position_;
  nn::LayerNorm norm_;
  nn::Linear q_, k_, v_, o_;
};

/// Learned latent queries cross-attending to the encoder hidden tokens.
/// No positional encoding is applied to the inputs.
class TokenResampler {
 public:
  /// expected_inputs == 0 accepts any input token count.
  TokenResampler(const EncoderDims& dims, std::uint64_t seed, int expected_inputs);
  TokenResampler(Mat queries, nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear out, int expected_inputs);

  int output_tokens() const { return static_cast<int>(queries_.rows()); }
  LocalTokens resample(const HiddenTokens& hidden) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  Mat queries_;
  nn::Linear q_, k_, v_, out_;
  int expected_inputs_;
};

/// Token-wise MLP projecting resampled tokens into the cross-attention space.
class LocalAdaptor {
 public:
  LocalAdaptor(const EncoderDims& dims, std::uint64_t seed);
  LocalAdaptor(nn::Linear fc1, nn::Linear fc2, int tokens);

  LocalTokens adapt(const LocalTokens& in) const;
  const nn::Linear& fc1() const { return fc1_; }
  const nn::Linear& fc2() const { return fc2_; }

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  nn::Linear fc1_, fc2_;
  int tokens_;
};

/// Image <-> latent codec. encode must be affine in the image so that its
/// vector-Jacobian product does not depend on the input.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual int channels() const = 0;
  virtual int downsample() const = 0;
  virtual PixelLatent encode(const Image& rgb) const = 0;
  virtual Image decode(const PixelLatent& latent) const = 0;
  /// Gradient w.r.t. the image of <grad_latent, encode(image)>.
  virtual Image encode_vjp(const PixelLatent& grad_latent) const = 0;
  virtual void save(Checkpoint& ck, const std::string& prefix) const = 0;
  virtual void load(const Checkpoint& ck, const std::string& prefix) = 0;
};

/// Per-patch affine autoencoder. Three latent channels start as box-filtered
/// colour means, the rest are seeded random patterns; the decoder is the
/// pseudo-inverse of the encoder.
class ToyPatchAutoencoder final : public LatentCodec {
 public:
  ToyPatchAutoencoder(const EncoderDims& dims, std::uint64_t seed);

  int channels() const override { return channels_; }
  int downsample() const override { return factor_; }
  PixelLatent encode(const Image& rgb) const override;
  Image decode(const PixelLatent& latent) const override;
  Image encode_vjp(const PixelLatent& grad_latent) const override;
  void save(Checkpoint& ck, const std::string& prefix) const override;
  void load(const Checkpoint& ck, const std::string& prefix) override;

 private:
  void refresh_decoder();

  int channels_;
  int factor_;
  Mat encoder_;  // channels x (factor*factor*3)
  RowVec bias_;
  Mat decoder_;  // (factor*factor*3) x channels
};

/// Hash-seeded text embedding: each prompt string maps to its own
/// deterministic T x d_ctx matrix.
class HashTextEncoder {
 public:
  HashTextEncoder(int tokens, int dim, std::uint64_t seed) : tokens_(tokens), dim_(dim), seed_(seed) {}
  TextContext encode(std::string_view prompt) const;
  int tokens() const { return tokens_; }
  int dim() const { return dim_; }

 private:
  int tokens_;
  int dim_;
  std::uint64_t seed_;
};

/// All encoders used by the controllers.
class EncoderSuite {
 public:
  static EncoderSuite toy(const EncoderDims& dims, std::uint64_t seed);

  EncoderSuite(EncoderDims dims, std::shared_ptr<ImageTokenEncoder> vision, TokenResampler resampler,
               LocalAdaptor adaptor, std::shared_ptr<LatentCodec> codec, HashTextEncoder text);

  const EncoderDims& dims() const { return dims_; }
  const ImageTokenEncoder& vision() const { return *vision_; }
  const TokenResampler& resampler() const { return resampler_; }
  const LocalAdaptor& adaptor() const { return adaptor_; }
  const LatentCodec& codec() const { return *codec_; }
  const HashTextEncoder& text() const { return text_; }

  /// Resizes to the vision encoder input size, then encodes.
  HiddenTokens hidden_tokens(const Image& rgb) const;
  /// adapt(resample(hidden)): the single-image local-controller path.
  LocalTokens local_tokens(const HiddenTokens& hidden) const;

  /// Cached features when valid, freshly computed otherwise.
  HiddenTokens hidden_for(const ImagePrompt& prompt) const;
  PixelLatent latent_for(const ImagePrompt& prompt) const;

  /// Prompt with both caches filled.
  ImagePrompt prepare(const ImagePrompt& prompt) const;
  PromptSet prepare(const PromptSet& prompts) const;

  void save(Checkpoint& ck) const;
  void load(const Checkpoint& ck);

 private:
  EncoderDims dims_;
  std::shared_ptr<ImageTokenEncoder> vision_;
  TokenResampler resampler_;
  LocalAdaptor adaptor_;
  std::shared_ptr<LatentCodec> codec_;
  HashTextEncoder text_;
};

/// Free-function entry points over a suite.
HiddenTokens encode_image_hidden(const EncoderSuite& enc, const Image& rgb);
LocalTokens resample_tokens(const EncoderSuite& enc, const HiddenTokens& hidden);
LocalTokens adapt_local_tokens(const EncoderSuite& enc, const LocalTokens& tokens);
PixelLatent encode_pixel_latent(const EncoderSuite& enc, const Image& rgb);
Image decode_pixel_latent(const EncoderSuite& enc, const PixelLatent& latent);
TextContext encode_text(const EncoderSuite& enc, std::string_view prompt);

}  // namespace mvp

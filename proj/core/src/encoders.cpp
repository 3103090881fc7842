#include "mvprompt/encoders.hpp"

#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/image_io.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {

// ---------------------------------------------------------------------------
// ToyVisionEncoder

ToyVisionEncoder::ToyVisionEncoder(const EncoderDims& dims, std::uint64_t seed)
    : image_size_(dims.image_size),
      patch_(dims.patch_size),
      grid_(dims.grid()),
      d_enc_(dims.d_enc),
      norm_(dims.d_enc) {
  if (dims.patch_size <= 0 || dims.image_size % dims.patch_size != 0) {
    throw DimensionError("vision encoder: image size must be a multiple of the patch size");
  }
  Rng rng(derive_seed(seed, "vision_encoder"));
  patch_embed_ = nn::Linear(patch_ * patch_ * 3, d_enc_, rng);
  class_token_ = rng.normal_matrix(1, d_enc_, 0.5);
  position_ = rng.normal_matrix(grid_ * grid_ + 1, d_enc_, 0.1);
  q_ = nn::Linear(d_enc_, d_enc_, rng);
  k_ = nn::Linear(d_enc_, d_enc_, rng);
  v_ = nn::Linear(d_enc_, d_enc_, rng);
  o_ = nn::Linear(d_enc_, d_enc_, rng, 0.5);
}

HiddenTokens ToyVisionEncoder::encode(const Image& rgb) const {
  if (!rgb.square()) {
    throw DimensionError("vision encoder: image must be square, got " + std::to_string(rgb.width) + "x" +
                         std::to_string(rgb.height));
  }
  if (rgb.width != image_size_) {
    throw DimensionError("vision encoder: expected " + std::to_string(image_size_) + "x" +
                         std::to_string(image_size_) + " input, got " + std::to_string(rgb.width) + "x" +
                         std::to_string(rgb.height));
  }
  const int n_patch = grid_ * grid_;
  Mat patches(n_patch, patch_ * patch_ * 3);
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      const int row = gy * grid_ + gx;
      int col = 0;
      for (int y = 0; y < patch_; ++y) {
        for (int x = 0; x < patch_; ++x) {
          for (int c = 0; c < 3; ++c) patches(row, col++) = 2.0 * rgb.at(gy * patch_ + y, gx * patch_ + x, c) - 1.0;
        }
      }
    }
  }
  Mat x(n_patch + 1, d_enc_);
  x.row(0) = class_token_;
  x.bottomRows(n_patch) = patch_embed_.forward(patches);
  x += position_;

  const Mat h = norm_.forward(x);
  x += o_.forward(nn::attention(q_.forward(h), k_.forward(h), v_.forward(h)));
  return {x};
}

void ToyVisionEncoder::save(Checkpoint& ck, const std::string& prefix) const {
  patch_embed_.save(ck, prefix + ".patch_embed");
  ck.put(prefix + ".class_token", class_token_);
  ck.put(prefix + ".position", position_);
  norm_.save(ck, prefix + ".norm");
  q_.save(ck, prefix + ".q");
  k_.save(ck, prefix + ".k");
  v_.save(ck, prefix + ".v");
  o_.save(ck, prefix + ".o");
}

void ToyVisionEncoder::load(const Checkpoint& ck, const std::string& prefix) {
  patch_embed_.load(ck, prefix + ".patch_embed");
  class_token_ = ck.vector(prefix + ".class_token", d_enc_);
  position_ = ck.matrix(prefix + ".position", grid_ * grid_ + 1, d_enc_);
  norm_.load(ck, prefix + ".norm");
  q_.load(ck, prefix + ".q");
  k_.load(ck, prefix + ".k");
  v_.load(ck, prefix + ".v");
  o_.load(ck, prefix + ".o");
}

// ---------------------------------------------------------------------------
// TokenResampler

TokenResampler::TokenResampler(const EncoderDims& dims, std::uint64_t seed, int expected_inputs)
    : expected_inputs_(expected_inputs) {
  Rng rng(derive_seed(seed, "resampler"));
  queries_ = rng.normal_matrix(dims.local_tokens, dims.d_enc, 1.0);
  q_ = nn::Linear(dims.d_enc, dims.resampler_dim, rng);
  k_ = nn::Linear(dims.d_enc, dims.resampler_dim, rng);
  v_ = nn::Linear(dims.d_enc, dims.resampler_dim, rng);
  out_ = nn::Linear(dims.resampler_dim, dims.d_ctx, rng);
}

TokenResampler::TokenResampler(Mat queries, nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear out,
                               int expected_inputs)
    : queries_(std::move(queries)),
      q_(std::move(q)),
      k_(std::move(k)),
      v_(std::move(v)),
      out_(std::move(out)),
      expected_inputs_(expected_inputs) {}

LocalTokens TokenResampler::resample(const HiddenTokens& hidden) const {
  if (expected_inputs_ > 0 && hidden.count() != expected_inputs_) {
    throw DimensionError("resampler: expected " + std::to_string(expected_inputs_) + " hidden tokens, got " +
                         std::to_string(hidden.count()));
  }
  if (hidden.count() == 0) throw DimensionError("resampler: no input tokens");
  if (hidden.tokens.cols() != queries_.cols()) throw DimensionError("resampler: token width mismatch");
  const Mat attended = nn::attention(q_.forward(queries_), k_.forward(hidden.tokens), v_.forward(hidden.tokens));
  return {out_.forward(attended)};
}

void TokenResampler::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".queries", queries_);
  q_.save(ck, prefix + ".q");
  k_.save(ck, prefix + ".k");
  v_.save(ck, prefix + ".v");
  out_.save(ck, prefix + ".out");
}

void TokenResampler::load(const Checkpoint& ck, const std::string& prefix) {
  queries_ = ck.matrix(prefix + ".queries", static_cast<int>(queries_.rows()), static_cast<int>(queries_.cols()));
  q_.load(ck, prefix + ".q");
  k_.load(ck, prefix + ".k");
  v_.load(ck, prefix + ".v");
  out_.load(ck, prefix + ".out");
}

// ---------------------------------------------------------------------------
// LocalAdaptor

LocalAdaptor::LocalAdaptor(const EncoderDims& dims, std::uint64_t seed) : tokens_(dims.local_tokens) {
  Rng rng(derive_seed(seed, "local_adaptor"));
  fc1_ = nn::Linear(dims.d_ctx, dims.adaptor_hidden, rng);
  fc2_ = nn::Linear(dims.adaptor_hidden, dims.d_ctx, rng);
}

LocalAdaptor::LocalAdaptor(nn::Linear fc1, nn::Linear fc2, int tokens)
    : fc1_(std::move(fc1)), fc2_(std::move(fc2)), tokens_(tokens) {}

LocalTokens LocalAdaptor::adapt(const LocalTokens& in) const {
  if (in.count() != tokens_) {
    throw DimensionError("local adaptor: expected " + std::to_string(tokens_) + " tokens, got " +
                         std::to_string(in.count()));
  }
  return {fc2_.forward(nn::gelu(fc1_.forward(in.tokens)))};
}

void LocalAdaptor::save(Checkpoint& ck, const std::string& prefix) const {
  fc1_.save(ck, prefix + ".fc1");
  fc2_.save(ck, prefix + ".fc2");
}

void LocalAdaptor::load(const Checkpoint& ck, const std::string& prefix) {
  fc1_.load(ck, prefix + ".fc1");
  fc2_.load(ck, prefix + ".fc2");
}

// ---------------------------------------------------------------------------
// ToyPatchAutoencoder

ToyPatchAutoencoder::ToyPatchAutoencoder(const EncoderDims& dims, std::uint64_t seed)
    : channels_(dims.latent_channels), factor_(dims.downsample) {
  if (channels_ < 1 || factor_ < 1) throw DimensionError("autoencoder: bad configuration");
  const int patch_len = factor_ * factor_ * 3;
  if (channels_ > patch_len) throw DimensionError("autoencoder: more channels than patch entries");
  Rng rng(derive_seed(seed, "pixel_autoencoder"));
  encoder_ = Mat::Zero(channels_, patch_len);
  const double inv_area = 1.0 / (factor_ * factor_);
  for (int ch = 0; ch < channels_; ++ch) {
    for (int i = 0; i < patch_len; ++i) {
      const int color = i % 3;
      if (ch < 3) {
        encoder_(ch, i) = (color == ch ? inv_area : 0.0) + 0.02 * inv_area * rng.normal();
      } else {
        encoder_(ch, i) = inv_area * rng.normal();
      }
    }
  }
  bias_ = RowVec::Zero(channels_);
  refresh_decoder();
}

void ToyPatchAutoencoder::refresh_decoder() {
  // Moore-Penrose pseudo-inverse of the full-row-rank encoder: E^T (E E^T)^-1
  const Mat gram = encoder_ * encoder_.transpose();
  decoder_ = encoder_.transpose() * gram.inverse();
}

PixelLatent ToyPatchAutoencoder::encode(const Image& rgb) const {
  if (!rgb.square()) throw DimensionError("pixel encoder: image must be square");
  if (rgb.width % factor_ != 0) {
    throw DimensionError("pixel encoder: image side " + std::to_string(rgb.width) + " not divisible by " +
                         std::to_string(factor_));
  }
  const int h = rgb.height / factor_;
  const int w = rgb.width / factor_;
  PixelLatent z(channels_, h, w);
  Eigen::VectorXd patch(factor_ * factor_ * 3);
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      int i = 0;
      for (int y = 0; y < factor_; ++y) {
        for (int x = 0; x < factor_; ++x) {
          for (int c = 0; c < 3; ++c) patch[i++] = 2.0 * rgb.at(py * factor_ + y, px * factor_ + x, c) - 1.0;
        }
      }
      const Eigen::VectorXd code = encoder_ * patch;
      for (int ch = 0; ch < channels_; ++ch) z.at(ch, py, px) = code[ch] + bias_[ch];
    }
  }
  return z;
}

Image ToyPatchAutoencoder::decode(const PixelLatent& latent) const {
  if (latent.channels != channels_) throw DimensionError("pixel decoder: channel mismatch");
  Image img(latent.width * factor_, latent.height * factor_);
  Eigen::VectorXd code(channels_);
  for (int py = 0; py < latent.height; ++py) {
    for (int px = 0; px < latent.width; ++px) {
      for (int ch = 0; ch < channels_; ++ch) code[ch] = latent.at(ch, py, px) - bias_[ch];
      const Eigen::VectorXd patch = decoder_ * code;
      int i = 0;
      for (int y = 0; y < factor_; ++y) {
        for (int x = 0; x < factor_; ++x) {
          for (int c = 0; c < 3; ++c) {
            img.at(py * factor_ + y, px * factor_ + x, c) = std::clamp(0.5 * (patch[i++] + 1.0), 0.0, 1.0);
          }
        }
      }
    }
  }
  return img;
}

Image ToyPatchAutoencoder::encode_vjp(const PixelLatent& grad) const {
  if (grad.channels != channels_) throw DimensionError("pixel encoder vjp: channel mismatch");
  Image g(grad.width * factor_, grad.height * factor_);
  Eigen::VectorXd code(channels_);
  for (int py = 0; py < grad.height; ++py) {
    for (int px = 0; px < grad.width; ++px) {
      for (int ch = 0; ch < channels_; ++ch) code[ch] = grad.at(ch, py, px);
      // d/d(rgb) of E (2 rgb - 1)
      const Eigen::VectorXd patch = 2.0 * (encoder_.transpose() * code);
      int i = 0;
      for (int y = 0; y < factor_; ++y) {
        for (int x = 0; x < factor_; ++x) {
          for (int c = 0; c < 3; ++c) g.at(py * factor_ + y, px * factor_ + x, c) = patch[i++];
        }
      }
    }
  }
  return g;
}

void ToyPatchAutoencoder::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".encoder", encoder_);
  ck.put(prefix + ".bias", bias_);
}

void ToyPatchAutoencoder::load(const Checkpoint& ck, const std::string& prefix) {
  encoder_ = ck.matrix(prefix + ".encoder", channels_, factor_ * factor_ * 3);
  bias_ = ck.vector(prefix + ".bias", channels_);
  refresh_decoder();
}

// ---------------------------------------------------------------------------
// Text

TextContext HashTextEncoder::encode(std::string_view prompt) const {
  if (prompt.empty()) throw ConfigError("text encoder: prompt must not be empty");
  Rng rng(derive_seed(seed_, prompt));
  return {rng.normal_matrix(tokens_, dim_, 1.0)};
}

// ---------------------------------------------------------------------------
// EncoderSuite

EncoderSuite EncoderSuite::toy(const EncoderDims& dims, std::uint64_t seed) {
  return EncoderSuite(dims, std::make_shared<ToyVisionEncoder>(dims, seed),
                      TokenResampler(dims, seed, dims.hidden_token_count()), LocalAdaptor(dims, seed),
                      std::make_shared<ToyPatchAutoencoder>(dims, seed),
                      HashTextEncoder(dims.text_tokens, dims.d_ctx, derive_seed(seed, "text")));
}

EncoderSuite::EncoderSuite(EncoderDims dims, std::shared_ptr<ImageTokenEncoder> vision, TokenResampler resampler,
                           LocalAdaptor adaptor, std::shared_ptr<LatentCodec> codec, HashTextEncoder text)
    : dims_(dims),
      vision_(std::move(vision)),
      resampler_(std::move(resampler)),
      adaptor_(std::move(adaptor)),
      codec_(std::move(codec)),
      text_(text) {}

HiddenTokens EncoderSuite::hidden_tokens(const Image& rgb) const {
  const int side = vision_->input_size();
  return vision_->encode(resize_bilinear(rgb, side, side));
}

LocalTokens EncoderSuite::local_tokens(const HiddenTokens& hidden) const {
  return adaptor_.adapt(resampler_.resample(hidden));
}

HiddenTokens EncoderSuite::hidden_for(const ImagePrompt& prompt) const {
  if (prompt.cache_valid() && prompt.hidden_tokens()) return *prompt.hidden_tokens();
  return hidden_tokens(prompt.rgb());
}

PixelLatent EncoderSuite::latent_for(const ImagePrompt& prompt) const {
  if (prompt.cache_valid() && prompt.pixel_latent()) return *prompt.pixel_latent();
  return codec_->encode(prompt.rgb());
}

ImagePrompt EncoderSuite::prepare(const ImagePrompt& prompt) const {
  if (prompt.cache_valid() && prompt.pixel_latent() && prompt.hidden_tokens()) return prompt;
  return prompt.with_cache(codec_->encode(prompt.rgb()), hidden_tokens(prompt.rgb()));
}

PromptSet EncoderSuite::prepare(const PromptSet& prompts) const {
  std::vector<ImagePrompt> out;
  for (const auto& p : prompts.prompts()) out.push_back(prepare(p));
  return PromptSet(std::move(out));
}

void EncoderSuite::save(Checkpoint& ck) const {
  vision_->save(ck, "vision");
  resampler_.save(ck, "resampler");
  adaptor_.save(ck, "local_adaptor");
  codec_->save(ck, "codec");
}

void EncoderSuite::load(const Checkpoint& ck) {
  vision_->load(ck, "vision");
  resampler_.load(ck, "resampler");
  adaptor_.load(ck, "local_adaptor");
  codec_->load(ck, "codec");
}

HiddenTokens encode_image_hidden(const EncoderSuite& enc, const Image& rgb) { return enc.vision().encode(rgb); }

LocalTokens resample_tokens(const EncoderSuite& enc, const HiddenTokens& hidden) {
  return enc.resampler().resample(hidden);
}

LocalTokens adapt_local_tokens(const EncoderSuite& enc, const LocalTokens& tokens) {
  return enc.adaptor().adapt(tokens);
}

PixelLatent encode_pixel_latent(const EncoderSuite& enc, const Image& rgb) { return enc.codec().encode(rgb); }

Image decode_pixel_latent(const EncoderSuite& enc, const PixelLatent& latent) { return enc.codec().decode(latent); }

TextContext encode_text(const EncoderSuite& enc, std::string_view prompt) { return enc.text().encode(prompt); }

}  // namespace mvp

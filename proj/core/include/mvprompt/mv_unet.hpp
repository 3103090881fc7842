#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mvprompt/checkpoint.hpp"
#include "mvprompt/controllers.hpp"
#include "mvprompt/encoders.hpp"
#include "mvprompt/nn.hpp"
#include "mvprompt/prompting.hpp"
#include "mvprompt/sampler.hpp"

namespace mvp {

/// Self-attention over the flattened (frames x spatial) token set of one
/// stack. Projections are shared by all frames and there is no positional
/// encoding over the frame axis.
class DenseAttention3D {
 public:
  DenseAttention3D(int channels, Rng& rng);
  DenseAttention3D(nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear o);

  /// frames[i] is (h*w) x channels; returns the attention output per frame.
  std::vector<Mat> forward(const std::vector<Mat>& frames) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  nn::Linear q_, k_, v_, o_;
};

/// Frame tokens attend to the concatenated [text ; local] context.
class CrossAttention {
 public:
  CrossAttention(int channels, int context_dim, Rng& rng);
  CrossAttention(nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear o);

  Mat forward(const Mat& x, const Mat& context) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  nn::Linear q_, k_, v_, o_;
};

/// Stack-level entry points: channels are the attention features and each
/// spatial position of each frame is one token.
StackedFrames dense_3d_attention(const DenseAttention3D& attn, const StackedFrames& stacked);
StackedFrames cross_attention(const CrossAttention& attn, const StackedFrames& frames, const TextContext& text,
                              const LocalContext& local);

/// [text ; local] token matrix.
Mat context_tokens(const TextContext& text, const LocalContext& local);

struct UNetDims {
  int latent_channels = 4;
  int base_channels = 16;
  int mid_channels = 32;
  int groups = 4;
  int d_ctx = 16;
  int d_emb = 32;
  int d_time = 16;
  int d_cam = 16;
};

/// Per-frame inputs to one denoiser evaluation.
struct FrameConditioning {
  std::vector<double> timesteps;    // one per frame; prompt frames use 0
  std::vector<RowVec> cameras;      // one camera embedding per frame
  Mat context;                      // cross-attention tokens
};

/// Toy multi-view U-Net: 2 down blocks, 1 mid block, 2 up blocks, each a
/// residual block followed by [3D dense self-attention, cross-attention, MLP].
class MultiViewUNet {
 public:
  MultiViewUNet(const UNetDims& dims, std::uint64_t seed);

  const UNetDims& dims() const { return dims_; }

  /// Noise prediction for every frame of the stack (prompt frames included).
  FrameTensor forward_all(const FrameTensor& stacked, const FrameConditioning& cond) const;
  /// Noise prediction for the 4 view slots; prompt-slot outputs are discarded.
  MultiViewLatent forward(const StackedFrames& stacked, const FrameConditioning& cond) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  struct ResBlock {
    nn::GroupNorm norm1, norm2;
    nn::Conv2d conv1, conv2;
    nn::Linear emb_proj;
    bool has_skip = false;
    nn::Linear skip;

    ResBlock() = default;
    ResBlock(int in, int out, int groups, int d_emb, Rng& rng);
    std::vector<Mat> forward(const std::vector<Mat>& x, const std::vector<RowVec>& emb, int h, int w) const;
    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);
  };

  struct TransformerBlock {
    nn::LayerNorm norm1, norm2, norm3;
    DenseAttention3D self_attn;
    CrossAttention cross_attn;
    nn::Linear ff1, ff2;

    TransformerBlock(int channels, int d_ctx, Rng& rng);
    std::vector<Mat> forward(std::vector<Mat> x, const Mat& context) const;
    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);
  };

  struct Level {
    ResBlock res;
    TransformerBlock attn;
  };

  std::vector<Mat> run_level(const Level& level, const std::vector<Mat>& x, const std::vector<RowVec>& emb,
                             const Mat& context, int h, int w) const;

  UNetDims dims_;
  nn::Linear time1_, time2_, cam_proj_;
  nn::Conv2d conv_in_;
  std::vector<Level> down_;
  std::vector<nn::Conv2d> downsample_;
  std::vector<Level> mid_;
  std::vector<nn::Conv2d> upsample_;
  std::vector<Level> up_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

/// Everything needed for one multi-view denoiser.
struct MultiViewModel {
  EncoderSuite encoders;
  CameraEmbedder cameras;
  MultiViewUNet unet;

  struct Dims {
    EncoderDims encoder;
    UNetDims unet;
  };
  static MultiViewModel toy(const Dims& dims, std::uint64_t seed);

  std::array<CameraEmbedding, 4> rig_embeddings() const;

  void save(Checkpoint& ck) const;
  void load(const Checkpoint& ck);
};

/// Resolved conditioning for a (prompt set, controller config) pair.
struct Conditioning {
  TextContext text;
  LocalContext local;
  std::vector<PixelLatent> prompt_latents;
  std::vector<ViewLabel> prompt_labels;
  std::array<CameraEmbedding, 4> view_cameras;
  std::vector<CameraEmbedding> prompt_cameras;
};

Conditioning make_conditioning(const MultiViewModel& model, std::span<const CameraEmbedding, 4> cams,
                               const TextContext& text, const PromptSet& prompts, const ControllerConfig& config);
/// The single-image path: one local block and one pixel slot from `front`.
Conditioning make_single_image_conditioning(const MultiViewModel& model, std::span<const CameraEmbedding, 4> cams,
                                            const TextContext& text, const ImagePrompt& front);
/// Text and local tokens zeroed, pixel slots kept (unconditional branch for guidance).
Conditioning unconditional(const Conditioning& cond);

/// Stacks `noisy` with the conditioning's prompt latents and predicts view noise.
MultiViewLatent denoise(const MultiViewModel& model, const MultiViewLatent& noisy, int t, const Conditioning& cond);

MultiViewLatent unet_forward(const MultiViewModel& model, const MultiViewLatent& noisy, int t,
                             std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                             const PromptSet& prompts, const ControllerConfig& config);

/// Baseline single-image forward pass (no PromptSet/ControllerConfig machinery).
MultiViewLatent baseline_forward(const MultiViewModel& model, const MultiViewLatent& noisy, int t,
                                 std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                                 const ImagePrompt& front);

/// Conditioned denoiser with optional classifier-free guidance.
class ConditionedDenoiser final : public NoisePredictor {
 public:
  ConditionedDenoiser(const MultiViewModel& model, Conditioning cond, double guidance_scale = 1.0);
  FrameTensor predict(const FrameTensor& x_t, int t) const override;

 private:
  const MultiViewModel& model_;
  Conditioning cond_;
  Conditioning uncond_;
  double guidance_;
};

MultiViewLatent ddim_sample(const MultiViewModel& model, const NoiseSchedule& schedule, int steps, std::uint64_t seed,
                            std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                            const PromptSet& prompts, const ControllerConfig& config, double guidance_scale = 1.0);

/// Baseline single-image sampler.
MultiViewLatent baseline_ddim_sample(const MultiViewModel& model, const NoiseSchedule& schedule, int steps,
                                     std::uint64_t seed, std::span<const CameraEmbedding, 4> cams,
                                     const TextContext& text, const ImagePrompt& front, double guidance_scale = 1.0);

}  // namespace mvp

#pragma once

#include <span>
#include <vector>

#include "mvprompt/encoders.hpp"
#include "mvprompt/prompting.hpp"
#include "mvprompt/tensor.hpp"

namespace mvp {

/// The four generated view latents, (b, 4, c, h, w), frames in rig order.
class MultiViewLatent {
 public:
  static constexpr int kViews = 4;

  MultiViewLatent() = default;
  explicit MultiViewLatent(FrameTensor data);
  static MultiViewLatent zeros(int batch, int channels, int height, int width);

  const FrameTensor& data() const { return data_; }
  FrameTensor& data() { return data_; }
  const FrameShape& shape() const { return data_.shape(); }

  bool operator==(const MultiViewLatent& o) const { return data_ == o.data_; }

 private:
  FrameTensor data_;
};

/// Concatenated local-controller tokens, one 16-token block per prompt.
struct LocalContext {
  Mat tokens;                         // (16 * blocks) x d_ctx
  std::vector<ViewLabel> provenance;  // one label per block
  int count() const { return static_cast<int>(tokens.rows()); }
};

struct FrameRole {
  enum class Kind { view, prompt };
  Kind kind = Kind::view;
  ViewLabel label = ViewLabel::front;
  bool operator==(const FrameRole&) const = default;
};

/// (b, 4 + N, c, h, w): the four view slots in rig order, then N prompt slots.
struct StackedFrames {
  FrameTensor data;
  std::vector<FrameRole> roles;

  int frames() const { return data.shape().frames; }
  int prompt_count() const { return frames() - MultiViewLatent::kViews; }
};

/// Single-image local path: adapt(resample(hidden)).
LocalTokens local_tokens_for(const EncoderSuite& enc, const ImagePrompt& prompt);

/// Concatenates already-computed token blocks in the given order.
LocalContext concat_local_tokens(std::span<const LocalTokens> blocks, std::span<const ViewLabel> labels);

/// Local context for the prompts whose labels are in `views`, in prompt-set order.
LocalContext build_local_context(const EncoderSuite& enc, const PromptSet& prompts, const ViewSet& views);
/// Validates `config` against `prompts`, then uses config.local_views.
LocalContext build_local_context(const EncoderSuite& enc, const PromptSet& prompts, const ControllerConfig& config);

/// Copies view latents and clean prompt latents into one stack.
StackedFrames stack_frames(const MultiViewLatent& views, std::span<const PixelLatent> prompt_latents,
                           std::span<const ViewLabel> prompt_labels);

StackedFrames stack_pixel_latents(const EncoderSuite& enc, const MultiViewLatent& views, const PromptSet& prompts,
                                  const ViewSet& pixel_views);
StackedFrames stack_pixel_latents(const EncoderSuite& enc, const MultiViewLatent& views, const PromptSet& prompts,
                                  const ControllerConfig& config);

/// Drops the prompt slots.
MultiViewLatent unstack_views(const StackedFrames& stacked);

}  // namespace mvp

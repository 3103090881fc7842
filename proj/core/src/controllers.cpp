#include "mvprompt/controllers.hpp"

#include <algorithm>

#include "mvprompt/errors.hpp"

namespace mvp {

MultiViewLatent::MultiViewLatent(FrameTensor data) : data_(std::move(data)) {
  if (data_.shape().frames != kViews) {
    throw DimensionError("multi-view latent: expected 4 frames, got shape " + data_.shape().str());
  }
}

MultiViewLatent MultiViewLatent::zeros(int batch, int channels, int height, int width) {
  return MultiViewLatent(FrameTensor({batch, kViews, channels, height, width}));
}

LocalTokens local_tokens_for(const EncoderSuite& enc, const ImagePrompt& prompt) {
  return enc.local_tokens(enc.hidden_for(prompt));
}

LocalContext concat_local_tokens(std::span<const LocalTokens> blocks, std::span<const ViewLabel> labels) {
  if (blocks.size() != labels.size()) throw DimensionError("local context: one label per block required");
  if (blocks.empty()) throw ConfigError("local context: no prompts selected");
  const auto width = blocks.front().tokens.cols();
  Eigen::Index rows = 0;
  for (const auto& b : blocks) {
    if (b.tokens.cols() != width) throw DimensionError("local context: token width mismatch");
    rows += b.tokens.rows();
  }
  LocalContext ctx;
  ctx.tokens.resize(rows, width);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    ctx.tokens.middleRows(r, b.tokens.rows()) = b.tokens;
    r += b.tokens.rows();
  }
  ctx.provenance.assign(labels.begin(), labels.end());
  return ctx;
}

LocalContext build_local_context(const EncoderSuite& enc, const PromptSet& prompts, const ViewSet& views) {
  if (!views.subset_of(prompts.labels())) {
    throw ConfigError("local context: requested views '" + views.letters() + "' but prompt set has '" +
                      prompts.labels().letters() + "'");
  }
  std::vector<LocalTokens> blocks;
  std::vector<ViewLabel> labels;
  for (const ImagePrompt* p : prompts.select(views)) {
    blocks.push_back(local_tokens_for(enc, *p));
    labels.push_back(p->label());
  }
  return concat_local_tokens(blocks, labels);
}

LocalContext build_local_context(const EncoderSuite& enc, const PromptSet& prompts, const ControllerConfig& config) {
  config.validate_against(prompts);
  return build_local_context(enc, prompts, config.local_views);
}

StackedFrames stack_frames(const MultiViewLatent& views, std::span<const PixelLatent> prompt_latents,
                           std::span<const ViewLabel> prompt_labels) {
  if (prompt_latents.size() != prompt_labels.size()) throw DimensionError("stack: one label per prompt latent");
  const FrameShape vs = views.shape();
  for (const auto& z : prompt_latents) {
    if (z.channels != vs.channels || z.height != vs.height || z.width != vs.width) {
      throw DimensionError("stack: prompt latent (" + std::to_string(z.channels) + "," + std::to_string(z.height) +
                           "," + std::to_string(z.width) + ") does not match view latent shape " + vs.str());
    }
  }
  const int n = static_cast<int>(prompt_latents.size());
  StackedFrames out;
  out.data = FrameTensor({vs.batch, MultiViewLatent::kViews + n, vs.channels, vs.height, vs.width});
  for (int b = 0; b < vs.batch; ++b) {
    for (int f = 0; f < MultiViewLatent::kViews; ++f) {
      auto src = views.data().frame(b, f);
      std::copy(src.begin(), src.end(), out.data.frame(b, f).begin());
    }
    for (int i = 0; i < n; ++i) {
      std::copy(prompt_latents[i].values.begin(), prompt_latents[i].values.end(),
                out.data.frame(b, MultiViewLatent::kViews + i).begin());
    }
  }
  for (auto v : kRigOrder) out.roles.push_back({FrameRole::Kind::view, v});
  for (auto v : prompt_labels) out.roles.push_back({FrameRole::Kind::prompt, v});
  return out;
}

StackedFrames stack_pixel_latents(const EncoderSuite& enc, const MultiViewLatent& views, const PromptSet& prompts,
                                  const ViewSet& pixel_views) {
  if (!pixel_views.subset_of(prompts.labels())) {
    throw ConfigError("stack: requested views '" + pixel_views.letters() + "' but prompt set has '" +
                      prompts.labels().letters() + "'");
  }
  std::vector<PixelLatent> latents;
  std::vector<ViewLabel> labels;
  for (const ImagePrompt* p : prompts.select(pixel_views)) {
    latents.push_back(enc.latent_for(*p));
    labels.push_back(p->label());
  }
  return stack_frames(views, latents, labels);
}

StackedFrames stack_pixel_latents(const EncoderSuite& enc, const MultiViewLatent& views, const PromptSet& prompts,
                                  const ControllerConfig& config) {
  config.validate_against(prompts);
  return stack_pixel_latents(enc, views, prompts, config.pixel_views);
}

MultiViewLatent unstack_views(const StackedFrames& stacked) {
  const FrameShape s = stacked.data.shape();
  if (s.frames < MultiViewLatent::kViews) throw DimensionError("unstack: fewer than 4 frames");
  FrameTensor views({s.batch, MultiViewLatent::kViews, s.channels, s.height, s.width});
  for (int b = 0; b < s.batch; ++b) {
    for (int f = 0; f < MultiViewLatent::kViews; ++f) {
      auto src = stacked.data.frame(b, f);
      std::copy(src.begin(), src.end(), views.frame(b, f).begin());
    }
  }
  return MultiViewLatent(std::move(views));
}

}  // namespace mvp

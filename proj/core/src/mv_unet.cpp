#include "mvprompt/mv_unet.hpp"

#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {
namespace {

Mat frame_to_tokens(std::span<const double> frame, int channels, int height, int width) {
  const int hw = height * width;
  Mat tokens(hw, channels);
  for (int c = 0; c < channels; ++c) {
    for (int p = 0; p < hw; ++p) tokens(p, c) = frame[static_cast<std::size_t>(c) * hw + p];
  }
  return tokens;
}

void tokens_to_frame(const Mat& tokens, std::span<double> frame) {
  const auto hw = tokens.rows();
  for (Eigen::Index c = 0; c < tokens.cols(); ++c) {
    for (Eigen::Index p = 0; p < hw; ++p) frame[static_cast<std::size_t>(c * hw + p)] = tokens(p, c);
  }
}

std::vector<Mat> batch_tokens(const FrameTensor& t, int b) {
  const auto& s = t.shape();
  std::vector<Mat> frames;
  frames.reserve(static_cast<std::size_t>(s.frames));
  for (int f = 0; f < s.frames; ++f) frames.push_back(frame_to_tokens(t.frame(b, f), s.channels, s.height, s.width));
  return frames;
}

void save_linear4(const nn::Linear& q, const nn::Linear& k, const nn::Linear& v, const nn::Linear& o,
                  Checkpoint& ck, const std::string& prefix) {
  q.save(ck, prefix + ".q");
  k.save(ck, prefix + ".k");
  v.save(ck, prefix + ".v");
  o.save(ck, prefix + ".o");
}

void load_linear4(nn::Linear& q, nn::Linear& k, nn::Linear& v, nn::Linear& o, const Checkpoint& ck,
                  const std::string& prefix) {
  q.load(ck, prefix + ".q");
  k.load(ck, prefix + ".k");
  v.load(ck, prefix + ".v");
  o.load(ck, prefix + ".o");
}

}  // namespace

// ---------------------------------------------------------------------------
// Attention layers

DenseAttention3D::DenseAttention3D(int channels, Rng& rng)
    : q_(channels, channels, rng),
      k_(channels, channels, rng),
      v_(channels, channels, rng),
      o_(channels, channels, rng, 0.5) {}

DenseAttention3D::DenseAttention3D(nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear o)
    : q_(std::move(q)), k_(std::move(k)), v_(std::move(v)), o_(std::move(o)) {}

std::vector<Mat> DenseAttention3D::forward(const std::vector<Mat>& frames) const {
  if (frames.empty()) throw DimensionError("dense attention: no frames");
  Eigen::Index total = 0;
  for (const auto& f : frames) total += f.rows();
  Mat all(total, frames.front().cols());
  Eigen::Index r = 0;
  for (const auto& f : frames) {
    if (f.cols() != all.cols()) throw DimensionError("dense attention: channel mismatch across frames");
    all.middleRows(r, f.rows()) = f;
    r += f.rows();
  }
  const Mat out = o_.forward(nn::attention(q_.forward(all), k_.forward(all), v_.forward(all)));
  std::vector<Mat> split;
  split.reserve(frames.size());
  r = 0;
  for (const auto& f : frames) {
    split.push_back(out.middleRows(r, f.rows()));
    r += f.rows();
  }
  return split;
}

void DenseAttention3D::save(Checkpoint& ck, const std::string& prefix) const {
  save_linear4(q_, k_, v_, o_, ck, prefix);
}

void DenseAttention3D::load(const Checkpoint& ck, const std::string& prefix) {
  load_linear4(q_, k_, v_, o_, ck, prefix);
}

CrossAttention::CrossAttention(int channels, int context_dim, Rng& rng)
    : q_(channels, channels, rng),
      k_(context_dim, channels, rng),
      v_(context_dim, channels, rng),
      o_(channels, channels, rng, 0.5) {}

CrossAttention::CrossAttention(nn::Linear q, nn::Linear k, nn::Linear v, nn::Linear o)
    : q_(std::move(q)), k_(std::move(k)), v_(std::move(v)), o_(std::move(o)) {}

Mat CrossAttention::forward(const Mat& x, const Mat& context) const {
  if (context.cols() != k_.in_features()) {
    throw DimensionError("cross attention: context width " + std::to_string(context.cols()) + ", expected " +
                         std::to_string(k_.in_features()));
  }
  return o_.forward(nn::attention(q_.forward(x), k_.forward(context), v_.forward(context)));
}

void CrossAttention::save(Checkpoint& ck, const std::string& prefix) const {
  save_linear4(q_, k_, v_, o_, ck, prefix);
}

void CrossAttention::load(const Checkpoint& ck, const std::string& prefix) {
  load_linear4(q_, k_, v_, o_, ck, prefix);
}

StackedFrames dense_3d_attention(const DenseAttention3D& attn, const StackedFrames& stacked) {
  if (!stacked.data.all_finite()) throw NumericError("dense attention: non-finite input");
  const auto& s = stacked.data.shape();
  StackedFrames out{FrameTensor(s), stacked.roles};
  for (int b = 0; b < s.batch; ++b) {
    const auto result = attn.forward(batch_tokens(stacked.data, b));
    for (int f = 0; f < s.frames; ++f) tokens_to_frame(result[f], out.data.frame(b, f));
  }
  return out;
}

Mat context_tokens(const TextContext& text, const LocalContext& local) {
  if (local.count() > 0 && text.tokens.rows() > 0 && local.tokens.cols() != text.tokens.cols()) {
    throw DimensionError("context: text and local token widths differ");
  }
  const Eigen::Index width = text.tokens.rows() > 0 ? text.tokens.cols() : local.tokens.cols();
  Mat ctx(text.tokens.rows() + local.tokens.rows(), width);
  if (text.tokens.rows() > 0) ctx.topRows(text.tokens.rows()) = text.tokens;
  if (local.tokens.rows() > 0) ctx.bottomRows(local.tokens.rows()) = local.tokens;
  return ctx;
}

StackedFrames cross_attention(const CrossAttention& attn, const StackedFrames& frames, const TextContext& text,
                              const LocalContext& local) {
  if (!frames.data.all_finite()) throw NumericError("cross attention: non-finite input");
  const Mat ctx = context_tokens(text, local);
  const auto& s = frames.data.shape();
  StackedFrames out{FrameTensor(s), frames.roles};
  for (int b = 0; b < s.batch; ++b) {
    for (int f = 0; f < s.frames; ++f) {
      const Mat x = frame_to_tokens(frames.data.frame(b, f), s.channels, s.height, s.width);
      tokens_to_frame(attn.forward(x, ctx), out.data.frame(b, f));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// U-Net blocks

MultiViewUNet::ResBlock::ResBlock(int in, int out, int groups, int d_emb, Rng& rng)
    : norm1(groups, in),
      norm2(groups, out),
      conv1(in, out, 1, rng),
      conv2(out, out, 1, rng, 0.5),
      emb_proj(d_emb, out, rng),
      has_skip(in != out) {
  if (has_skip) skip = nn::Linear(in, out, rng);
}

std::vector<Mat> MultiViewUNet::ResBlock::forward(const std::vector<Mat>& x, const std::vector<RowVec>& emb, int h,
                                                  int w) const {
  std::vector<Mat> out;
  out.reserve(x.size());
  for (std::size_t f = 0; f < x.size(); ++f) {
    Mat hdn = conv1.forward(nn::silu(norm1.forward(x[f])), h, w);
    hdn.rowwise() += emb_proj.forward(nn::silu(emb[f]));
    hdn = conv2.forward(nn::silu(norm2.forward(hdn)), h, w);
    out.push_back((has_skip ? skip.forward(x[f]) : x[f]) + hdn);
  }
  return out;
}

void MultiViewUNet::ResBlock::save(Checkpoint& ck, const std::string& prefix) const {
  norm1.save(ck, prefix + ".norm1");
  norm2.save(ck, prefix + ".norm2");
  conv1.save(ck, prefix + ".conv1");
  conv2.save(ck, prefix + ".conv2");
  emb_proj.save(ck, prefix + ".emb_proj");
  if (has_skip) skip.save(ck, prefix + ".skip");
}

void MultiViewUNet::ResBlock::load(const Checkpoint& ck, const std::string& prefix) {
  norm1.load(ck, prefix + ".norm1");
  norm2.load(ck, prefix + ".norm2");
  conv1.load(ck, prefix + ".conv1");
  conv2.load(ck, prefix + ".conv2");
  emb_proj.load(ck, prefix + ".emb_proj");
  if (has_skip) skip.load(ck, prefix + ".skip");
}

MultiViewUNet::TransformerBlock::TransformerBlock(int channels, int d_ctx, Rng& rng)
    : norm1(channels),
      norm2(channels),
      norm3(channels),
      self_attn(channels, rng),
      cross_attn(channels, d_ctx, rng),
      ff1(channels, 2 * channels, rng),
      ff2(2 * channels, channels, rng, 0.5) {}

std::vector<Mat> MultiViewUNet::TransformerBlock::forward(std::vector<Mat> x, const Mat& context) const {
  // All frames (views and prompt slots) are re-stacked into one token set here.
  std::vector<Mat> normed;
  normed.reserve(x.size());
  for (const auto& f : x) normed.push_back(norm1.forward(f));
  const auto attended = self_attn.forward(normed);
  for (std::size_t f = 0; f < x.size(); ++f) {
    x[f] += attended[f];
    x[f] += cross_attn.forward(norm2.forward(x[f]), context);
    x[f] += ff2.forward(nn::gelu(ff1.forward(norm3.forward(x[f]))));
  }
  return x;
}

void MultiViewUNet::TransformerBlock::save(Checkpoint& ck, const std::string& prefix) const {
  norm1.save(ck, prefix + ".norm1");
  norm2.save(ck, prefix + ".norm2");
  norm3.save(ck, prefix + ".norm3");
  self_attn.save(ck, prefix + ".self_attn");
  cross_attn.save(ck, prefix + ".cross_attn");
  ff1.save(ck, prefix + ".ff1");
  ff2.save(ck, prefix + ".ff2");
}

void MultiViewUNet::TransformerBlock::load(const Checkpoint& ck, const std::string& prefix) {
  norm1.load(ck, prefix + ".norm1");
  norm2.load(ck, prefix + ".norm2");
  norm3.load(ck, prefix + ".norm3");
  self_attn.load(ck, prefix + ".self_attn");
  cross_attn.load(ck, prefix + ".cross_attn");
  ff1.load(ck, prefix + ".ff1");
  ff2.load(ck, prefix + ".ff2");
}

// ---------------------------------------------------------------------------
// U-Net

MultiViewUNet::MultiViewUNet(const UNetDims& dims, std::uint64_t seed) : dims_(dims) {
  Rng rng(derive_seed(seed, "mv_unet"));
  const int c = dims.latent_channels;
  const int base = dims.base_channels;
  const int mid = dims.mid_channels;
  const int g = dims.groups;
  time1_ = nn::Linear(dims.d_time, dims.d_emb, rng);
  time2_ = nn::Linear(dims.d_emb, dims.d_emb, rng);
  cam_proj_ = nn::Linear(dims.d_cam, dims.d_emb, rng);
  conv_in_ = nn::Conv2d(c, base, 1, rng);

  down_.push_back({ResBlock(base, base, g, dims.d_emb, rng), TransformerBlock(base, dims.d_ctx, rng)});
  downsample_.emplace_back(base, base, 2, rng);
  down_.push_back({ResBlock(base, mid, g, dims.d_emb, rng), TransformerBlock(mid, dims.d_ctx, rng)});
  downsample_.emplace_back(mid, mid, 2, rng);

  mid_.push_back({ResBlock(mid, mid, g, dims.d_emb, rng), TransformerBlock(mid, dims.d_ctx, rng)});

  upsample_.emplace_back(mid, mid, 1, rng);
  up_.push_back({ResBlock(2 * mid, mid, g, dims.d_emb, rng), TransformerBlock(mid, dims.d_ctx, rng)});
  upsample_.emplace_back(mid, mid, 1, rng);
  up_.push_back({ResBlock(mid + base, base, g, dims.d_emb, rng), TransformerBlock(base, dims.d_ctx, rng)});

  norm_out_ = nn::GroupNorm(g, base);
  conv_out_ = nn::Conv2d(base, c, 1, rng);
}

std::vector<Mat> MultiViewUNet::run_level(const Level& level, const std::vector<Mat>& x,
                                          const std::vector<RowVec>& emb, const Mat& context, int h, int w) const {
  return level.attn.forward(level.res.forward(x, emb, h, w), context);
}

FrameTensor MultiViewUNet::forward_all(const FrameTensor& stacked, const FrameConditioning& cond) const {
  const auto& s = stacked.shape();
  if (s.channels != dims_.latent_channels) throw DimensionError("unet: latent channel mismatch");
  if (s.height % 4 != 0 || s.width % 4 != 0) throw DimensionError("unet: latent side must be divisible by 4");
  if (static_cast<int>(cond.timesteps.size()) != s.frames || static_cast<int>(cond.cameras.size()) != s.frames) {
    throw DimensionError("unet: need one timestep and one camera per frame");
  }
  if (!stacked.all_finite()) throw NumericError("unet: non-finite input");

  std::vector<RowVec> emb;
  emb.reserve(static_cast<std::size_t>(s.frames));
  for (int f = 0; f < s.frames; ++f) {
    RowVec e = time2_.forward(nn::silu(time1_.forward(nn::timestep_features(cond.timesteps[f], dims_.d_time))));
    e += cam_proj_.forward(cond.cameras[f]);
    emb.push_back(std::move(e));
  }

  const int h0 = s.height, w0 = s.width;
  const int h1 = h0 / 2, w1 = w0 / 2;
  const int h2 = h1 / 2, w2 = w1 / 2;

  FrameTensor out(s);
  for (int b = 0; b < s.batch; ++b) {
    std::vector<Mat> x = batch_tokens(stacked, b);
    for (auto& f : x) f = conv_in_.forward(f, h0, w0);

    auto skip0 = run_level(down_[0], x, emb, cond.context, h0, w0);
    std::vector<Mat> d;
    for (const auto& f : skip0) d.push_back(downsample_[0].forward(f, h0, w0));
    auto skip1 = run_level(down_[1], d, emb, cond.context, h1, w1);
    d.clear();
    for (const auto& f : skip1) d.push_back(downsample_[1].forward(f, h1, w1));

    auto m = run_level(mid_[0], d, emb, cond.context, h2, w2);

    std::vector<Mat> u;
    for (std::size_t f = 0; f < m.size(); ++f) {
      Mat up = upsample_[0].forward(nn::upsample2x(m[f], h2, w2), h1, w1);
      Mat cat(up.rows(), up.cols() + skip1[f].cols());
      cat << up, skip1[f];
      u.push_back(std::move(cat));
    }
    u = run_level(up_[0], u, emb, cond.context, h1, w1);
    for (std::size_t f = 0; f < u.size(); ++f) {
      Mat up = upsample_[1].forward(nn::upsample2x(u[f], h1, w1), h0, w0);
      Mat cat(up.rows(), up.cols() + skip0[f].cols());
      cat << up, skip0[f];
      u[f] = std::move(cat);
    }
    u = run_level(up_[1], u, emb, cond.context, h0, w0);

    for (int f = 0; f < s.frames; ++f) {
      tokens_to_frame(conv_out_.forward(nn::silu(norm_out_.forward(u[f])), h0, w0), out.frame(b, f));
    }
  }
  return out;
}

MultiViewLatent MultiViewUNet::forward(const StackedFrames& stacked, const FrameConditioning& cond) const {
  StackedFrames eps{forward_all(stacked.data, cond), stacked.roles};
  return unstack_views(eps);
}

void MultiViewUNet::save(Checkpoint& ck, const std::string& prefix) const {
  time1_.save(ck, prefix + ".time1");
  time2_.save(ck, prefix + ".time2");
  cam_proj_.save(ck, prefix + ".cam_proj");
  conv_in_.save(ck, prefix + ".conv_in");
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].res.save(ck, prefix + ".down" + std::to_string(i) + ".res");
    down_[i].attn.save(ck, prefix + ".down" + std::to_string(i) + ".attn");
    downsample_[i].save(ck, prefix + ".downsample" + std::to_string(i));
  }
  mid_[0].res.save(ck, prefix + ".mid.res");
  mid_[0].attn.save(ck, prefix + ".mid.attn");
  for (std::size_t i = 0; i < up_.size(); ++i) {
    upsample_[i].save(ck, prefix + ".upsample" + std::to_string(i));
    up_[i].res.save(ck, prefix + ".up" + std::to_string(i) + ".res");
    up_[i].attn.save(ck, prefix + ".up" + std::to_string(i) + ".attn");
  }
  norm_out_.save(ck, prefix + ".norm_out");
  conv_out_.save(ck, prefix + ".conv_out");
}

void MultiViewUNet::load(const Checkpoint& ck, const std::string& prefix) {
  time1_.load(ck, prefix + ".time1");
  time2_.load(ck, prefix + ".time2");
  cam_proj_.load(ck, prefix + ".cam_proj");
  conv_in_.load(ck, prefix + ".conv_in");
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].res.load(ck, prefix + ".down" + std::to_string(i) + ".res");
    down_[i].attn.load(ck, prefix + ".down" + std::to_string(i) + ".attn");
    downsample_[i].load(ck, prefix + ".downsample" + std::to_string(i));
  }
  mid_[0].res.load(ck, prefix + ".mid.res");
  mid_[0].attn.load(ck, prefix + ".mid.attn");
  for (std::size_t i = 0; i < up_.size(); ++i) {
    upsample_[i].load(ck, prefix + ".upsample" + std::to_string(i));
    up_[i].res.load(ck, prefix + ".up" + std::to_string(i) + ".res");
    up_[i].attn.load(ck, prefix + ".up" + std::to_string(i) + ".attn");
  }
  norm_out_.load(ck, prefix + ".norm_out");
  conv_out_.load(ck, prefix + ".conv_out");
}

// ---------------------------------------------------------------------------
// Model bundle and conditioning

MultiViewModel MultiViewModel::toy(const Dims& dims, std::uint64_t seed) {
  if (dims.encoder.d_ctx != dims.unet.d_ctx) throw ConfigError("model: encoder and unet d_ctx differ");
  if (dims.encoder.latent_channels != dims.unet.latent_channels) {
    throw ConfigError("model: encoder and unet latent channels differ");
  }
  return MultiViewModel{EncoderSuite::toy(dims.encoder, derive_seed(seed, "encoders")),
                        CameraEmbedder(dims.unet.d_cam, derive_seed(seed, "cameras")),
                        MultiViewUNet(dims.unet, derive_seed(seed, "unet"))};
}

std::array<CameraEmbedding, 4> MultiViewModel::rig_embeddings() const {
  const auto rig = orthogonal_camera_rig();
  std::array<CameraEmbedding, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = cameras.embed(rig[i]);
  return out;
}

void MultiViewModel::save(Checkpoint& ck) const {
  encoders.save(ck);
  cameras.save(ck, "camera_embedder");
  unet.save(ck, "unet");
}

void MultiViewModel::load(const Checkpoint& ck) {
  encoders.load(ck);
  cameras.load(ck, "camera_embedder");
  unet.load(ck, "unet");
}

Conditioning make_conditioning(const MultiViewModel& model, std::span<const CameraEmbedding, 4> cams,
                               const TextContext& text, const PromptSet& prompts, const ControllerConfig& config) {
  config.validate_against(prompts);
  Conditioning c;
  c.text = text;
  c.local = build_local_context(model.encoders, prompts, config.local_views);
  for (const ImagePrompt* p : prompts.select(config.pixel_views)) {
    c.prompt_latents.push_back(model.encoders.latent_for(*p));
    c.prompt_labels.push_back(p->label());
    c.prompt_cameras.push_back(model.cameras.embed(rig_pose(p->label())));
  }
  std::copy(cams.begin(), cams.end(), c.view_cameras.begin());
  return c;
}

Conditioning make_single_image_conditioning(const MultiViewModel& model, std::span<const CameraEmbedding, 4> cams,
                                            const TextContext& text, const ImagePrompt& front) {
  if (front.label() != ViewLabel::front) throw ConfigError("single-image path requires the front prompt");
  Conditioning c;
  c.text = text;
  const LocalTokens block = local_tokens_for(model.encoders, front);
  const ViewLabel label = front.label();
  c.local = concat_local_tokens(std::span<const LocalTokens>(&block, 1), std::span<const ViewLabel>(&label, 1));
  c.prompt_latents.push_back(model.encoders.latent_for(front));
  c.prompt_labels.push_back(label);
  c.prompt_cameras.push_back(model.cameras.embed(rig_pose(label)));
  std::copy(cams.begin(), cams.end(), c.view_cameras.begin());
  return c;
}

Conditioning unconditional(const Conditioning& cond) {
  Conditioning u = cond;
  u.text.tokens.setZero();
  u.local.tokens.setZero();
  return u;
}

MultiViewLatent denoise(const MultiViewModel& model, const MultiViewLatent& noisy, int t, const Conditioning& cond) {
  const StackedFrames stacked = stack_frames(noisy, cond.prompt_latents, cond.prompt_labels);
  FrameConditioning fc;
  fc.context = context_tokens(cond.text, cond.local);
  for (int f = 0; f < MultiViewLatent::kViews; ++f) {
    fc.timesteps.push_back(static_cast<double>(t));
    fc.cameras.push_back(cond.view_cameras[f].vector);
  }
  for (const auto& cam : cond.prompt_cameras) {
    fc.timesteps.push_back(0.0);
    fc.cameras.push_back(cam.vector);
  }
  return model.unet.forward(stacked, fc);
}

MultiViewLatent unet_forward(const MultiViewModel& model, const MultiViewLatent& noisy, int t,
                             std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                             const PromptSet& prompts, const ControllerConfig& config) {
  return denoise(model, noisy, t, make_conditioning(model, cams, text, prompts, config));
}

MultiViewLatent baseline_forward(const MultiViewModel& model, const MultiViewLatent& noisy, int t,
                                 std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                                 const ImagePrompt& front) {
  return denoise(model, noisy, t, make_single_image_conditioning(model, cams, text, front));
}

ConditionedDenoiser::ConditionedDenoiser(const MultiViewModel& model, Conditioning cond, double guidance_scale)
    : model_(model), cond_(std::move(cond)), uncond_(unconditional(cond_)), guidance_(guidance_scale) {}

FrameTensor ConditionedDenoiser::predict(const FrameTensor& x_t, int t) const {
  const MultiViewLatent x(x_t);
  MultiViewLatent eps = denoise(model_, x, t, cond_);
  if (guidance_ == 1.0) return eps.data();
  const MultiViewLatent eps_u = denoise(model_, x, t, uncond_);
  FrameTensor out(x_t.shape());
  auto c = eps.data().data();
  auto u = eps_u.data().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + guidance_ * (c[i] - u[i]);
  return out;
}

namespace {

FrameShape latent_shape(const Conditioning& cond) {
  const PixelLatent& z = cond.prompt_latents.front();
  return {1, MultiViewLatent::kViews, z.channels, z.height, z.width};
}

}  // namespace

MultiViewLatent ddim_sample(const MultiViewModel& model, const NoiseSchedule& schedule, int steps, std::uint64_t seed,
                            std::span<const CameraEmbedding, 4> cams, const TextContext& text,
                            const PromptSet& prompts, const ControllerConfig& config, double guidance_scale) {
  Conditioning cond = make_conditioning(model, cams, text, prompts, config);
  const FrameShape shape = latent_shape(cond);
  ConditionedDenoiser denoiser(model, std::move(cond), guidance_scale);
  return MultiViewLatent(ddim_sample(denoiser, schedule, steps, seed, shape));
}

MultiViewLatent baseline_ddim_sample(const MultiViewModel& model, const NoiseSchedule& schedule, int steps,
                                     std::uint64_t seed, std::span<const CameraEmbedding, 4> cams,
                                     const TextContext& text, const ImagePrompt& front, double guidance_scale) {
  Conditioning cond = make_single_image_conditioning(model, cams, text, front);
  const FrameShape shape = latent_shape(cond);
  ConditionedDenoiser denoiser(model, std::move(cond), guidance_scale);
  return MultiViewLatent(ddim_sample(denoiser, schedule, steps, seed, shape));
}

}  // namespace mvp

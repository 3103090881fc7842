#include <benchmark/benchmark.h>

#include "mvprompt/mv_unet.hpp"
#include "mvprompt/sds_nerf.hpp"

using namespace mvp;

namespace {

const MultiViewModel& model() {
  static const MultiViewModel m = MultiViewModel::toy({}, 0);
  return m;
}

Image blob(int size) {
  Image img(size, size, 1.0);
  const double rgb[3] = {0.8, 0.3, 0.2};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - size / 2.0, dy = y - size / 2.0;
      if (dx * dx + dy * dy < size * size / 9.0)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  return img;
}

PromptSet prompts() {
  std::vector<ImagePrompt> p;
  for (ViewLabel l : {ViewLabel::front, ViewLabel::back, ViewLabel::left, ViewLabel::right}) p.emplace_back(l, blob(32));
  return PromptSet(p);
}

}  // namespace

static void BM_DenseAttention(benchmark::State& state) {
  const int frames = static_cast<int>(state.range(0));
  Rng rng(1);
  const DenseAttention3D attn(16, rng);
  FrameTensor t({1, frames, 16, 4, 4});
  rng.fill_normal(t.data());
  const StackedFrames st{t, std::vector<FrameRole>(static_cast<std::size_t>(frames))};
  for (auto _ : state) benchmark::DoNotOptimize(dense_3d_attention(attn, st));
}
BENCHMARK(BM_DenseAttention)->DenseRange(5, 8);

static void BM_UNetForward(benchmark::State& state) {
  static const char* configs[] = {"pixel(f) + local(f)", "pixel(fb) + local(fb)", "pixel(fbl) + local(fbl)",
                                  "pixel(fblr) + local(fblr)"};
  const ControllerConfig cfg = parse_controller_config(configs[state.range(0) - 1]);
  const PromptSet set = prompts();
  const auto cams = model().rig_embeddings();
  const TextContext text = encode_text(model().encoders, "an object");
  FrameTensor t({1, 4, 4, 8, 8});
  Rng rng(2);
  rng.fill_normal(t.data());
  const MultiViewLatent noisy(std::move(t));
  for (auto _ : state) benchmark::DoNotOptimize(unet_forward(model(), noisy, 50, cams, text, set, cfg));
  state.SetLabel(configs[state.range(0) - 1]);
}
BENCHMARK(BM_UNetForward)->DenseRange(1, 4)->Unit(benchmark::kMillisecond);

static void BM_Render(benchmark::State& state) {
  const RadianceField field(FieldConfig{}, 3);
  RenderSettings s;
  s.resolution = static_cast<int>(state.range(0));
  s.samples = 32;
  const CameraPose pose = CameraPose::orbit(30.0, 0.0, 2.5);
  for (auto _ : state) benchmark::DoNotOptimize(render(field, pose, s));
}
BENCHMARK(BM_Render)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance <path-to-mvprompt-binary>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "mvprompt/errors.hpp"
#include "mvprompt/image_io.hpp"
#include "mvprompt/metrics.hpp"
#include "mvprompt/pipeline.hpp"
#include "test_support.hpp"

using namespace mvp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int g_failures = 0;

void criterion(const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail += " (over time budget of " + std::to_string(static_cast<int>(budget_s)) + "s)";
  }
  if (!o.pass) ++g_failures;
  std::printf("%s  %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
  std::fflush(stdout);
}

void require(Outcome& o, bool cond, const std::string& what) {
  if (!cond && o.pass) {
    o.pass = false;
    o.detail = what;
  }
}

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const MultiViewModel& model() {
  static const MultiViewModel m = MultiViewModel::toy({}, 0);
  return m;
}

std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

int run_cli(const std::string& bin, const std::string& args, const fs::path& log) {
  const std::string cmd = shell_quote(bin) + " " + args + " > " + shell_quote(log.string()) + " 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = test::read_file(e.path());
  return files;
}

// ---------------------------------------------------------------------------

Outcome n1_equivalence() {
  Outcome o;
  const Image front = quantize8(test::blob_image(32, 0));
  const ImagePrompt prompt(ViewLabel::front, front);
  const PromptSet set({prompt});
  const ControllerConfig cfg = ControllerConfig::single_image();
  const EncoderSuite& enc = model().encoders;

  // controllers
  const LocalContext local = build_local_context(enc, set, cfg);
  require(o, local.tokens == local_tokens_for(enc, prompt).tokens, "local controller differs from single-image path");
  const MultiViewLatent views = test::random_views(0);
  const StackedFrames stacked = stack_pixel_latents(enc, views, set, cfg);
  const PixelLatent z = encode_pixel_latent(enc, front);
  const ViewLabel label = ViewLabel::front;
  const StackedFrames direct =
      stack_frames(views, std::span<const PixelLatent>(&z, 1), std::span<const ViewLabel>(&label, 1));
  require(o, stacked.data == direct.data && stacked.roles == direct.roles, "pixel controller differs");
  require(o, views.shape() == (FrameShape{1, 4, 4, 8, 8}), "latent is not 4x8x8");

  // unet_forward
  const auto cams = model().rig_embeddings();
  const TextContext text = encode_text(enc, "an object");
  for (int t : {0, 50, 99}) {
    require(o, unet_forward(model(), views, t, cams, text, set, cfg) == baseline_forward(model(), views, t, cams, text, prompt),
            "unet_forward differs at t=" + std::to_string(t));
  }

  // ddim_sample
  const NoiseSchedule schedule = NoiseSchedule::linear();
  require(o, ddim_sample(model(), schedule, 10, 0, cams, text, set, cfg) ==
                 baseline_ddim_sample(model(), schedule, 10, 0, cams, text, prompt),
          "ddim_sample differs");

  // full pipeline
  const fs::path dir = test::scratch_dir("acc_n1");
  write_png(dir / "obj.png", front);
  RunManifest m;
  m.mode = RunMode::mvgen;
  m.seed = 0;
  m.config = "pixel(f) + local(f)";
  m.image = dir / "obj.png";
  m.out_dir = dir / "configured";
  m.steps = 10;
  const RunOutputs a = run_mv_generation(m, model());
  m.out_dir = dir / "baseline";
  const RunOutputs b = run_baseline_generation(m, model());
  int compared = 0;
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    if (a.files[i].filename() == "manifest.json") continue;
    require(o, test::read_file(a.files[i]) == test::read_file(b.files[i]),
            "pipeline output differs: " + a.files[i].filename().string());
    ++compared;
  }
  if (o.pass) o.detail = "controllers, unet_forward x3, ddim_sample, pipeline (" + std::to_string(compared) + " files) bit-identical";
  return o;
}

Outcome shape_contracts() {
  Outcome o;
  const PromptSet prompts = test::full_prompts(32, 1);
  const MultiViewLatent views = test::random_views(1);
  const auto cams = model().rig_embeddings();
  const TextContext text = encode_text(model().encoders, "an object");
  std::set<int> frame_counts;
  int configs = 0;
  for (const ControllerConfig& cfg : all_controller_configs()) {
    const int np = cfg.pixel_views.size();
    const int nl = cfg.local_views.size();
    const StackedFrames st = stack_pixel_latents(model().encoders, views, prompts, cfg);
    require(o, st.frames() == 4 + np, cfg.canonical() + ": stack has " + std::to_string(st.frames()) + " frames");
    const LocalContext local = build_local_context(model().encoders, prompts, cfg);
    require(o, local.count() == 16 * nl, cfg.canonical() + ": local context has " + std::to_string(local.count()) + " tokens");
    const MultiViewLatent eps = unet_forward(model(), views, 50, cams, text, prompts, cfg);
    require(o, eps.shape() == views.shape(), cfg.canonical() + ": output shape " + eps.shape().str());
    frame_counts.insert(st.frames());
    ++configs;
  }
  require(o, frame_counts == std::set<int>{5, 6, 7, 8}, "not every N in 1..4 was exercised");
  if (o.pass) o.detail = std::to_string(configs) + " front-containing configs, frames 4+N, tokens 16N, output (1,4,4,8,8)";
  return o;
}

Outcome permutation_invariance() {
  Outcome o;
  const std::vector<std::vector<ViewLabel>> orders = {
      {ViewLabel::front, ViewLabel::right, ViewLabel::left, ViewLabel::back},
      {ViewLabel::front, ViewLabel::left, ViewLabel::back, ViewLabel::right},
      {ViewLabel::front, ViewLabel::back, ViewLabel::right, ViewLabel::left}};
  const ControllerConfig cfg = parse_controller_config("pixel(fblr) + local(fblr)");
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MultiViewModel m = MultiViewModel::toy({}, 1000 + seed);
    const PromptSet prompts = test::full_prompts(32, seed);
    const auto cams = m.rig_embeddings();
    const TextContext text = encode_text(m.encoders, "an object");
    const MultiViewLatent noisy = test::random_views(seed);
    const int t = static_cast<int>(seed * 5);
    const MultiViewLatent ref = unet_forward(m, noisy, t, cams, text, prompts, cfg);
    for (const auto& order : orders) {
      const MultiViewLatent alt = unet_forward(m, noisy, t, cams, text, prompts.reordered(order), cfg);
      worst = std::max(worst, max_abs_diff(ref.data().data(), alt.data().data()));
    }
  }
  require(o, worst < 1e-5, fmt("max |delta eps_hat| = %.3g", worst));
  if (o.pass) o.detail = fmt("20 weight seeds x 3 orders, max |delta eps_hat| = %.3g < 1e-5", worst);
  return o;
}

std::vector<double> proj(const nn::Linear& l, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(l.out_features()));
  for (int j = 0; j < l.out_features(); ++j) {
    double s = l.bias[j];
    for (int i = 0; i < l.in_features(); ++i) s += x[static_cast<std::size_t>(i)] * l.weight(i, j);
    y[static_cast<std::size_t>(j)] = s;
  }
  return y;
}

std::vector<double> brute(const std::vector<double>& q, const std::vector<std::vector<double>>& ks,
                          const std::vector<std::vector<double>>& vs) {
  std::vector<double> w;
  double z = 0.0;
  for (const auto& k : ks) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * k[i];
    w.push_back(std::exp(s / std::sqrt(static_cast<double>(q.size()))));
    z += w.back();
  }
  std::vector<double> out(vs[0].size(), 0.0);
  for (std::size_t j = 0; j < vs.size(); ++j)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[j] / z * vs[j][c];
  return out;
}

Outcome attention_oracle() {
  Outcome o;
  double worst = 0.0;
  int cases = 0;
  Rng rng(7);
  for (int frames = 1; frames <= 3; ++frames) {
    for (int hw : {1, 2}) {
      for (int d : {1, 2, 4}) {
        nn::Linear q(d, d, rng), k(d, d, rng), v(d, d, rng), out(d, d, rng);
        FrameTensor t({1, frames, d, hw, hw});
        rng.fill_normal(t.data());
        const StackedFrames st{t, std::vector<FrameRole>(static_cast<std::size_t>(frames))};
        std::vector<std::vector<double>> tokens;
        for (int f = 0; f < frames; ++f)
          for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
              std::vector<double> tok;
              for (int c = 0; c < d; ++c) tok.push_back(t.at(0, f, c, y, x));
              tokens.push_back(tok);
            }
        // dense 3D self-attention
        const StackedFrames got = dense_3d_attention(DenseAttention3D(q, k, v, out), st);
        std::vector<std::vector<double>> ks, vs;
        for (const auto& tok : tokens) {
          ks.push_back(proj(k, tok));
          vs.push_back(proj(v, tok));
        }
        // cross-attention over [text ; local]
        nn::Linear ck(d, d, rng), cv(d, d, rng);
        const TextContext text{rng.normal_matrix(2, d)};
        const LocalContext local{rng.normal_matrix(3, d), {ViewLabel::front}};
        const StackedFrames gotx = cross_attention(CrossAttention(q, ck, cv, out), st, text, local);
        std::vector<std::vector<double>> cks, cvs;
        const Mat ctx = context_tokens(text, local);
        for (int r = 0; r < ctx.rows(); ++r) {
          std::vector<double> row(ctx.row(r).data(), ctx.row(r).data() + d);
          cks.push_back(proj(ck, row));
          cvs.push_back(proj(cv, row));
        }
        std::size_t i = 0;
        for (int f = 0; f < frames; ++f)
          for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x, ++i) {
              const auto e_self = proj(out, brute(proj(q, tokens[i]), ks, vs));
              const auto e_cross = proj(out, brute(proj(q, tokens[i]), cks, cvs));
              for (int c = 0; c < d; ++c) {
                worst = std::max(worst, std::abs(got.data.at(0, f, c, y, x) - e_self[static_cast<std::size_t>(c)]));
                worst = std::max(worst, std::abs(gotx.data.at(0, f, c, y, x) - e_cross[static_cast<std::size_t>(c)]));
              }
            }
        ++cases;
      }
    }
  }
  require(o, worst <= 1e-6, fmt("max error %.3g", worst));
  if (o.pass) o.detail = std::to_string(cases) + " tiny instances (self + cross), max error " + fmt("%.3g <= 1e-6", worst);
  return o;
}

class FixedEps final : public NoisePredictor {
 public:
  explicit FixedEps(FrameTensor eps) : eps_(std::move(eps)) {}
  FrameTensor predict(const FrameTensor&, int) const override { return eps_; }

 private:
  FrameTensor eps_;
};

FrameTensor gaussian(const FrameShape& s, std::uint64_t seed) {
  FrameTensor t(s);
  Rng rng(seed);
  rng.fill_normal(t.data());
  return t;
}

Outcome sampler_identities() {
  Outcome o;
  const NoiseSchedule schedule = NoiseSchedule::linear();
  const PromptSet prompts = test::make_prompts({ViewLabel::front, ViewLabel::back}, 32, 3);
  const auto cams = model().rig_embeddings();
  const TextContext text = encode_text(model().encoders, "an object");
  const ControllerConfig cfg = parse_controller_config("pixel(f) + local(fb)");
  const auto a = ddim_sample(model(), schedule, 8, 42, cams, text, prompts, cfg);
  const auto b = ddim_sample(model(), schedule, 8, 42, cams, text, prompts, cfg);
  require(o, a == b, "DDIM not bit-identical under a fixed seed");

  const FrameShape shape{1, 4, 4, 8, 8};
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const FrameTensor x0 = gaussian(shape, 10 + s), eps = gaussian(shape, 20 + s);
    const FrameTensor xT = diffuse(x0, eps, schedule.alpha_bar(schedule.timesteps() - 1));
    const FrameTensor rec = ddim_sample_from(FixedEps(eps), schedule, 1, xT);
    worst = std::max(worst, max_abs_diff(rec.data(), x0.data()));
  }
  require(o, worst <= 1e-12, fmt("one-step x0 recovery error %.3g", worst));
  if (o.pass) o.detail = fmt("determinism bitwise; one-step x0 recovery error %.3g (float64 round-off)", worst);
  return o;
}

Outcome sds_gradient_check() {
  Outcome o;
  const ToyPatchAutoencoder& codec = dynamic_cast<const ToyPatchAutoencoder&>(model().encoders.codec());
  const NoiseSchedule schedule = NoiseSchedule::linear();
  RenderSettings s;
  s.resolution = 8;
  s.samples = 16;
  const RadianceField field(FieldConfig{}, 5);
  const FrameShape shape{1, 4, 4, 2, 2};
  const FrameTensor noise = gaussian(shape, 30);

  // zero residual
  const SDSGradient zero = sds_gradient_at(field, FixedEps(noise), schedule, SDSConfig{}, codec, s, 50, noise);
  bool all_zero = zero.residual_norm == 0.0;
  for (double g : zero.grad) all_zero = all_zero && g == 0.0;
  require(o, all_zero, "zero residual produced a nonzero gradient");

  // finite differences on every parameter
  const FrameTensor eps_hat = gaussian(shape, 31);
  const SDSConfig cfg;
  const int t = 50;
  const SDSGradient g = sds_gradient_at(field, FixedEps(eps_hat), schedule, cfg, codec, s, t, noise);
  const double w = cfg.weight(schedule.alpha_bar(t));
  std::vector<double> r(noise.numel());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = w * (eps_hat.data()[i] - noise.data()[i]);
  auto f = [&](const RadianceField& fl) {
    const FrameTensor x = render_latents(fl, codec, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * x.data()[i];
    return acc;
  };
  const double h = 1e-5;
  std::vector<double> diff(g.grad.size()), fd(g.grad.size());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    RadianceField a = field, b = field;
    a.params()[i] += h;
    b.params()[i] -= h;
    fd[i] = (f(a) - f(b)) / (2 * h);
    diff[i] = g.grad[i] - fd[i];
  }
  const double rel = l2_norm(diff) / l2_norm(fd);
  require(o, rel < 1e-4, fmt("relative error %.3g", rel));
  if (o.pass) {
    o.detail = "zero residual -> exact zero; " + std::to_string(field.parameter_count()) +
               " params, FD relative error " + fmt("%.3g < 1e-4", rel);
  }
  return o;
}

Outcome renderer_conservation() {
  Outcome o;
  Rng rng(11);
  double worst = 0.0;
  bool monotone = true;
  const RadianceField field(FieldConfig{}, 12);
  RenderSettings s;
  s.resolution = 16;
  for (int ray = 0; ray < 1000; ++ray) {
    RaySamples rs;
    if (ray % 2 == 0) {
      // a ray through the field from a random orbit camera
      const CameraPose pose = CameraPose::orbit(360.0 * rng.uniform(), 60.0 * rng.uniform() - 30.0, 2.0 + rng.uniform());
      rs = sample_ray(field, pose, s, rng.uniform_int(0, 15), rng.uniform_int(0, 15));
      for (Eigen::Index i = 0; i < rs.sigmas.size(); ++i) rs.sigmas[i] *= 1.0 + 20.0 * rng.uniform();
    } else {
      const int n = rng.uniform_int(1, 128);
      rs.sigmas.resize(n);
      rs.deltas.resize(n);
      rs.colors.resize(n, 3);
      for (int i = 0; i < n; ++i) {
        rs.sigmas[i] = rng.uniform() < 0.2 ? 0.0 : 50.0 * rng.uniform() * rng.uniform();
        rs.deltas[i] = 1e-3 + 0.2 * rng.uniform();
        for (int c = 0; c < 3; ++c) rs.colors(i, c) = rng.uniform();
      }
    }
    const auto n = static_cast<std::size_t>(rs.sigmas.size());
    const CompositeResult r = composite(std::span<const double>(rs.sigmas.data(), n),
                                        std::span<const double>(rs.deltas.data(), n), rs.colors, {1, 1, 1});
    double sum = r.final_transmittance;
    for (double w : r.weights) sum += w;
    worst = std::max(worst, std::abs(sum - 1.0));
    for (std::size_t i = 1; i < n; ++i) monotone = monotone && r.transmittance[i] <= r.transmittance[i - 1];
    monotone = monotone && r.final_transmittance <= r.transmittance[n - 1];
  }
  require(o, worst <= 1e-6, fmt("conservation error %.3g", worst));
  require(o, monotone, "transmittance increased along a ray");

  Mat col(2, 3);
  col << 1, 0, 0, 0, 1, 0;
  const CompositeResult fx = composite(std::vector<double>{1.0, 1.0}, std::vector<double>{0.5, 0.5}, col, {1, 1, 1});
  const double e = std::max({std::abs(fx.color[0] - 0.76134878145880891), std::abs(fx.color[1] - 0.60653065971263342),
                             std::abs(fx.color[2] - 0.36787944117144233)});
  require(o, e <= 1e-6, fmt("two-sample fixture error %.3g", e));
  if (o.pass) o.detail = fmt("1000 rays, max |sum w + T - 1| = %.3g, monotone T; ", worst) + fmt("fixture error %.3g", e);
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  for (int c : {2, 3, 10, 1000}) {
    const double u = quality_score(ClassProbabilities{std::vector<double>(static_cast<std::size_t>(c), 1.0 / c)});
    ClassProbabilities hot{std::vector<double>(static_cast<std::size_t>(c), 0.0)};
    hot.p[0] = 1.0;
    require(o, u == 1.0, fmt("uniform QIS = %.17g", u));
    require(o, quality_score(hot) == static_cast<double>(c), fmt("one-hot QIS = %.17g", quality_score(hot)));
  }
  const double three = quality_score(ClassProbabilities{{0.7, 0.2, 0.1}});
  require(o, std::abs(three - 1.3455377349958368) <= 1e-9, fmt("3-class QIS = %.17g", three));

  const EvalBackends eval = EvalBackends::toy(0);
  const Image img = test::random_image(32, 9);
  const std::vector<Image> self = {img};
  const double im = clip_image_score(self, img, *eval.image_embedder).summary().mean;
  require(o, std::abs(im - 100.0) <= 1e-9, fmt("CLIP(IM) self = %.12g", im));

  Rng rng(3);
  const RowVec a = rng.normal_matrix(1, 32), b = rng.normal_matrix(1, 32);
  const double ref = cosine_similarity(a, b);
  for (double lambda : {0.1, 1.0, 10.0}) {
    require(o, std::abs(cosine_similarity(lambda * a, b) - ref) <= 1e-12, fmt("scale %.1f changes cosine", lambda));
  }
  if (o.pass) o.detail = fmt("uniform=1, one-hot=C, 3-class=%.12g, CLIP(IM) self=100, scale-invariant", three);
  return o;
}

Outcome mvgen_smoke(const std::string& bin) {
  Outcome o;
  const fs::path dir = test::scratch_dir("acc_mvgen");
  write_png(dir / "obj.png", test::blob_image(32, 4));
  const fs::path out = dir / "run";
  const int rc = run_cli(bin, "mvgen --config \"pixel(f) + local(fb)\" --image " + shell_quote((dir / "obj.png").string()) +
                                  " --seed 0 --out " + shell_quote(out.string()),
                         dir / "log1.txt");
  require(o, rc == 0, "mvgen exited with status " + std::to_string(rc));
  if (!o.pass) return o;
  const auto first = snapshot(out);
  std::set<std::string> names;
  for (const auto& [k, v] : first) names.insert(k);
  require(o, names == std::set<std::string>{"grid.png", "obj_front.png", "obj_back.png", "obj_left.png", "obj_right.png",
                                            "report.json", "manifest.json"},
          "unexpected output listing");
  const int rc2 = run_cli(bin, "rerun " + shell_quote((out / "manifest.json").string()), dir / "log2.txt");
  require(o, rc2 == 0, "rerun exited with status " + std::to_string(rc2));
  require(o, snapshot(out) == first, "rerun is not byte-identical");
  const MetricReport r = report_from_json(first.at("report.json"));
  require(o, r.config == "pixel(f) + local(fb)" && r.n_images == 4, "report content");
  if (o.pass) o.detail = "7 files emitted, rerun from manifest byte-identical";
  return o;
}

Outcome gen3d_smoke(const std::string& bin) {
  Outcome o;
  const fs::path dir = test::scratch_dir("acc_gen3d");
  const Image input = test::blob_image(32, 6);
  write_png(dir / "obj.png", input);
  const std::string common = "gen3d --sds-guidance pull --image " + shell_quote((dir / "obj.png").string()) + " --seed 0";
  int rc = run_cli(bin, common + " --iters 0 --out " + shell_quote((dir / "it0").string()), dir / "log0.txt");
  require(o, rc == 0, "gen3d --iters 0 exited with status " + std::to_string(rc));
  rc = run_cli(bin, common + " --iters 100 --out " + shell_quote((dir / "it100").string()), dir / "log100.txt");
  require(o, rc == 0, "gen3d --iters 100 exited with status " + std::to_string(rc));
  if (!o.pass) return o;
  const Image target = read_png(dir / "obj.png");
  const double before = mean_abs_error(read_png(dir / "it0" / "obj_front.png"), target);
  const double after = mean_abs_error(read_png(dir / "it100" / "obj_front.png"), target);
  require(o, after < before, fmt("front MAE did not decrease: %.4f", before) + fmt(" -> %.4f", after));
  if (o.pass) o.detail = fmt("front-view MAE %.4f", before) + fmt(" -> %.4f after 100 iterations", after);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string bin = argc > 1 ? argv[1] : "";
  std::printf("acceptance criteria\n");
  criterion("n1_equivalence", 60, n1_equivalence);
  criterion("shape_contracts", 60, shape_contracts);
  criterion("permutation_invariance", 0, permutation_invariance);
  criterion("attention_oracle", 0, attention_oracle);
  criterion("sampler_identities", 0, sampler_identities);
  criterion("sds_gradient", 120, sds_gradient_check);
  criterion("renderer_conservation", 0, renderer_conservation);
  criterion("metric_oracles", 0, metric_oracles);
  criterion("mvgen_smoke", 300, [&] {
    return bin.empty() ? Outcome{false, "no mvprompt binary given"} : mvgen_smoke(bin);
  });
  criterion("gen3d_smoke", 300, [&] {
    return bin.empty() ? Outcome{false, "no mvprompt binary given"} : gen3d_smoke(bin);
  });
  std::printf("%d failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}

#include "mvprompt/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "mvprompt/errors.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {

char view_letter(ViewLabel v) {
  switch (v) {
    case ViewLabel::front: return 'f';
    case ViewLabel::back: return 'b';
    case ViewLabel::left: return 'l';
    case ViewLabel::right: return 'r';
  }
  return '?';
}

std::string_view view_name(ViewLabel v) {
  switch (v) {
    case ViewLabel::front: return "front";
    case ViewLabel::back: return "back";
    case ViewLabel::left: return "left";
    case ViewLabel::right: return "right";
  }
  return "?";
}

std::optional<ViewLabel> view_from_letter(char c) {
  for (auto v : kCanonicalViews) {
    if (view_letter(v) == c) return v;
  }
  return std::nullopt;
}

std::optional<ViewLabel> view_from_name(std::string_view name) {
  for (auto v : kCanonicalViews) {
    if (view_name(v) == name) return v;
  }
  return std::nullopt;
}

int rig_slot(ViewLabel v) {
  auto it = std::find(kRigOrder.begin(), kRigOrder.end(), v);
  return static_cast<int>(it - kRigOrder.begin());
}

// ---------------------------------------------------------------------------
// ViewSet

ViewSet::ViewSet(std::initializer_list<ViewLabel> labels) {
  for (auto v : labels) insert(v);
}

int ViewSet::size() const { return std::popcount(bits_); }

std::vector<ViewLabel> ViewSet::labels() const {
  std::vector<ViewLabel> out;
  for (auto v : kCanonicalViews) {
    if (contains(v)) out.push_back(v);
  }
  return out;
}

std::string ViewSet::letters() const {
  std::string s;
  for (auto v : labels()) s.push_back(view_letter(v));
  return s;
}

std::vector<ViewSet> ViewSet::all_nonempty() {
  std::vector<ViewSet> out;
  for (unsigned mask = 1; mask < 16; ++mask) {
    ViewSet s;
    for (auto v : kCanonicalViews) {
      if (mask & (1u << static_cast<int>(v))) s.insert(v);
    }
    out.push_back(s);
  }
  return out;
}

std::vector<ViewSet> ViewSet::all_with_front() {
  auto all = all_nonempty();
  std::erase_if(all, [](const ViewSet& s) { return !s.contains(ViewLabel::front); });
  return all;
}

// ---------------------------------------------------------------------------
// ControllerConfig

ControllerConfig ControllerConfig::single_image() {
  return {ViewSet{ViewLabel::front}, ViewSet{ViewLabel::front}};
}

std::string ControllerConfig::canonical() const {
  return "pixel(" + pixel_views.letters() + ") + local(" + local_views.letters() + ")";
}

void ControllerConfig::validate() const {
  if (pixel_views.empty()) throw ConfigError("controller config: pixel group is empty");
  if (local_views.empty()) throw ConfigError("controller config: local group is empty");
  if (!pixel_views.contains(ViewLabel::front)) {
    throw ConfigError("controller config: pixel group must contain front, got '" + pixel_views.letters() + "'");
  }
  if (!local_views.contains(ViewLabel::front)) {
    throw ConfigError("controller config: local group must contain front, got '" + local_views.letters() + "'");
  }
}

void ControllerConfig::validate_against(const PromptSet& prompts) const {
  validate();
  const ViewSet have = prompts.labels();
  for (auto v : required_views().labels()) {
    if (!have.contains(v)) {
      throw ConfigError("controller config " + canonical() + " references view '" + std::string(view_name(v)) +
                        "' which is not in the prompt set");
    }
  }
}

ViewSet ControllerConfig::required_views() const {
  ViewSet s = pixel_views;
  for (auto v : local_views.labels()) s.insert(v);
  return s;
}

namespace {

class ConfigLexer {
 public:
  explicit ConfigLexer(std::string_view s) : s_(s) {}

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }
  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }
  std::string word() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }
  void expect(char c) {
    skip_ws();
    if (pos_ >= s_.size()) {
      throw ParseError(std::string("controller config: expected '") + c + "' but reached end of input", "");
    }
    if (s_[pos_] != c) {
      throw ParseError(std::string("controller config: expected '") + c + "', found '" + s_[pos_] + "'",
                       std::string(1, s_[pos_]));
    }
    ++pos_;
  }
  char next_char() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_++] : '\0';
  }
  std::string rest() const { return std::string(s_.substr(pos_)); }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

ViewSet parse_group(ConfigLexer& lex, const std::string& group) {
  lex.expect('(');
  ViewSet set;
  while (true) {
    char c = lex.next_char();
    if (c == ')') break;
    if (c == '\0') throw ParseError("controller config: unterminated group '" + group + "'", group);
    auto v = view_from_letter(c);
    if (!v) throw ParseError(std::string("controller config: unknown letter '") + c + "'", std::string(1, c));
    if (set.contains(*v)) {
      throw ParseError(std::string("controller config: duplicate letter '") + c + "' in group '" + group + "'",
                       std::string(1, c));
    }
    set.insert(*v);
  }
  if (set.empty()) throw ParseError("controller config: empty group '" + group + "'", group);
  return set;
}

}  // namespace

ControllerConfig parse_controller_config(std::string_view text) {
  ConfigLexer lex(text);
  std::optional<ViewSet> pixel;
  std::optional<ViewSet> local;
  bool first = true;
  while (!lex.at_end()) {
    if (!first) lex.expect('+');
    first = false;
    std::string name = lex.word();
    if (name.empty()) {
      const char c = lex.peek();
      throw ParseError(std::string("controller config: expected group name, found '") + c + "'",
                       std::string(1, c));
    }
    if (name == "pixel") {
      if (pixel) throw ParseError("controller config: group 'pixel' given twice", name);
      pixel = parse_group(lex, name);
    } else if (name == "local") {
      if (local) throw ParseError("controller config: group 'local' given twice", name);
      local = parse_group(lex, name);
    } else {
      throw ParseError("controller config: unknown group '" + name + "'", name);
    }
  }
  if (!pixel) throw ParseError("controller config: missing group 'pixel'", "pixel");
  if (!local) throw ParseError("controller config: missing group 'local'", "local");
  ControllerConfig cfg{*pixel, *local};
  cfg.validate();
  return cfg;
}

std::vector<ControllerConfig> all_controller_configs() {
  std::vector<ControllerConfig> out;
  for (const auto& p : ViewSet::all_with_front()) {
    for (const auto& l : ViewSet::all_with_front()) out.push_back({p, l});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

ImagePrompt::ImagePrompt(ViewLabel label, Image rgb) : label_(label), rgb_(std::move(rgb)) {
  if (rgb_.width <= 0 || rgb_.height <= 0) throw DimensionError("image prompt: empty image");
  if (!rgb_.square()) {
    throw DimensionError("image prompt: image must be square, got " + std::to_string(rgb_.width) + "x" +
                         std::to_string(rgb_.height));
  }
  if (rgb_.rgb.size() != static_cast<std::size_t>(rgb_.width) * rgb_.height * 3) {
    throw DimensionError("image prompt: pixel buffer does not match image size");
  }
  hash_ = content_hash(rgb_);
  cache_hash_ = ~hash_;
}

ImagePrompt ImagePrompt::with_cache(PixelLatent latent, HiddenTokens hidden) const {
  ImagePrompt p = *this;
  p.pixel_latent_ = std::move(latent);
  p.hidden_tokens_ = std::move(hidden);
  p.cache_hash_ = hash_;
  return p;
}

ImagePrompt ImagePrompt::with_cache_hash(std::uint64_t h) const {
  ImagePrompt p = *this;
  p.cache_hash_ = h;
  return p;
}

PromptSet::PromptSet(std::vector<ImagePrompt> prompts) : prompts_(std::move(prompts)) {
  if (prompts_.empty() || prompts_.size() > 4) {
    throw ConfigError("prompt set: expected 1 to 4 prompts, got " + std::to_string(prompts_.size()));
  }
  ViewSet seen;
  for (const auto& p : prompts_) {
    if (seen.contains(p.label())) {
      throw ConfigError("prompt set: duplicate label '" + std::string(view_name(p.label())) + "'");
    }
    seen.insert(p.label());
  }
  if (!seen.contains(ViewLabel::front)) throw ConfigError("prompt set: a front prompt is required");
}

bool PromptSet::has(ViewLabel v) const { return labels().contains(v); }

const ImagePrompt& PromptSet::get(ViewLabel v) const {
  for (const auto& p : prompts_) {
    if (p.label() == v) return p;
  }
  throw ConfigError("prompt set: no prompt for view '" + std::string(view_name(v)) + "'");
}

ViewSet PromptSet::labels() const {
  ViewSet s;
  for (const auto& p : prompts_) s.insert(p.label());
  return s;
}

std::vector<const ImagePrompt*> PromptSet::select(const ViewSet& views) const {
  std::vector<const ImagePrompt*> out;
  for (const auto& p : prompts_) {
    if (views.contains(p.label())) out.push_back(&p);
  }
  return out;
}

PromptSet PromptSet::canonicalized() const {
  std::vector<ViewLabel> order;
  for (auto v : kCanonicalViews) {
    if (has(v)) order.push_back(v);
  }
  return reordered(order);
}

PromptSet PromptSet::reordered(const std::vector<ViewLabel>& order) const {
  if (static_cast<int>(order.size()) != size()) throw ConfigError("prompt set: reorder is not a permutation");
  std::vector<ImagePrompt> out;
  for (auto v : order) out.push_back(get(v));
  return PromptSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Cameras

CameraPose CameraPose::orbit(double azimuth_deg, double elevation_deg, double radius) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  CameraPose pose;
  pose.azimuth = azimuth_deg;
  pose.elevation = elevation_deg;
  pose.radius = radius;
  const Eigen::Vector3d back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  const Eigen::Vector3d world_up(0.0, 0.0, 1.0);
  const Eigen::Vector3d forward = -back;
  const Eigen::Vector3d right = forward.cross(world_up).normalized();
  const Eigen::Vector3d up = right.cross(forward);
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = up;
  pose.rotation.col(2) = back;
  pose.translation = radius * back;
  return pose;
}

Eigen::Matrix4d CameraPose::extrinsic() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RowVec CameraPose::flattened_extrinsic() const {
  const Eigen::Matrix4d m = extrinsic();
  RowVec flat(16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) flat[r * 4 + c] = m(r, c);
  }
  return flat;
}

bool CameraPose::orthonormal(double tol) const {
  return ((rotation.transpose() * rotation) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

std::array<CameraPose, 4> orthogonal_camera_rig() {
  std::array<CameraPose, 4> rig;
  for (int i = 0; i < 4; ++i) rig[i] = CameraPose::orbit(90.0 * i, kRigElevation, kRigRadius);
  return rig;
}

CameraPose rig_pose(ViewLabel v) { return orthogonal_camera_rig()[rig_slot(v)]; }

CameraEmbedder::CameraEmbedder(int dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "camera_embedder"));
  fc1_ = nn::Linear(kInput, dim, rng);
  fc2_ = nn::Linear(dim, dim, rng);
}

RowVec CameraEmbedder::adaptor(const RowVec& flat) const {
  if (flat.size() != kInput) throw DimensionError("camera embedder: expected 16 extrinsic entries");
  return fc2_.forward(nn::silu(fc1_.forward(flat)));
}

CameraEmbedding CameraEmbedder::embed(const CameraPose& pose) const {
  return {adaptor(pose.flattened_extrinsic())};
}

void CameraEmbedder::save(Checkpoint& ck, const std::string& prefix) const {
  fc1_.save(ck, prefix + ".fc1");
  fc2_.save(ck, prefix + ".fc2");
}

void CameraEmbedder::load(const Checkpoint& ck, const std::string& prefix) {
  fc1_.load(ck, prefix + ".fc1");
  fc2_.load(ck, prefix + ".fc2");
}

// ---------------------------------------------------------------------------
// RunConfigFile

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<std::string> RunConfigFile::get(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

RunConfigFile RunConfigFile::parse(std::string_view text) {
  RunConfigFile out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("run config: expected key = value", std::string(line));
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError("run config: empty key", std::string(line));
    if (out.get(key)) throw ParseError("run config: duplicate key", key);
    out.entries.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::string RunConfigFile::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

}  // namespace mvp

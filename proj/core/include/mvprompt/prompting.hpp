#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvprompt/checkpoint.hpp"
#include "mvprompt/features.hpp"
#include "mvprompt/nn.hpp"
#include "mvprompt/tensor.hpp"

namespace mvp {

enum class ViewLabel : std::uint8_t { front = 0, back = 1, left = 2, right = 3 };

/// Canonical label order: front, back, left, right.
inline constexpr std::array<ViewLabel, 4> kCanonicalViews = {ViewLabel::front, ViewLabel::back,
                                                             ViewLabel::left, ViewLabel::right};

/// Order of the four generated views: increasing azimuth (0, 90, 180, 270).
inline constexpr std::array<ViewLabel, 4> kRigOrder = {ViewLabel::front, ViewLabel::left,
                                                       ViewLabel::back, ViewLabel::right};

char view_letter(ViewLabel v);
std::string_view view_name(ViewLabel v);
std::optional<ViewLabel> view_from_letter(char c);
std::optional<ViewLabel> view_from_name(std::string_view name);
int rig_slot(ViewLabel v);

/// Subset of view labels; iteration is always in canonical order.
class ViewSet {
 public:
  ViewSet() = default;
  ViewSet(std::initializer_list<ViewLabel> labels);

  void insert(ViewLabel v) { bits_ |= bit(v); }
  bool contains(ViewLabel v) const { return (bits_ & bit(v)) != 0; }
  bool empty() const { return bits_ == 0; }
  int size() const;
  bool subset_of(const ViewSet& other) const { return (bits_ & ~other.bits_) == 0; }

  std::vector<ViewLabel> labels() const;
  /// e.g. "fb"
  std::string letters() const;

  /// All 15 nonempty subsets of the four labels.
  static std::vector<ViewSet> all_nonempty();
  /// The 8 subsets containing front.
  static std::vector<ViewSet> all_with_front();

  bool operator==(const ViewSet&) const = default;

 private:
  static std::uint8_t bit(ViewLabel v) { return static_cast<std::uint8_t>(1u << static_cast<int>(v)); }
  std::uint8_t bits_ = 0;
};

class PromptSet;

/// Which prompt views feed the pixel controller and which feed the local
/// controller. Printed as "pixel(f) + local(fb)".
struct ControllerConfig {
  ViewSet pixel_views;
  ViewSet local_views;

  /// pixel(f) + local(f)
  static ControllerConfig single_image();

  std::string canonical() const;
  /// Both sets nonempty and containing front.
  void validate() const;
  /// validate() plus every referenced label is present in `prompts`.
  void validate_against(const PromptSet& prompts) const;
  ViewSet required_views() const;

  bool operator==(const ControllerConfig&) const = default;
};

/// Parses `pixel(<letters>) + local(<letters>)`, whitespace-tolerant.
/// Throws ParseError naming the offending token.
ControllerConfig parse_controller_config(std::string_view text);

/// All 64 combinations of front-containing pixel and local sets.
std::vector<ControllerConfig> all_controller_configs();

/// One view-labelled image prompt plus optional cached encodings. The cache
/// is tagged with the content hash of the image it was computed from.
class ImagePrompt {
 public:
  ImagePrompt(ViewLabel label, Image rgb);

  ViewLabel label() const { return label_; }
  const Image& rgb() const { return rgb_; }
  std::uint64_t hash() const { return hash_; }

  const std::optional<PixelLatent>& pixel_latent() const { return pixel_latent_; }
  const std::optional<HiddenTokens>& hidden_tokens() const { return hidden_tokens_; }
  /// True when cached features were computed from the current image.
  bool cache_valid() const { return cache_hash_ == hash_; }

  ImagePrompt with_cache(PixelLatent latent, HiddenTokens hidden) const;
  /// Same prompt, cache tagged with an arbitrary hash (test hook for stale caches).
  ImagePrompt with_cache_hash(std::uint64_t h) const;

 private:
  ViewLabel label_;
  Image rgb_;
  std::uint64_t hash_ = 0;
  std::optional<PixelLatent> pixel_latent_;
  std::optional<HiddenTokens> hidden_tokens_;
  std::uint64_t cache_hash_ = 0;
};

/// Ordered collection of 1..4 prompts with distinct labels, including front.
class PromptSet {
 public:
  explicit PromptSet(std::vector<ImagePrompt> prompts);

  int size() const { return static_cast<int>(prompts_.size()); }
  const std::vector<ImagePrompt>& prompts() const { return prompts_; }
  bool has(ViewLabel v) const;
  const ImagePrompt& get(ViewLabel v) const;
  ViewSet labels() const;

  /// Prompts whose labels are in `views`, in this set's order.
  std::vector<const ImagePrompt*> select(const ViewSet& views) const;

  PromptSet canonicalized() const;
  /// Same prompts in the given label order (must be a permutation).
  PromptSet reordered(const std::vector<ViewLabel>& order) const;

 private:
  std::vector<ImagePrompt> prompts_;
};

struct CameraPose {
  double azimuth = 0.0;    // degrees
  double elevation = 0.0;  // degrees
  double radius = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // camera-to-world, columns right/up/back
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();   // camera centre in world

  /// Camera on a z-up orbit looking at the origin.
  static CameraPose orbit(double azimuth_deg, double elevation_deg, double radius);

  Eigen::Matrix4d extrinsic() const;
  /// Row-major flattening of extrinsic().
  RowVec flattened_extrinsic() const;
  bool orthonormal(double tol = 1e-6) const;
};

inline constexpr double kRigElevation = 0.0;
inline constexpr double kRigRadius = 2.5;

/// The four orthogonal rig poses in rig order (azimuth 0, 90, 180, 270).
std::array<CameraPose, 4> orthogonal_camera_rig();
/// Rig pose used for a given view label.
CameraPose rig_pose(ViewLabel v);

struct CameraEmbedding {
  RowVec vector;
};

/// Two-layer adaptor over the flattened 4x4 extrinsic matrix.
class CameraEmbedder {
 public:
  static constexpr int kInput = 16;

  CameraEmbedder(int dim, std::uint64_t seed);

  int dim() const { return fc2_.out_features(); }
  CameraEmbedding embed(const CameraPose& pose) const;
  RowVec adaptor(const RowVec& flat) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  nn::Linear fc1_;
  nn::Linear fc2_;
};

/// Flat `key = value` run configuration. Blank lines and lines starting
/// with '#' are skipped; keys keep file order.
struct RunConfigFile {
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> get(std::string_view key) const;

  /// Throws ParseError naming the offending line or duplicate key.
  static RunConfigFile parse(std::string_view text);
  std::string serialize() const;
};

}  // namespace mvp

#pragma once

// Band selection and per-profile normalization of fragments.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/block.hpp"
#include "tomembed/embed.hpp"

namespace tomembed {

struct NormalizationSpec {
  enum class Kind { kScaleClip, kZscore, kIdentity };

  Kind kind = Kind::kIdentity;
  double scale = 1.0;
  double clip_min = 0.0;
  double clip_max = 1.0;
  std::vector<double> means;  // zscore, one per selected band
  std::vector<double> stds;
  // zscore: x -> log10(max(x, log_floor)) before standardizing.
  bool log10 = false;
  double log_floor = 1e-6;

  // `bands` is the selected band count.
  void validate(std::size_t bands) const;
  bool operator==(const NormalizationSpec&) const = default;
};

std::string_view to_string(NormalizationSpec::Kind kind);
NormalizationSpec::Kind parse_normalization_kind(std::string_view text);

struct ModelProfile {
  std::string name;
  std::vector<std::string> band_selection;
  std::int32_t fragment_size = 224;
  double target_overlap = 0.1;
  bool border_shift = true;
  NormalizationSpec normalization;
  BackendRef backend;
  std::size_t embedding_dim = 0;

  void validate() const;
};

// clamp(2.5 x, 0, 1) element-wise.
Block true_color_scale(const Block& block);

// Picks `selection` out of a block whose channels are named `band_names`
// (case-insensitive). Throws std::invalid_argument when a band is missing.
Block select_bands(const Block& block, std::span<const std::string> band_names,
                   std::span<const std::string> selection);

// Normalizes a fragment that already carries exactly the profile's bands.
// Throws std::invalid_argument on a channel-count or spatial-size mismatch.
Block apply_profile(const Block& fragment, const ModelProfile& profile);
Block apply_profile(Block&& fragment, const ModelProfile& profile);
void apply_normalization(std::span<float> plane, const NormalizationSpec& spec, std::size_t band);

// s2-rgb-384, s2-rgb-224, s2-l1c-224, s1-rtc-224. The zscore profiles ship
// without statistics; they must come from a config file before use.
std::vector<ModelProfile> builtin_profiles();
std::optional<ModelProfile> builtin_profile(std::string_view name);

}  // namespace tomembed

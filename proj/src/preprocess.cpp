#include "tomembed/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "tomembed/error.hpp"

namespace tomembed {
namespace {

bool iequals(std::string_view a, std::string_view b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
    return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
  });
}

}  // namespace

std::string_view to_string(NormalizationSpec::Kind kind) {
  switch (kind) {
    case NormalizationSpec::Kind::kScaleClip:
      return "scale_clip";
    case NormalizationSpec::Kind::kZscore:
      return "zscore";
    case NormalizationSpec::Kind::kIdentity:
      return "identity";
  }
  return "identity";
}

NormalizationSpec::Kind parse_normalization_kind(std::string_view text) {
  if (text == "scale_clip") return NormalizationSpec::Kind::kScaleClip;
  if (text == "zscore") return NormalizationSpec::Kind::kZscore;
  if (text == "identity") return NormalizationSpec::Kind::kIdentity;
  throw ConfigError("unknown normalization '" + std::string(text) + "'");
}

void NormalizationSpec::validate(std::size_t bands) const {
  switch (kind) {
    case Kind::kScaleClip:
      if (!std::isfinite(scale) || !(clip_min < clip_max)) {
        throw std::invalid_argument("scale_clip needs a finite scale and clip_min < clip_max");
      }
      break;
    case Kind::kZscore:
      if (means.size() != bands || stds.size() != bands) {
        throw std::invalid_argument("zscore needs " + std::to_string(bands) + " means and stds, got " +
                                    std::to_string(means.size()) + " and " + std::to_string(stds.size()));
      }
      for (double s : stds) {
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("zscore stds must be positive");
      }
      if (log10 && !(log_floor > 0.0)) throw std::invalid_argument("log_floor must be positive");
      break;
    case Kind::kIdentity:
      break;
  }
}

void ModelProfile::validate() const {
  if (band_selection.empty()) throw std::invalid_argument("profile '" + name + "' selects no bands");
  if (embedding_dim < 1) throw std::invalid_argument("profile '" + name + "' has embedding_dim 0");
  if (fragment_size < 1) throw std::invalid_argument("profile '" + name + "' has fragment_size < 1");
  if (!(target_overlap >= 0.0 && target_overlap < 1.0)) {
    throw std::invalid_argument("profile '" + name + "' target_overlap outside [0, 1)");
  }
  normalization.validate(band_selection.size());
}

Block true_color_scale(const Block& block) {
  NormalizationSpec spec;
  spec.kind = NormalizationSpec::Kind::kScaleClip;
  spec.scale = 2.5;
  Block out = block;
  for (std::size_t c = 0; c < out.channels(); ++c) apply_normalization(out.plane(c), spec, c);
  return out;
}

Block select_bands(const Block& block, std::span<const std::string> band_names,
                   std::span<const std::string> selection) {
  if (band_names.size() != block.channels()) {
    throw std::invalid_argument("block has " + std::to_string(block.channels()) + " channels but " +
                                std::to_string(band_names.size()) + " band names");
  }
  Block out(selection.size(), block.rows(), block.cols());
  for (std::size_t i = 0; i < selection.size(); ++i) {
    auto it = std::find_if(band_names.begin(), band_names.end(),
                           [&](const std::string& n) { return iequals(n, selection[i]); });
    if (it == band_names.end()) throw std::invalid_argument("band '" + selection[i] + "' not present");
    const auto src = block.plane(static_cast<std::size_t>(it - band_names.begin()));
    std::copy(src.begin(), src.end(), out.plane(i).begin());
  }
  return out;
}

void apply_normalization(std::span<float> plane, const NormalizationSpec& spec, std::size_t band) {
  switch (spec.kind) {
    case NormalizationSpec::Kind::kScaleClip:
      for (float& v : plane) {
        v = static_cast<float>(std::clamp(spec.scale * static_cast<double>(v), spec.clip_min, spec.clip_max));
      }
      break;
    case NormalizationSpec::Kind::kZscore: {
      const double mean = spec.means.at(band);
      const double std = spec.stds.at(band);
      for (float& v : plane) {
        double x = v;
        if (spec.log10) x = std::log10(std::max(x, spec.log_floor));
        v = static_cast<float>((x - mean) / std);
      }
      break;
    }
    case NormalizationSpec::Kind::kIdentity:
      break;
  }
}

Block apply_profile(const Block& fragment, const ModelProfile& profile) {
  return apply_profile(Block(fragment), profile);
}

Block apply_profile(Block&& fragment, const ModelProfile& profile) {
  if (fragment.channels() != profile.band_selection.size()) {
    throw std::invalid_argument("fragment has " + std::to_string(fragment.channels()) + " bands, profile '" +
                                profile.name + "' expects " + std::to_string(profile.band_selection.size()));
  }
  const auto s = static_cast<std::size_t>(profile.fragment_size);
  if (fragment.rows() != s || fragment.cols() != s) {
    throw std::invalid_argument("fragment is " + std::to_string(fragment.rows()) + "x" +
                                std::to_string(fragment.cols()) + ", profile '" + profile.name + "' expects " +
                                std::to_string(s) + "x" + std::to_string(s));
  }
  profile.normalization.validate(fragment.channels());
  Block out = std::move(fragment);
  for (std::size_t c = 0; c < out.channels(); ++c) apply_normalization(out.plane(c), profile.normalization, c);
  return out;
}

std::vector<ModelProfile> builtin_profiles() {
  NormalizationSpec true_color;
  true_color.kind = NormalizationSpec::Kind::kScaleClip;
  true_color.scale = 2.5;
  true_color.clip_min = 0.0;
  true_color.clip_max = 1.0;

  NormalizationSpec zscore;
  zscore.kind = NormalizationSpec::Kind::kZscore;

  NormalizationSpec log_zscore = zscore;
  log_zscore.log10 = true;

  const std::vector<std::string> rgb = {"B04", "B03", "B02"};
  const std::vector<std::string> l1c = {"B01", "B02", "B03", "B04", "B05", "B06", "B07",
                                        "B08", "B8A", "B09", "B10", "B11", "B12"};

  std::vector<ModelProfile> out;
  out.push_back({"s2-rgb-384", rgb, 384, 0.1, true, true_color, {}, 1152});
  out.push_back({"s2-rgb-224", rgb, 224, 0.1, true, true_color, {}, 1024});
  out.push_back({"s2-l1c-224", l1c, 224, 0.1, true, zscore, {}, 2048});
  out.push_back({"s1-rtc-224", {"VV", "VH"}, 224, 0.1, true, log_zscore, {}, 2048});
  return out;
}

std::optional<ModelProfile> builtin_profile(std::string_view name) {
  for (auto& p : builtin_profiles()) {
    if (p.name == name) return p;
  }
  return std::nullopt;
}

}  // namespace tomembed

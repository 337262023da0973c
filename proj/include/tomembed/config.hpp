#pragma once

// Pipeline configuration files: a TOML subset with tables, dotted table
// names, strings, integers, floats, booleans, arrays and '#' comments.
//
//   workers = 4
//   profile = "s2-l1c-224"
//
//   [profiles.s2-l1c-224]
//   means = [0.13, 0.11, ...]
//   stds  = [0.03, 0.03, ...]

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "tomembed/preprocess.hpp"

namespace tomembed {

// Throws ConfigError with a line number on malformed input.
nlohmann::json parse_toml(std::string_view text);
nlohmann::json load_toml(const std::filesystem::path& path);

// Looks `name` up in the config's [profiles.<name>] table and in the
// built-in profiles. A config table refines the built-in profile of the
// same name, or the one named by its `base` key; otherwise it must define
// a complete profile. Keys: bands, fragment_size, target_overlap,
// border_shift, normalization, scale, clip_min, clip_max, means, stds,
// log10, log_floor, backend, embedding_dim, base.
ModelProfile resolve_profile(std::string_view name, const nlohmann::json& config);

}  // namespace tomembed

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "dlrgrid/autodiff.hpp"
#include "json.hpp"

namespace dlrgrid::autodiff {

inline constexpr int kParamFormatVersion = 1;

/// {"format":"dlrgrid.params","version":1,"params":[{name,shape,values}]},
/// values row-major.
nlohmann::json params_to_json(std::span<const Param> params);
std::vector<Param> params_from_json(const nlohmann::json& doc);

void save_params(const std::filesystem::path& path, std::span<const Param> params);
std::vector<Param> load_params(const std::filesystem::path& path);

}  // namespace dlrgrid::autodiff

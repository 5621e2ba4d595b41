#pragma once

#include "uq/data.hpp"
#include "uq/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace uq {

using nlohmann::json;

json to_json(const MlpConfig& cfg);
MlpConfig mlp_config_from_json(const json& j);

// {config, layers: [{weight: [[...]], bias: [...]}], step}
json to_json(const Mlp& net);
Mlp mlp_from_json(const json& j);

json to_json(const Standardizer& s);
Standardizer standardizer_from_json(const json& j);

json to_json(const AugmentationSpec& a);
AugmentationSpec augmentation_from_json(const json& j);

// {name, n, D, K, seed, split fractions, dropped columns}
json dataset_manifest(const DatasetTable& t);
json probe_manifest(const Probe& p);

std::string sha256_hex(std::string_view bytes);
// Compact dump with sorted keys; doubles in shortest round-trip form.
std::string canonical_dump(const json& j);

json read_json_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
void write_json_file(const std::filesystem::path& path, const json& j);

} // namespace uq

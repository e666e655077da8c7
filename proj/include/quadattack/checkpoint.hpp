#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "quadattack/model.hpp"

namespace quadattack {

nlohmann::json arch_to_json(const ArchSpec& arch);
/// Missing keys keep their defaults; unknown keys are rejected.
ArchSpec arch_from_json(const nlohmann::json& j);

/// Text checkpoint: architecture, explicit shapes, row-major values. Doubles
/// are written in shortest round-trip decimal form, so load(save(m)) is
/// bit-identical to m.
nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

/// `meta`, when an object, is stored under "meta" and ignored on load.
void save_model(const Model& model, const std::filesystem::path& path, const nlohmann::json& meta = {});
Model load_model(const std::filesystem::path& path);

}  // namespace quadattack

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Engine configuration shared by the CLI and the job service.

#include "textforge/application.hpp"

#include <filesystem>
#include <optional>
#include <string_view>

namespace textforge {

struct EngineConfig {
    pipeline::BackboneProfile profile = pipeline::BackboneProfile::reference_stub();
    std::uint64_t backbone_seed = 0;  // weights of the stub backbone
    losses::GuidanceWeights weights;
    pipeline::SamplingSchedule schedule;
    pipeline::AdamOptions adam;
    std::filesystem::path workspace;
    int device_slots = 1;
    std::size_t retention = 50;
};

/// Reads a JSON configuration:
///   {"profile": "profiles/stub.json", "backbone_seed": 0, "workspace": "...",
///    "device_slots": 1, "retention": 50,
///    "defaults": {"lambda_content": 5, "lambda_style": 10, "gamma": 2, "steps": 20,
///                 "sai_fraction": 0.5, "car_fraction": 1.0, "opt_stages": [0, 0.2, 0.4],
///                 "opt_iters": 20, "learning_rate": 0.01}}
/// A relative profile path is resolved against the configuration file's directory.
EngineConfig load_engine_config(const std::filesystem::path& path);
EngineConfig engine_config_from_json(std::string_view text, const std::filesystem::path& base_dir = {});

/// Workspace root: TEXTFORGE_WORKSPACE when set, else `fallback`.
std::filesystem::path workspace_from_env(const std::filesystem::path& fallback);

}  // namespace textforge

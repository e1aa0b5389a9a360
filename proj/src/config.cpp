// SPDX-License-Identifier: Apache-2.0
#include "textforge/config.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace textforge {

EngineConfig engine_config_from_json(std::string_view text, const std::filesystem::path& base_dir) {
    EngineConfig cfg;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (doc.contains("profile")) {
            std::filesystem::path p = doc.at("profile").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            cfg.profile = pipeline::BackboneProfile::load(p);
        }
        cfg.backbone_seed = doc.value("backbone_seed", cfg.backbone_seed);
        if (doc.contains("workspace")) cfg.workspace = doc.at("workspace").get<std::string>();
        cfg.device_slots = doc.value("device_slots", cfg.device_slots);
        cfg.retention = doc.value("retention", cfg.retention);
        if (doc.contains("defaults")) {
            const auto& d = doc.at("defaults");
            cfg.weights.lambda_content = d.value("lambda_content", cfg.weights.lambda_content);
            cfg.weights.lambda_style = d.value("lambda_style", cfg.weights.lambda_style);
            cfg.weights.gamma = d.value("gamma", cfg.weights.gamma);
            cfg.schedule.total_steps = d.value("steps", cfg.schedule.total_steps);
            cfg.schedule.sai_fraction = d.value("sai_fraction", cfg.schedule.sai_fraction);
            cfg.schedule.car_fraction = d.value("car_fraction", cfg.schedule.car_fraction);
            if (d.contains("opt_stages")) cfg.schedule.opt_stages = d.at("opt_stages").get<std::vector<double>>();
            cfg.schedule.opt_iters = d.value("opt_iters", cfg.schedule.opt_iters);
            cfg.adam.learning_rate = d.value("learning_rate", cfg.adam.learning_rate);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("engine config: ") + e.what());
    }
    if (cfg.device_slots < 1) throw ValidationError("engine config: device_slots must be >= 1");
    if (cfg.retention < 1) throw ValidationError("engine config: retention must be >= 1");
    try {
        cfg.weights.validate();
        cfg.schedule.validate();
    } catch (const ContractError& e) {
        throw ValidationError(std::string("engine config: ") + e.what());
    }
    return cfg;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return engine_config_from_json(buffer.str(), path.parent_path());
}

std::filesystem::path workspace_from_env(const std::filesystem::path& fallback) {
    if (const char* env = std::getenv("TEXTFORGE_WORKSPACE"); env && *env) return env;
    return fallback;
}

}  // namespace textforge

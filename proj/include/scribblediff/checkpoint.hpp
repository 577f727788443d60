#pragma once

#include <filesystem>
#include <string>

#include "scribblediff/denoiser.hpp"
#include "scribblediff/nn.hpp"
#include "scribblediff/segmentor.hpp"

#include "json.hpp"

namespace scribblediff {

// Checkpoint format: <base>.json manifest (tensor names/shapes/dtype plus an
// "extra" payload for the architecture config) and <base>.bin, the raw
// little-endian float32 blob in manifest order. Round-trips are bit-exact.
void save_param_store(const std::filesystem::path& base, const nn::ParamStore<float>& params,
                      const nlohmann::json& extra);

nn::ParamStore<float> load_param_store(const std::filesystem::path& base, nlohmann::json* extra);

uint64_t param_store_hash(const nn::ParamStore<float>& params);

nlohmann::json denoiser_config_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

void save_denoiser(const std::filesystem::path& base, const Denoiser& d);
Denoiser load_denoiser(const std::filesystem::path& base);

void save_segmentor(const std::filesystem::path& base, const Segmentor& seg);
Segmentor load_segmentor(const std::filesystem::path& base);

}  // namespace scribblediff

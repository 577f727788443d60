#include "scribblediff/checkpoint.hpp"

#include <bit>
#include <fstream>

namespace scribblediff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

void save_param_store(const std::filesystem::path& base, const nn::ParamStore<float>& params,
                      const nlohmann::json& extra) {
    nlohmann::json manifest;
    manifest["format"] = "scribblediff-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "f32le";
    auto tensors = nlohmann::json::array();
    for (const auto& t : params.tensors)
        tensors.push_back(
            {{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"count", t.count}});
    manifest["tensors"] = std::move(tensors);
    manifest["extra"] = extra;

    std::filesystem::path json_path = base;
    json_path += ".json";
    std::filesystem::path bin_path = base;
    bin_path += ".bin";

    std::ofstream jf(json_path);
    jf << manifest.dump(2) << "\n";
    if (!jf) throw std::runtime_error("checkpoint write failed: " + json_path.string());

    std::ofstream bf(bin_path, std::ios::binary);
    bf.write(reinterpret_cast<const char*>(params.data.data()),
             static_cast<std::streamsize>(params.data.size() * 4));
    if (!bf) throw std::runtime_error("checkpoint write failed: " + bin_path.string());
}

nn::ParamStore<float> load_param_store(const std::filesystem::path& base, nlohmann::json* extra) {
    std::filesystem::path json_path = base;
    json_path += ".json";
    std::filesystem::path bin_path = base;
    bin_path += ".bin";

    std::ifstream jf(json_path);
    if (!jf) throw std::runtime_error("checkpoint manifest missing: " + json_path.string());
    nlohmann::json manifest = nlohmann::json::parse(jf);
    if (manifest.at("format") != "scribblediff-checkpoint" || manifest.at("dtype") != "f32le")
        throw std::runtime_error("unrecognized checkpoint format: " + json_path.string());

    nn::ParamStore<float> params;
    size_t total = 0;
    for (const auto& t : manifest.at("tensors")) {
        nn::TensorInfo info;
        info.name = t.at("name").get<std::string>();
        info.shape = t.at("shape").get<std::vector<int>>();
        info.offset = t.at("offset").get<size_t>();
        info.count = t.at("count").get<size_t>();
        if (info.offset != total)
            throw std::runtime_error("checkpoint manifest offsets not contiguous");
        total += info.count;
        params.tensors.push_back(std::move(info));
    }
    params.data.resize(total);

    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint blob missing: " + bin_path.string());
    bf.read(reinterpret_cast<char*>(params.data.data()), static_cast<std::streamsize>(total * 4));
    if (bf.gcount() != static_cast<std::streamsize>(total * 4))
        throw std::runtime_error("checkpoint blob truncated: " + bin_path.string());
    if (extra) *extra = manifest.value("extra", nlohmann::json::object());
    return params;
}

uint64_t param_store_hash(const nn::ParamStore<float>& params) {
    return fnv1a64(params.data.data(), params.data.size() * 4);
}

nlohmann::json denoiser_config_json(const DenoiserConfig& cfg) {
    return {{"height", cfg.height},
            {"width", cfg.width},
            {"image_channels", cfg.image_channels},
            {"cond_channels", cfg.cond_channels},
            {"classes", cfg.classes},
            {"base_width", cfg.base_width},
            {"temb_dim", cfg.temb_dim},
            {"levels", cfg.levels},
            {"max_timestep", cfg.max_timestep}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig cfg;
    cfg.height = j.at("height").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.image_channels = j.at("image_channels").get<int>();
    cfg.cond_channels = j.at("cond_channels").get<int>();
    cfg.classes = j.at("classes").get<int>();
    cfg.base_width = j.at("base_width").get<int>();
    cfg.temb_dim = j.at("temb_dim").get<int>();
    cfg.levels = j.at("levels").get<int>();
    cfg.max_timestep = j.at("max_timestep").get<int>();
    cfg.validate();
    return cfg;
}

void save_denoiser(const std::filesystem::path& base, const Denoiser& d) {
    nlohmann::json extra;
    extra["model"] = "denoiser";
    extra["config"] = denoiser_config_json(d.cfg);
    save_param_store(base, d.params, extra);
}

Denoiser load_denoiser(const std::filesystem::path& base) {
    nlohmann::json extra;
    nn::ParamStore<float> params = load_param_store(base, &extra);
    if (extra.value("model", "") != "denoiser")
        throw std::runtime_error("checkpoint is not a denoiser: " + base.string());
    Denoiser d = Denoiser::layout(denoiser_config_from_json(extra.at("config")));
    if (d.params.data.size() != params.data.size())
        throw std::runtime_error("checkpoint parameter count mismatch: " + base.string());
    for (size_t i = 0; i < d.params.tensors.size(); ++i) {
        if (d.params.tensors[i].name != params.tensors[i].name ||
            d.params.tensors[i].offset != params.tensors[i].offset)
            throw std::runtime_error("checkpoint tensor layout mismatch: " + base.string());
    }
    d.params.data = std::move(params.data);
    return d;
}

void save_segmentor(const std::filesystem::path& base, const Segmentor& seg) {
    nlohmann::json extra;
    extra["model"] = "segmentor";
    extra["config"] = {{"height", seg.cfg.height},
                       {"width", seg.cfg.width},
                       {"in_channels", seg.cfg.in_channels},
                       {"classes", seg.cfg.classes},
                       {"width_channels", seg.cfg.width_channels}};
    save_param_store(base, seg.params, extra);
}

Segmentor load_segmentor(const std::filesystem::path& base) {
    nlohmann::json extra;
    nn::ParamStore<float> params = load_param_store(base, &extra);
    if (extra.value("model", "") != "segmentor")
        throw std::runtime_error("checkpoint is not a segmentor: " + base.string());
    const auto& cj = extra.at("config");
    SegmentorConfig cfg;
    cfg.height = cj.at("height").get<int>();
    cfg.width = cj.at("width").get<int>();
    cfg.in_channels = cj.at("in_channels").get<int>();
    cfg.classes = cj.at("classes").get<int>();
    cfg.width_channels = cj.at("width_channels").get<int>();
    Segmentor seg = Segmentor::layout(cfg);
    if (seg.params.data.size() != params.data.size())
        throw std::runtime_error("checkpoint parameter count mismatch: " + base.string());
    seg.params.data = std::move(params.data);
    return seg;
}

}  // namespace scribblediff

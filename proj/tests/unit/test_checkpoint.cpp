#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "scribblediff/checkpoint.hpp"

using namespace scribblediff;

TEST_CASE("denoiser checkpoints round-trip bit-exactly") {
    DenoiserConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.base_width = 6;
    cfg.temb_dim = 8;
    cfg.levels = 2;
    cfg.max_timestep = 30;
    Denoiser d = init_denoiser(cfg, 77);

    const auto dir = std::filesystem::temp_directory_path() / "scribblediff_test_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_denoiser(dir / "model", d);
    Denoiser loaded = load_denoiser(dir / "model");
    CHECK(std::memcmp(loaded.params.data.data(), d.params.data.data(),
                      d.params.data.size() * 4) == 0);
    CHECK(loaded.cfg.base_width == cfg.base_width);
    CHECK(loaded.cfg.max_timestep == cfg.max_timestep);
    CHECK(param_store_hash(loaded.params) == param_store_hash(d.params));

    // a second save of the loaded model produces identical bytes
    save_denoiser(dir / "model2", loaded);
    std::ifstream f1(dir / "model.bin", std::ios::binary);
    std::ifstream f2(dir / "model2.bin", std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // truncated blob is rejected
    std::filesystem::resize_file(dir / "model.bin",
                                 std::filesystem::file_size(dir / "model.bin") - 4);
    CHECK_THROWS_AS(load_denoiser(dir / "model"), std::runtime_error);

    // missing checkpoint names the path
    try {
        load_denoiser(dir / "absent");
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("absent") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("segmentor checkpoints round-trip and reject model kind mismatch") {
    SegmentorConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.classes = 4;
    cfg.width_channels = 10;
    Segmentor seg = init_segmentor(cfg, 9);

    const auto dir = std::filesystem::temp_directory_path() / "scribblediff_test_ckpt2";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_segmentor(dir / "seg", seg);
    Segmentor loaded = load_segmentor(dir / "seg");
    CHECK(loaded.params.data == seg.params.data);
    CHECK(loaded.cfg.width_channels == 10);

    CHECK_THROWS_AS(load_denoiser(dir / "seg"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scribblediff/denoiser.hpp"
#include "scribblediff/grid.hpp"
#include "scribblediff/rng.hpp"

namespace scribblediff {

enum class ScribbleRender { Rgb, OneHot };

struct WorldConfig {
    int height = 32;
    int width = 32;
    int classes = 4;  // background, circle, square, triangle
    double scribble_coverage = 0.03;
    double min_visible_fraction = 0.02;  // every placed shape and the background

    void validate() const;
};

// Fully-labeled scene: image in [-1,1], per-pixel class ids (0 = background)
// and the binary class-presence vector.
struct Scene {
    Grid image;
    LabelGrid full_mask;
    std::vector<uint8_t> class_set;
};

// Sparse stroke annotation; -1 marks unlabeled pixels. Labeled pixels always
// agree with the scene's full mask.
struct ScribbleMap {
    LabelGrid labels;
    double coverage = 0.0;
};

// class -> RGB color used when rendering scribbles as image channels
struct Palette {
    std::vector<std::array<float, 3>> colors;
    static Palette default_palette(int classes);
    void validate(int classes) const;
};

Scene generate_scene(const WorldConfig& cfg, Rng& rng);

// One confined random-walk stroke per present class (including background).
ScribbleMap draw_scribbles(const Scene& scene, double coverage_target, Rng& rng);

Grid render_condition(const ScribbleMap& sm, ScribbleRender mode, const Palette& palette);

struct DatasetItem {
    Scene scene;
    ScribbleMap scribbles;
    Condition cond;  // rendered scribble channels + class-set vector
};

struct Dataset {
    WorldConfig world;
    ScribbleRender cond_mode = ScribbleRender::Rgb;
    std::vector<DatasetItem> items;

    int cond_channels() const { return cond_mode == ScribbleRender::Rgb ? 3 : world.classes; }
    std::vector<TrainExample> train_examples() const;
    Dataset prefix(int n) const;  // first n items (nested-subset slicing)
};

// Per-item rng streams are keyed by (seed, index), so the first k items of a
// larger dataset equal a size-k dataset built with the same seed.
Dataset build_dataset(int n, const WorldConfig& cfg, ScribbleRender mode, uint64_t seed);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// raw little-endian binary payload helpers shared with the bank format
void write_f32_file(const std::filesystem::path& p, std::span<const float> v);
void write_i16_file(const std::filesystem::path& p, std::span<const int16_t> v);
std::vector<float> read_f32_file(const std::filesystem::path& p, size_t expect);
std::vector<int16_t> read_i16_file(const std::filesystem::path& p, size_t expect);

}  // namespace scribblediff

#include "scribblediff/shapesworld.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "scribblediff/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace scribblediff {

static_assert(std::endian::native == std::endian::little,
              "binary payloads are little-endian; big-endian hosts are unsupported");

namespace {

const uint64_t kTagScene = fnv1a64("world.scene");
const uint64_t kTagScrib = fnv1a64("world.scribble");

constexpr std::array<std::array<float, 3>, 3> kShapeBaseColor = {{
    {0.8f, -0.6f, -0.6f},   // circle
    {-0.6f, 0.8f, -0.6f},   // square
    {-0.5f, -0.5f, 0.9f},   // triangle
}};

float clampf(float x, float lo, float hi) { return x < lo ? lo : (x > hi ? hi : x); }

bool point_in_triangle(double px, double py, double x0, double y0, double x1, double y1, double x2,
                       double y2) {
    auto side = [](double ax, double ay, double bx, double by, double cx, double cy) {
        return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    };
    const double d0 = side(x0, y0, x1, y1, px, py);
    const double d1 = side(x1, y1, x2, y2, px, py);
    const double d2 = side(x2, y2, x0, y0, px, py);
    const bool has_neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
    const bool has_pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
    return !(has_neg && has_pos);
}

}  // namespace

void WorldConfig::validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("WorldConfig: grid must be >= 8x8");
    if (height % 4 != 0 || width % 4 != 0)
        throw std::invalid_argument("WorldConfig: height/width must be multiples of 4");
    if (classes < 2 || classes > 4)
        throw std::invalid_argument("WorldConfig: classes must be in [2,4] (background + shapes)");
    if (!(scribble_coverage > 0.0 && scribble_coverage <= 0.1))
        throw std::invalid_argument("WorldConfig: scribble_coverage must be in (0, 0.1]");
    if (!(min_visible_fraction > 0.0 && min_visible_fraction <= 0.2))
        throw std::invalid_argument("WorldConfig: min_visible_fraction out of range");
}

Palette Palette::default_palette(int classes) {
    Palette p;
    const std::array<std::array<float, 3>, 4> base = {{
        {1.0f, 1.0f, 1.0f},
        {1.0f, -1.0f, -1.0f},
        {-1.0f, 1.0f, -1.0f},
        {-1.0f, -1.0f, 1.0f},
    }};
    for (int c = 0; c < classes; ++c) p.colors.push_back(base[c % 4]);
    p.validate(classes);
    return p;
}

void Palette::validate(int classes) const {
    if (static_cast<int>(colors.size()) != classes)
        throw std::invalid_argument("Palette: one color per class required");
    for (size_t a = 0; a < colors.size(); ++a)
        for (size_t b = a + 1; b < colors.size(); ++b)
            if (colors[a] == colors[b])
                throw std::invalid_argument("Palette: two classes share a color");
}

Scene generate_scene(const WorldConfig& cfg, Rng& rng) {
    cfg.validate();
    const int H = cfg.height, W = cfg.width;
    const auto min_visible =
        static_cast<long>(std::ceil(cfg.min_visible_fraction * H * W));
    const int kinds = cfg.classes - 1;

    for (int attempt = 0; attempt < 100; ++attempt) {
        Scene scene;
        scene.image = Grid(3, H, W);
        scene.full_mask = LabelGrid(H, W, 0);
        std::vector<int> instance(static_cast<size_t>(H) * W, 0);

        // textured background: per-channel base tint + low-amplitude noise
        for (int c = 0; c < 3; ++c) {
            const auto base = static_cast<float>(rng.uniform() * 0.7 - 0.35);
            float* p = scene.image.plane(c);
            for (int i = 0; i < H * W; ++i)
                p[i] = base + static_cast<float>(rng.uniform() * 0.3 - 0.15);
        }

        const int n_shapes = static_cast<int>(rng.uniform_int(1, 3));
        std::vector<long> visible(n_shapes, 0);
        for (int k = 0; k < n_shapes; ++k) {
            const int cls = static_cast<int>(rng.uniform_int(1, kinds));
            const double r = (0.115 + rng.uniform() * 0.165) * std::min(H, W);
            const double cx = r + rng.uniform() * (W - 1 - 2 * r);
            const double cy = r + rng.uniform() * (H - 1 - 2 * r);
            const double theta = rng.uniform() * 0.9 - 0.45;  // squares/triangles rotate
            const double ct = std::cos(theta), st = std::sin(theta);
            std::array<float, 3> color{};
            for (int c = 0; c < 3; ++c)
                color[c] = clampf(kShapeBaseColor[cls - 1][c] +
                                      static_cast<float>(rng.uniform() * 0.9 - 0.45),
                                  -1.0f, 1.0f);

            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    bool inside = false;
                    if (cls == 1) {
                        inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
                    } else {
                        // test the point in the shape's rotated frame
                        const double ux = ct * (x - cx) + st * (y - cy);
                        const double uy = -st * (x - cx) + ct * (y - cy);
                        if (cls == 2) {
                            inside = std::abs(ux) <= 0.9 * r && std::abs(uy) <= 0.9 * r;
                        } else {
                            inside = point_in_triangle(ux, uy, 0.0, -r, -0.95 * r, 0.75 * r,
                                                       0.95 * r, 0.75 * r);
                        }
                    }
                    if (!inside) continue;
                    scene.full_mask.at(y, x) = static_cast<int16_t>(cls);
                    instance[static_cast<size_t>(y) * W + x] = k + 1;
                    for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = color[c];
                }
            }
        }

        std::vector<long> inst_count(n_shapes + 1, 0);
        for (int v : instance) ++inst_count[v];
        bool ok = inst_count[0] >= min_visible;  // background stays visible
        for (int k = 1; k <= n_shapes && ok; ++k) ok = inst_count[k] >= min_visible;
        if (!ok) continue;

        scene.class_set.assign(cfg.classes, 0);
        for (int16_t m : scene.full_mask.v) scene.class_set[m] = 1;
        return scene;
    }
    throw std::runtime_error("generate_scene: could not satisfy visibility constraints");
}

ScribbleMap draw_scribbles(const Scene& scene, double coverage_target, Rng& rng) {
    if (!(coverage_target > 0.0 && coverage_target <= 0.1))
        throw std::invalid_argument("draw_scribbles: coverage_target must be in (0, 0.1]");
    const int H = scene.full_mask.h, W = scene.full_mask.w;
    const long total = static_cast<long>(H) * W;

    ScribbleMap sm;
    sm.labels = LabelGrid(H, W, -1);

    // collect region pixels per present class
    const int C = static_cast<int>(scene.class_set.size());
    std::vector<std::vector<int>> region(C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) region[scene.full_mask.at(y, x)].push_back(y * W + x);

    std::vector<int> present;
    for (int c = 0; c < C; ++c)
        if (scene.class_set[c]) present.push_back(c);

    const long target = std::max<long>(static_cast<long>(present.size()),
                                       std::lround(coverage_target * total));

    // proportional budgets with a floor of one pixel; remainder goes to the
    // largest region (processed last: the background)
    std::vector<long> budget(C, 0);
    long assigned = 0;
    for (int c : present) {
        budget[c] = std::max<long>(1, (target * static_cast<long>(region[c].size())) / total);
        budget[c] = std::min<long>(budget[c], static_cast<long>(region[c].size()));
        assigned += budget[c];
    }

    // walk order: foreground classes first, background last so shortfalls can
    // be absorbed by the largest region
    std::vector<int> order;
    for (int c : present)
        if (c != 0) order.push_back(c);
    if (scene.class_set[0]) order.push_back(0);

    long labeled_total = 0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
        const int c = order[oi];
        long want = budget[c];
        if (c == 0)
            want = std::min<long>(static_cast<long>(region[c].size()),
                                  budget[c] + std::max<long>(0, target - assigned));
        const auto& pix = region[c];
        const int start = pix[rng.uniform_int(0, static_cast<int64_t>(pix.size()) - 1)];
        int cur = start;
        sm.labels.v[cur] = static_cast<int16_t>(c);
        long newly = 1;
        ++labeled_total;
        const long max_steps = 200 * want + 200;
        long steps = 0;
        std::array<int, 4> nbr{};
        while (newly < want && steps < max_steps) {
            ++steps;
            const int y = cur / W, x = cur % W;
            int n_nbr = 0;
            if (y > 0 && scene.full_mask.at(y - 1, x) == c) nbr[n_nbr++] = cur - W;
            if (y + 1 < H && scene.full_mask.at(y + 1, x) == c) nbr[n_nbr++] = cur + W;
            if (x > 0 && scene.full_mask.at(y, x - 1) == c) nbr[n_nbr++] = cur - 1;
            if (x + 1 < W && scene.full_mask.at(y, x + 1) == c) nbr[n_nbr++] = cur + 1;
            if (n_nbr == 0) break;  // isolated pixel: single-pixel stroke
            cur = nbr[rng.uniform_int(0, n_nbr - 1)];
            if (sm.labels.v[cur] < 0) {
                sm.labels.v[cur] = static_cast<int16_t>(c);
                ++newly;
                ++labeled_total;
            }
        }
    }

    sm.coverage = static_cast<double>(labeled_total) / static_cast<double>(total);
    return sm;
}

Grid render_condition(const ScribbleMap& sm, ScribbleRender mode, const Palette& palette) {
    const int H = sm.labels.h, W = sm.labels.w;
    const int C = static_cast<int>(palette.colors.size());
    palette.validate(C);
    if (mode == ScribbleRender::Rgb) {
        Grid out(3, H, W, 0.0f);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int16_t c = sm.labels.at(y, x);
                if (c < 0) continue;
                if (c >= C) throw std::invalid_argument("render_condition: label exceeds palette");
                for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = palette.colors[c][ch];
            }
        return out;
    }
    Grid out(C, H, W, 0.0f);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int16_t c = sm.labels.at(y, x);
            if (c < 0) continue;
            if (c >= C) throw std::invalid_argument("render_condition: label exceeds classes");
            out.at(c, y, x) = 1.0f;
        }
    return out;
}

std::vector<TrainExample> Dataset::train_examples() const {
    std::vector<TrainExample> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back({&it.scene.image, &it.cond});
    return out;
}

Dataset Dataset::prefix(int n) const {
    if (n < 0 || n > static_cast<int>(items.size()))
        throw std::invalid_argument("Dataset::prefix: n out of range");
    Dataset out;
    out.world = world;
    out.cond_mode = cond_mode;
    out.items.assign(items.begin(), items.begin() + n);
    return out;
}

Dataset build_dataset(int n, const WorldConfig& cfg, ScribbleRender mode, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("build_dataset: n must be >= 1");
    cfg.validate();
    Dataset ds;
    ds.world = cfg;
    ds.cond_mode = mode;
    ds.items.resize(n);
    const Palette palette = Palette::default_palette(cfg.classes);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
    for (int i = 0; i < n; ++i) {
        Rng scene_rng(derive_seed(seed, kTagScene, static_cast<uint64_t>(i)));
        Rng scrib_rng(derive_seed(seed, kTagScrib, static_cast<uint64_t>(i)));
        DatasetItem item;
        item.scene = generate_scene(cfg, scene_rng);
        item.scribbles = draw_scribbles(item.scene, cfg.scribble_coverage, scrib_rng);
        item.cond.scribble = render_condition(item.scribbles, mode, palette);
        item.cond.class_set.assign(item.scene.class_set.begin(), item.scene.class_set.end());
        ds.items[i] = std::move(item);
    }
    return ds;
}

void write_f32_file(const std::filesystem::path& p, std::span<const float> v) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + p.string());
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

void write_i16_file(const std::filesystem::path& p, std::span<const int16_t> v) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + p.string());
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 2));
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::vector<float> read_f32_file(const std::filesystem::path& p, size_t expect) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + p.string());
    std::vector<float> v(expect);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expect * 4));
    if (f.gcount() != static_cast<std::streamsize>(expect * 4))
        throw std::runtime_error("short read: " + p.string());
    return v;
}

std::vector<int16_t> read_i16_file(const std::filesystem::path& p, size_t expect) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + p.string());
    std::vector<int16_t> v(expect);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expect * 2));
    if (f.gcount() != static_cast<std::streamsize>(expect * 2))
        throw std::runtime_error("short read: " + p.string());
    return v;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json idx;
    idx["version"] = 1;
    idx["kind"] = "scribblediff-dataset";
    idx["world"] = {{"height", ds.world.height},
                    {"width", ds.world.width},
                    {"classes", ds.world.classes},
                    {"scribble_coverage", ds.world.scribble_coverage},
                    {"min_visible_fraction", ds.world.min_visible_fraction}};
    idx["cond_mode"] = ds.cond_mode == ScribbleRender::Rgb ? "rgb" : "one_hot";
    idx["count"] = ds.items.size();
    {
        nlohmann::json cfg = {{"world", idx["world"]}, {"cond_mode", idx["cond_mode"]}};
        const std::string dump = cfg.dump();
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(dump.data(), dump.size())));
        idx["config_hash"] = hex;
    }
    auto items = nlohmann::json::array();
    char name[64];
    for (size_t i = 0; i < ds.items.size(); ++i) {
        const auto& it = ds.items[i];
        std::snprintf(name, sizeof(name), "item_%05zu", i);
        const std::string base = name;
        write_f32_file(dir / (base + ".image.bin"), it.scene.image.v);
        write_f32_file(dir / (base + ".cond.bin"), it.cond.scribble.v);
        write_i16_file(dir / (base + ".mask.bin"), it.scene.full_mask.v);
        write_i16_file(dir / (base + ".scribble.bin"), it.scribbles.labels.v);
        items.push_back({{"image", base + ".image.bin"},
                         {"cond", base + ".cond.bin"},
                         {"mask", base + ".mask.bin"},
                         {"scribble", base + ".scribble.bin"}});
    }
    idx["items"] = std::move(items);
    std::ofstream f(dir / "index.json");
    f << idx.dump(2) << "\n";
    if (!f) throw std::runtime_error("write failed: " + (dir / "index.json").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream f(dir / "index.json");
    if (!f) throw std::runtime_error("dataset manifest missing: " + (dir / "index.json").string());
    nlohmann::json idx = nlohmann::json::parse(f);
    if (idx.at("kind") != "scribblediff-dataset")
        throw std::runtime_error("not a dataset directory: " + dir.string());

    Dataset ds;
    const auto& w = idx.at("world");
    ds.world.height = w.at("height").get<int>();
    ds.world.width = w.at("width").get<int>();
    ds.world.classes = w.at("classes").get<int>();
    ds.world.scribble_coverage = w.at("scribble_coverage").get<double>();
    ds.world.min_visible_fraction = w.at("min_visible_fraction").get<double>();
    ds.world.validate();
    const std::string mode = idx.at("cond_mode").get<std::string>();
    if (mode == "rgb")
        ds.cond_mode = ScribbleRender::Rgb;
    else if (mode == "one_hot")
        ds.cond_mode = ScribbleRender::OneHot;
    else
        throw std::runtime_error("unknown cond_mode: " + mode);

    const auto count = idx.at("count").get<size_t>();
    const auto& items = idx.at("items");
    if (items.size() != count) throw std::runtime_error("dataset manifest count mismatch");

    const int H = ds.world.height, W = ds.world.width;
    const size_t hw = static_cast<size_t>(H) * W;
    const int K = ds.cond_channels();
    ds.items.resize(count);
    for (size_t i = 0; i < count; ++i) {
        const auto& e = items[i];
        DatasetItem it;
        it.scene.image = Grid(3, H, W);
        it.scene.image.v = read_f32_file(dir / e.at("image").get<std::string>(), 3 * hw);
        it.cond.scribble = Grid(K, H, W);
        it.cond.scribble.v = read_f32_file(dir / e.at("cond").get<std::string>(), K * hw);
        it.scene.full_mask = LabelGrid(H, W);
        it.scene.full_mask.v = read_i16_file(dir / e.at("mask").get<std::string>(), hw);
        it.scribbles.labels = LabelGrid(H, W);
        it.scribbles.labels.v = read_i16_file(dir / e.at("scribble").get<std::string>(), hw);

        it.scene.class_set.assign(ds.world.classes, 0);
        for (int16_t m : it.scene.full_mask.v) {
            if (m < 0 || m >= ds.world.classes) throw std::runtime_error("mask label out of range");
            it.scene.class_set[m] = 1;
        }
        long labeled = 0;
        for (int16_t m : it.scribbles.labels.v)
            if (m >= 0) ++labeled;
        it.scribbles.coverage = static_cast<double>(labeled) / static_cast<double>(hw);
        it.cond.class_set.assign(it.scene.class_set.begin(), it.scene.class_set.end());
        ds.items[i] = std::move(it);
    }
    return ds;
}

}  // namespace scribblediff

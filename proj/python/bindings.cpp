#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scribblediff/checkpoint.hpp"
#include "scribblediff/config.hpp"
#include "scribblediff/metrics.hpp"
#include "scribblediff/parallel.hpp"
#include "scribblediff/pipeline.hpp"

namespace py = pybind11;
using namespace scribblediff;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int16_t, py::array::c_style | py::array::forcecast>;

Grid grid_from_numpy(const FloatArray& a) {
    if (a.ndim() != 3) throw std::invalid_argument("expected an array of shape (c, h, w)");
    Grid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
           static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + g.size(), g.v.begin());
    return g;
}

py::array_t<float> grid_to_numpy(const Grid& g) {
    py::array_t<float> out({g.c, g.h, g.w});
    std::copy(g.v.begin(), g.v.end(), out.mutable_data());
    return out;
}

LabelGrid labels_from_numpy(const IntArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected an array of shape (h, w)");
    LabelGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + g.size(), g.v.begin());
    return g;
}

py::array_t<int16_t> labels_to_numpy(const LabelGrid& g) {
    py::array_t<int16_t> out({g.h, g.w});
    std::copy(g.v.begin(), g.v.end(), out.mutable_data());
    return out;
}

Condition condition_from(const FloatArray& scribble, const std::vector<float>& class_set) {
    return Condition{grid_from_numpy(scribble), class_set};
}

std::vector<LabelGrid> label_list_from_numpy(const py::array_t<int16_t>& a) {
    IntArray arr(a);
    if (arr.ndim() != 3) throw std::invalid_argument("expected an array of shape (n, h, w)");
    const int n = static_cast<int>(arr.shape(0));
    const int h = static_cast<int>(arr.shape(1));
    const int w = static_cast<int>(arr.shape(2));
    std::vector<LabelGrid> out(n, LabelGrid(h, w));
    for (int i = 0; i < n; ++i)
        std::copy(arr.data() + static_cast<size_t>(i) * h * w,
                  arr.data() + static_cast<size_t>(i + 1) * h * w, out[i].v.begin());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "scribble-conditioned diffusion data augmentation lab";

    m.def("set_max_jobs", &set_max_jobs, py::arg("jobs"));

    // schedule
    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("T", &NoiseSchedule::T)
        .def_readonly("betas", &NoiseSchedule::betas)
        .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars);
    m.def("make_linear_schedule", &make_linear_schedule, py::arg("timesteps"),
          py::arg("beta_start"), py::arg("beta_end"));
    m.def(
        "forward_diffuse",
        [](const NoiseSchedule& s, const FloatArray& x0, int t, const FloatArray& eps) {
            return grid_to_numpy(forward_diffuse(s, grid_from_numpy(x0), t, grid_from_numpy(eps)));
        },
        py::arg("schedule"), py::arg("x0"), py::arg("t"), py::arg("eps"));
    m.def(
        "make_tau",
        [](int T, int N, double lam) { return make_tau(T, N, lam).taus; },
        py::arg("timesteps"), py::arg("steps"), py::arg("encode_ratio"));

    // sampler primitives
    m.def(
        "guided_noise",
        [](const FloatArray& c, const FloatArray& u, double w) {
            return grid_to_numpy(guided_noise(grid_from_numpy(c), grid_from_numpy(u), w));
        },
        py::arg("eps_cond"), py::arg("eps_uncond"), py::arg("w"));
    m.def(
        "reconstruct_x0",
        [](const FloatArray& x_t, const FloatArray& eps, double abar) {
            return grid_to_numpy(reconstruct_x0(grid_from_numpy(x_t), grid_from_numpy(eps), abar));
        },
        py::arg("x_t"), py::arg("eps"), py::arg("alpha_bar"));
    m.def("sigma_for", &sigma_for, py::arg("schedule"), py::arg("tau_prev"), py::arg("tau_cur"),
          py::arg("eta"));
    m.def(
        "ddim_step",
        [](const FloatArray& x_cur, const FloatArray& x0_hat, const NoiseSchedule& s, int tau_prev,
           int tau_cur, double sigma, const FloatArray& noise) {
            return grid_to_numpy(ddim_step(grid_from_numpy(x_cur), grid_from_numpy(x0_hat), s,
                                           tau_prev, tau_cur, sigma, grid_from_numpy(noise)));
        },
        py::arg("x_cur"), py::arg("x0_hat"), py::arg("schedule"), py::arg("tau_prev"),
        py::arg("tau_cur"), py::arg("sigma"), py::arg("noise"));

    // shapes world
    py::class_<WorldConfig>(m, "WorldConfig")
        .def(py::init([](int height, int width, int classes, double coverage) {
                 WorldConfig w;
                 w.height = height;
                 w.width = width;
                 w.classes = classes;
                 w.scribble_coverage = coverage;
                 w.validate();
                 return w;
             }),
             py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 4,
             py::arg("scribble_coverage") = 0.03)
        .def_readonly("height", &WorldConfig::height)
        .def_readonly("width", &WorldConfig::width)
        .def_readonly("classes", &WorldConfig::classes);

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", [](const Dataset& d) { return d.items.size(); })
        .def("image", [](const Dataset& d, int i) { return grid_to_numpy(d.items.at(i).scene.image); })
        .def("mask",
             [](const Dataset& d, int i) { return labels_to_numpy(d.items.at(i).scene.full_mask); })
        .def("scribbles",
             [](const Dataset& d, int i) { return labels_to_numpy(d.items.at(i).scribbles.labels); })
        .def("condition",
             [](const Dataset& d, int i) { return grid_to_numpy(d.items.at(i).cond.scribble); })
        .def("class_set",
             [](const Dataset& d, int i) { return d.items.at(i).cond.class_set; })
        .def("coverage", [](const Dataset& d, int i) { return d.items.at(i).scribbles.coverage; })
        .def("prefix", &Dataset::prefix, py::arg("n"));
    m.def(
        "build_dataset",
        [](int n, const WorldConfig& w, const std::string& mode, uint64_t seed) {
            return build_dataset(
                n, w, mode == "one_hot" ? ScribbleRender::OneHot : ScribbleRender::Rgb, seed);
        },
        py::arg("n"), py::arg("world"), py::arg("cond_mode") = "rgb", py::arg("seed") = 1);
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("directory"));
    m.def("load_dataset", &load_dataset, py::arg("directory"));

    // denoiser
    py::class_<DenoiserConfig>(m, "DenoiserConfig")
        .def(py::init([](int height, int width, int cond_channels, int classes, int base_width,
                         int temb_dim, int levels, int max_timestep) {
                 DenoiserConfig cfg;
                 cfg.height = height;
                 cfg.width = width;
                 cfg.cond_channels = cond_channels;
                 cfg.classes = classes;
                 cfg.base_width = base_width;
                 cfg.temb_dim = temb_dim;
                 cfg.levels = levels;
                 cfg.max_timestep = max_timestep;
                 cfg.validate();
                 return cfg;
             }),
             py::arg("height") = 32, py::arg("width") = 32, py::arg("cond_channels") = 3,
             py::arg("classes") = 4, py::arg("base_width") = 12, py::arg("temb_dim") = 32,
             py::arg("levels") = 3, py::arg("max_timestep") = 200);
    py::class_<Denoiser>(m, "Denoiser")
        .def_property_readonly("n_params", [](const Denoiser& d) { return d.params.data.size(); })
        .def_property_readonly("config", [](const Denoiser& d) { return d.cfg; });
    m.def("init_denoiser", &init_denoiser, py::arg("config"), py::arg("seed"));
    m.def(
        "predict_noise",
        [](const Denoiser& d, const FloatArray& x_t, int t, py::object scribble,
           py::object class_set, const std::string& path) {
            CondPath p = CondPath::Full;
            if (path == "null_scribble")
                p = CondPath::NullScribble;
            else if (path == "null_all")
                p = CondPath::NullAll;
            else if (path != "full")
                throw std::invalid_argument("path must be full|null_scribble|null_all");
            if (scribble.is_none())
                return grid_to_numpy(predict_noise(d, grid_from_numpy(x_t), t, nullptr));
            Condition cond = condition_from(scribble.cast<FloatArray>(),
                                            class_set.cast<std::vector<float>>());
            return grid_to_numpy(predict_noise(d, grid_from_numpy(x_t), t, cond, p));
        },
        py::arg("denoiser"), py::arg("x_t"), py::arg("t"), py::arg("scribble") = py::none(),
        py::arg("class_set") = py::none(), py::arg("path") = "full");
    m.def(
        "train_denoiser",
        [](Denoiser& d, const Dataset& ds, const NoiseSchedule& s, int epochs, int batch_size,
           double lr0, double lr_final, double momentum, double dropout, bool drop_class_set,
           uint64_t seed) {
            DenoiserTrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = batch_size;
            tc.lr0 = lr0;
            tc.lr_final = lr_final;
            tc.momentum = momentum;
            tc.dropout_rate = dropout;
            tc.drop_class_set = drop_class_set;
            const auto ex = ds.train_examples();
            return train_denoiser(d, ex, s, tc, seed).epoch_loss;
        },
        py::arg("denoiser"), py::arg("dataset"), py::arg("schedule"), py::arg("epochs") = 10,
        py::arg("batch_size") = 16, py::arg("lr0") = 0.02, py::arg("lr_final") = 0.002,
        py::arg("momentum") = 0.9, py::arg("dropout") = 0.1, py::arg("drop_class_set") = false,
        py::arg("seed") = 1);
    m.def("save_denoiser", &save_denoiser, py::arg("path"), py::arg("denoiser"));
    m.def("load_denoiser", &load_denoiser, py::arg("path"));

    // sampling
    m.def(
        "sample",
        [](const Denoiser& d, const NoiseSchedule& s, const FloatArray& x_ref,
           const FloatArray& scribble, const std::vector<float>& class_set, double w, double lam,
           int steps, double eta, uint64_t seed, bool uncond_keeps_class_set) {
            SamplerConfig cfg;
            cfg.w = w;
            cfg.lambda = lam;
            cfg.steps = steps;
            cfg.eta = eta;
            cfg.seed = seed;
            cfg.uncond_keeps_class_set = uncond_keeps_class_set;
            return grid_to_numpy(
                sample(d, s, grid_from_numpy(x_ref), condition_from(scribble, class_set), cfg));
        },
        py::arg("denoiser"), py::arg("schedule"), py::arg("x_ref"), py::arg("scribble"),
        py::arg("class_set"), py::arg("w") = 2.0, py::arg("encode_ratio") = 1.0,
        py::arg("steps") = 50, py::arg("eta") = 0.0, py::arg("seed") = 0,
        py::arg("uncond_keeps_class_set") = true);

    // bank + schemes
    py::class_<SyntheticBank>(m, "SyntheticBank")
        .def_readonly("lambdas", &SyntheticBank::lambdas)
        .def_readonly("n_images", &SyntheticBank::n_images)
        .def("entry",
             [](const SyntheticBank& b, int image_id, int lambda_idx) {
                 return grid_to_numpy(b.at(image_id, lambda_idx));
             })
        .def("lambda_index", &SyntheticBank::lambda_index);
    m.def(
        "synthesize_bank",
        [](const Denoiser& d, const NoiseSchedule& s, const Dataset& ds,
           const std::vector<double>& lambdas, double w, int steps, double eta, uint64_t seed) {
            return synthesize_bank(d, s, ds, lambdas, w, steps, eta, seed);
        },
        py::arg("denoiser"), py::arg("schedule"), py::arg("dataset"), py::arg("lambdas"),
        py::arg("w") = 2.0, py::arg("steps") = 50, py::arg("eta") = 0.0, py::arg("seed") = 0);
    m.def("save_bank", &save_bank, py::arg("bank"), py::arg("directory"));
    m.def("load_bank", &load_bank, py::arg("directory"), py::arg("expected_denoiser_hash") = 0);
    m.def("make_adaptive_schedule", &make_adaptive_schedule, py::arg("lambdas"), py::arg("epochs"));

    // segmentor
    py::class_<SegmentorConfig>(m, "SegmentorConfig")
        .def(py::init([](int height, int width, int classes, int width_channels) {
                 SegmentorConfig cfg;
                 cfg.height = height;
                 cfg.width = width;
                 cfg.classes = classes;
                 cfg.width_channels = width_channels;
                 cfg.validate();
                 return cfg;
             }),
             py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 4,
             py::arg("width_channels") = 48);
    py::class_<Segmentor>(m, "Segmentor")
        .def_property_readonly("n_params", [](const Segmentor& s) { return s.params.data.size(); });
    m.def("init_segmentor", &init_segmentor, py::arg("config"), py::arg("seed"));
    m.def(
        "seg_predict",
        [](const Segmentor& seg, const FloatArray& img) {
            return grid_to_numpy(seg_predict(seg, grid_from_numpy(img)));
        },
        py::arg("segmentor"), py::arg("image"));
    m.def(
        "partial_ce_loss",
        [](const FloatArray& logits, const IntArray& labels) {
            ScribbleMap sm;
            sm.labels = labels_from_numpy(labels);
            return partial_ce_loss(grid_from_numpy(logits), sm);
        },
        py::arg("logits"), py::arg("scribble_labels"));
    m.def(
        "train_segmentor",
        [](Segmentor& seg, const Dataset& ds, py::object bank, const std::string& scheme,
           const std::vector<double>& lambdas, int epochs, int batch_size, double lr0,
           double lr_power, double momentum, double pairwise_weight, uint64_t seed) {
            SegTrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = batch_size;
            tc.lr0 = lr0;
            tc.lr_power = lr_power;
            tc.momentum = momentum;
            tc.pairwise_weight = pairwise_weight;
            const SyntheticBank* bank_ptr =
                bank.is_none() ? nullptr : bank.cast<const SyntheticBank*>();
            SegTrainHistory h = train_segmentor(seg, ds, bank_ptr,
                                                parse_scheme(scheme, lambdas, epochs), tc, seed);
            return h.epoch_loss;
        },
        py::arg("segmentor"), py::arg("dataset"), py::arg("bank") = py::none(),
        py::arg("scheme") = "none", py::arg("lambdas") = std::vector<double>{0.5, 1.0},
        py::arg("epochs") = 12, py::arg("batch_size") = 16, py::arg("lr0") = 0.1,
        py::arg("lr_power") = 0.9, py::arg("momentum") = 0.9, py::arg("pairwise_weight") = 0.0,
        py::arg("seed") = 1);
    m.def("evaluate_miou", &evaluate_miou, py::arg("segmentor"), py::arg("dataset"));

    // metrics
    m.def(
        "extract_features",
        [](const py::array_t<float>& images, const std::string& kind, int rp_dim,
           uint64_t rp_seed) {
            FloatArray arr(images);
            if (arr.ndim() != 4) throw std::invalid_argument("expected (n, c, h, w)");
            std::vector<Grid> grids;
            const int n = static_cast<int>(arr.shape(0));
            for (int i = 0; i < n; ++i) {
                Grid g(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(2)),
                       static_cast<int>(arr.shape(3)));
                std::copy(arr.data() + static_cast<size_t>(i) * g.size(),
                          arr.data() + static_cast<size_t>(i + 1) * g.size(), g.v.begin());
                grids.push_back(std::move(g));
            }
            FeatureConfig fc;
            fc.kind = kind == "random_projection" ? FeatureConfig::Kind::RandomProjection
                                                  : FeatureConfig::Kind::PooledPixels;
            fc.rp_dim = rp_dim;
            fc.rp_seed = rp_seed;
            FeatureMatrix f = extract_features(grids, fc);
            py::array_t<double> out({f.n, f.d});
            std::copy(f.v.begin(), f.v.end(), out.mutable_data());
            return out;
        },
        py::arg("images"), py::arg("kind") = "pooled_pixels", py::arg("rp_dim") = 64,
        py::arg("rp_seed") = 1);
    m.def(
        "frechet_distance",
        [](const py::array_t<double>& feats_a, const py::array_t<double>& feats_b) {
            auto to_fm = [](const py::array_t<double>& a) {
                py::array_t<double, py::array::c_style | py::array::forcecast> arr(a);
                if (arr.ndim() != 2) throw std::invalid_argument("expected (n, d) features");
                FeatureMatrix f;
                f.n = static_cast<int>(arr.shape(0));
                f.d = static_cast<int>(arr.shape(1));
                f.v.assign(arr.data(), arr.data() + static_cast<size_t>(f.n) * f.d);
                return f;
            };
            return frechet_distance(fit_gaussian(to_fm(feats_a)), fit_gaussian(to_fm(feats_b)));
        },
        py::arg("features_a"), py::arg("features_b"));
    m.def(
        "miou",
        [](const py::array_t<int16_t>& pred, const py::array_t<int16_t>& gt, int classes) {
            MiouResult r = miou(label_list_from_numpy(pred), label_list_from_numpy(gt), classes);
            return py::make_tuple(r.miou, r.per_class);
        },
        py::arg("pred"), py::arg("gt"), py::arg("classes"));

    // experiment pipeline
    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            Report r = run_experiment(parse_config(nlohmann::json::parse(config_json)));
            return report_to_json(r).dump();
        },
        py::arg("config_json"),
        "Run the full study from a JSON config string; returns the report as a JSON string.");
}

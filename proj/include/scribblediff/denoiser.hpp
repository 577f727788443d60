#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scribblediff/grid.hpp"
#include "scribblediff/nn.hpp"
#include "scribblediff/schedule.hpp"

namespace scribblediff {

// Conditioning input: rendered scribble channels plus a binary class-presence
// vector (which classes appear in the scene).
struct Condition {
    Grid scribble;
    std::vector<float> class_set;
};

struct DenoiserConfig {
    int height = 32;
    int width = 32;
    int image_channels = 3;
    int cond_channels = 3;  // 3 for rgb conditions, class count for one-hot
    int classes = 4;
    int base_width = 16;  // level-0 channels; deeper levels use 2x
    int temb_dim = 32;
    int levels = 3;       // resolution levels (downsamples = levels-1)
    int max_timestep = 200;

    void validate() const;
    int level_width(int l) const { return l == 0 ? base_width : 2 * base_width; }
};

// Noise-prediction encoder/decoder with sinusoidal timestep embedding added
// per block, condition channels concatenated at the input, and the class-set
// vector projected into the timestep embedding. The scalar type is templated
// so gradient checks can run the identical code in double precision.
template <class T>
struct DenoiserNetT {
    struct BlockIdx {
        int c1w, c1b, ew, eb, c2w, c2b;
    };

    DenoiserConfig cfg;
    nn::ParamStore<T> params;

    int temb_w = -1, temb_b = -1, cls_w = -1, cls_b = -1, null_emb = -1;
    int conv_in_w = -1, conv_in_b = -1, conv_out_w = -1, conv_out_b = -1;
    std::vector<BlockIdx> enc;
    std::vector<int> down_w, down_b;
    BlockIdx mid{};
    std::vector<int> up_w, up_b;
    std::vector<BlockIdx> dec;

    // registered layout with zero parameters (checkpoint loading)
    static DenoiserNetT layout(const DenoiserConfig& cfg);
    // deterministic random initialization; the output convolution starts at
    // zero so an untrained model predicts zero noise
    static DenoiserNetT init(const DenoiserConfig& cfg, uint64_t seed);

    struct BlockTape {
        TGrid<T> x, pre1, a1, pre2, out;
    };
    struct Tape {
        TGrid<T> cat_in, pre_in, h_in;
        std::vector<T> emb0, mlp_pre, temb;
        std::vector<BlockTape> enc;
        std::vector<TGrid<T>> down_pre, down_out;
        BlockTape mid;
        std::vector<TGrid<T>> up_in, up_pre, up_out, skip_sum;
        std::vector<BlockTape> dec;
        bool used_null_scribble = false;
        std::vector<T> class_set;
    };

    // scribble == nullptr selects the learned null embedding;
    // class_set empty feeds a zero class vector.
    TGrid<T> forward(const TGrid<T>& x_t, int t, const TGrid<T>* scribble,
                     std::span<const T> class_set, Tape* tape) const;

    void backward(const Tape& tape, const TGrid<T>& gout, nn::ParamStore<T>& grads) const;

    std::span<const T> null_embedding() const { return params.at(null_emb); }
};

using Denoiser = DenoiserNetT<float>;

Denoiser init_denoiser(const DenoiserConfig& cfg, uint64_t seed);

// How the unconditional branch is formed: the null scribble embedding always
// replaces the scribble channels; the class-set vector is either kept or
// zeroed alongside it.
enum class CondPath { Full, NullScribble, NullAll };

Grid predict_noise(const Denoiser& d, const Grid& x_t, int t, const Condition& cond,
                   CondPath path = CondPath::Full);
// the fully unconditional call (null scribble, zero class vector)
Grid predict_noise(const Denoiser& d, const Grid& x_t, int t, std::nullptr_t);

// Per-item squared-error loss (mean over elements) and parameter gradients.
template <class T>
double denoiser_loss_and_grad(const DenoiserNetT<T>& net, const TGrid<T>& x_t, int t,
                              const TGrid<T>* scribble, std::span<const T> class_set,
                              const TGrid<T>& target_eps, nn::ParamStore<T>& grads);

struct TrainExample {
    const Grid* image;
    const Condition* cond;
};

enum class Optimizer { Sgd, Adam };

struct SgdState {
    std::vector<float> velocity;  // SGD momentum / Adam first moment
    std::vector<float> second;    // Adam second moment
    int64_t step = 0;
};

struct DenoiserTrainConfig {
    int epochs = 10;
    int batch_size = 16;
    double lr0 = 0.02;
    double lr_final = 0.002;
    double momentum = 0.9;
    double dropout_rate = 0.1;
    bool drop_class_set = false;  // drop the class vector together with the scribble
    Optimizer optimizer = Optimizer::Sgd;
};

struct TrainStepStats {
    int dropped = 0;
    int batch = 0;
};

// One optimizer step on a batch: per item draws t ~ U[1,T] and eps ~ N(0,I),
// applies condition dropout, and descends the mean squared noise-prediction
// error. Per-slot rng streams are derived from step_key, so dropout decisions
// do not depend on item content and batch items can be processed in parallel.
double denoiser_train_step(Denoiser& d, SgdState& opt, std::span<const TrainExample> batch,
                           const NoiseSchedule& s, double dropout_rate, bool drop_class_set,
                           double lr, double momentum, uint64_t step_key,
                           TrainStepStats* stats = nullptr,
                           Optimizer optimizer = Optimizer::Sgd);

struct DenoiserTrainResult {
    std::vector<double> epoch_loss;
};

DenoiserTrainResult train_denoiser(Denoiser& d, std::span<const TrainExample> data,
                                   const NoiseSchedule& s, const DenoiserTrainConfig& tc,
                                   uint64_t seed);

}  // namespace scribblediff

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scribblediff/augment.hpp"
#include "scribblediff/grid.hpp"
#include "scribblediff/nn.hpp"
#include "scribblediff/shapesworld.hpp"

namespace scribblediff {

struct SegmentorConfig {
    int height = 32;
    int width = 32;
    int in_channels = 3;
    int classes = 4;
    int width_channels = 48;

    void validate() const;
};

// Six-layer fully-convolutional per-pixel classifier with dilated mid layers.
template <class T>
struct SegmentorNetT {
    SegmentorConfig cfg;
    nn::ParamStore<T> params;
    std::vector<int> conv_w, conv_b;  // five 3x3 convs (dilations 1,1,2,4,2)
    int head_w = -1, head_b = -1;     // 1x1 projection to class logits

    static SegmentorNetT layout(const SegmentorConfig& cfg);
    static SegmentorNetT init(const SegmentorConfig& cfg, uint64_t seed);

    struct Tape {
        std::vector<TGrid<T>> pre;  // pre-activations per conv layer
        std::vector<TGrid<T>> act;  // inputs to each layer (act[0] = image)
    };

    TGrid<T> forward(const TGrid<T>& image, Tape* tape) const;
    void backward(const Tape& tape, const TGrid<T>& glogits, nn::ParamStore<T>& grads) const;
};

using Segmentor = SegmentorNetT<float>;

Segmentor init_segmentor(const SegmentorConfig& cfg, uint64_t seed);

Grid seg_predict(const Segmentor& seg, const Grid& image);

LabelGrid argmax_classes(const Grid& logits);

// Mean cross-entropy over labeled pixels only; unlabeled (-1) pixels are
// excluded exactly (perturbing them cannot change the value).
double partial_ce_loss(const Grid& logits, const ScribbleMap& sm);

// loss plus gradient w.r.t. logits (glogits overwritten)
template <class T>
double partial_ce_loss_grad(const TGrid<T>& logits, const LabelGrid& labels, TGrid<T>& glogits);

// Optional pairwise smoothness penalty on softmax probabilities of neighboring
// pixels, weighted by color similarity. A lightweight stand-in for CRF-style
// regularizers, not a reimplementation of one; off unless weight > 0.
template <class T>
double pairwise_smoothness_grad(const TGrid<T>& logits, const TGrid<T>& image, double weight,
                                TGrid<T>& glogits_accum);

struct SegTrainConfig {
    int epochs = 12;
    int batch_size = 16;
    double lr0 = 0.1;
    double lr_power = 0.9;  // polynomial decay exponent
    double momentum = 0.9;
    double pairwise_weight = 0.0;
};

struct SegTrainHistory {
    std::vector<double> epoch_loss;
    std::vector<double> val_miou;  // filled when a validation set is provided
};

// Per epoch: compose_epoch -> shuffle -> minibatch SGD over the partial
// cross-entropy. Deterministic given seed.
SegTrainHistory train_segmentor(Segmentor& seg, const Dataset& ds, const SyntheticBank* bank,
                                const AugmentationScheme& scheme, const SegTrainConfig& tc,
                                uint64_t seed, const Dataset* val = nullptr);

// mIoU of a segmentor against full ground-truth masks.
double evaluate_miou(const Segmentor& seg, const Dataset& ds);

}  // namespace scribblediff

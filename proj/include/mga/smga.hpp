#pragma once

#include "mga/motion.hpp"
#include "mga/param_store.hpp"
#include "mga/tensor.hpp"

#include <string>
#include <vector>

namespace mga {

/// Per-frame self-association scores, all [L x HW x HW]. The pre-softmax
/// components are kept for inspection and tests.
struct SelfScore {
    Tensor backward_logits;
    Tensor forward_logits;
    Tensor scores; // softmax_rows(backward_logits + forward_logits)
};

struct SmgaParams {
    MultiScaleParams motion;
    Tensor phi3;   // [D x 3] temporal depthwise filter for the values
    Tensor lambda; // [1], zero at init
    Tensor w1;     // [L x L] temporal mixer
    Tensor w2;     // [L x L], zero at init
    Tensor w3;     // [D x D] channel mixer
    Tensor w4;     // [D x D], zero at init
    std::size_t frames = 0;
    std::size_t channels = 0;

    static std::vector<ParamLayout> layout(const std::string& prefix, std::size_t frames, std::size_t channels,
                                           std::size_t ratio);
    static SmgaParams create(ParameterStore& store, const std::string& prefix, std::size_t frames,
                             std::size_t channels, std::size_t ratio);
};

SelfScore self_association(const MotionTensor& backward, const MotionTensor& forward, std::size_t compressed_channels);

/// F + lambda * S_i Phi3(F)_i for every frame i.
Tensor enhance(const Tensor& f, const SelfScore& s, const SmgaParams& p);

/// Temporal MLP along L per (d, h, w), then channel MLP along D per (l, h, w),
/// each with a residual connection and ReLU in between.
Tensor temporal_channel_mixer(const Tensor& f, const SmgaParams& p);

/// Full S-MGA on one [L x D x H x W] video. If `trace` is set, the scores
/// used for the enhancement are stored there.
Tensor smga_forward(const Tensor& f, const SmgaParams& p, SelfScore* trace = nullptr);

} // namespace mga

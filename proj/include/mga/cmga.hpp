#pragma once

#include "mga/motion.hpp"
#include "mga/param_store.hpp"
#include "mga/tensor.hpp"

#include <string>
#include <vector>

namespace mga {

/// Feature maps of one episode, each [L x D x H x W].
struct EpisodeFeatures {
    std::vector<Tensor> support; // N*K videos in episode order
    std::vector<Tensor> query;
};

/// Motion in patch-row layout [L x P x D/r]; P = HW for one video or
/// N*K*HW for a support set (blocks ordered by support index).
struct PatchMotion {
    Tensor backward;
    Tensor forward;
};

/// Cross-association scores of one query. Frame-wise tensors are
/// [L x HW x NKHW]; frame-all tensors are [L*HW x L*NKHW].
struct CrossScore {
    Tensor backward_logits;
    Tensor forward_logits;
    Tensor scores;
};

enum class CrossVariant { FrameWise, FrameAll };

struct CmgaParams {
    MultiScaleParams motion;
    Tensor phi3;    // [D x 3]
    Tensor lambda1; // [1], zero at init
    Tensor lambda2; // [1], zero at init
    std::size_t channels = 0;

    static std::vector<ParamLayout> layout(const std::string& prefix, std::size_t channels, std::size_t ratio);
    static CmgaParams create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                             std::size_t ratio);
};

/// Motion of a single video in patch-row layout.
PatchMotion video_motion(const Tensor& f, const CmgaParams& p);

/// Motion of every support video, concatenated along the patch axis.
PatchMotion support_motion(const std::vector<Tensor>& support, const CmgaParams& p);

CrossScore cross_association_framewise(const PatchMotion& query, const PatchMotion& support,
                                       std::size_t compressed_channels);

/// Scores over every (query frame, support frame) pair; the frame-diagonal
/// blocks of the logits equal the frame-wise logits.
CrossScore cross_association_frameall(const PatchMotion& query, const PatchMotion& support,
                                      std::size_t compressed_channels);

/// Phi3-filtered support features in patch-row layout [L x NKHW x D].
Tensor support_values(const std::vector<Tensor>& support, const CmgaParams& p);

/// F_q + lambda1 * C_i Phi3(F_S)_i + lambda2 * Phi3(F_q)_i
Tensor enhance_query(const Tensor& f_q, const CrossScore& c, const Tensor& values, const CmgaParams& p,
                     CrossVariant variant = CrossVariant::FrameWise);

/// F_s + lambda2 * Phi3(F_s)
Tensor enhance_support(const Tensor& f_s, const CmgaParams& p);

/// Enhances every query against the whole support set and every support
/// video with its own temporal term. `trace` receives one score per query.
EpisodeFeatures cmga_forward(const EpisodeFeatures& episode, const CmgaParams& p,
                             CrossVariant variant = CrossVariant::FrameWise, std::vector<CrossScore>* trace = nullptr);

} // namespace mga

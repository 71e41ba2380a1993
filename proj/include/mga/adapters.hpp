#pragma once

#include "mga/cmga.hpp"
#include "mga/param_store.hpp"
#include "mga/smga.hpp"
#include "mga/tensor.hpp"

#include <string>
#include <vector>

namespace mga {

struct BackboneConfig {
    std::size_t in_channels = 1;
    std::size_t grid = 16;  // input frames are grid x grid pixels
    std::size_t patch = 4;  // non-overlapping patch size
    std::size_t width = 16; // D
    std::size_t hidden = 32;
    std::size_t blocks = 2;
    bool position_embedding = false; // off keeps the stem translation-equivariant
    // Input standardisation (x - mean) / std, defaults fit the synthetic corpus.
    double pixel_mean = 0.15;
    double pixel_std = 0.22;

    std::size_t tokens_per_side() const { return grid / patch; }
};

/// Patch embedding (+ optional learned position embedding) followed by residual
/// blocks x + fc2(relu(fc1(layer_norm(x)))) over channels.
struct BackboneStub {
    struct Block {
        Tensor fc1_w; // [hidden x D]
        Tensor fc1_b;
        Tensor fc2_w; // [D x hidden]
        Tensor fc2_b;
    };

    BackboneConfig config;
    Tensor embed_w; // [D x C*p*p]
    Tensor embed_b; // [D]
    Tensor pos;     // [D x H x W], undefined when disabled
    std::vector<Block> blocks;

    static std::vector<ParamLayout> layout(const std::string& prefix, const BackboneConfig& cfg);
    static BackboneStub create(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg,
                               bool frozen);

    /// [L x C x G x G] pixels -> [L x D x G/p x G/p]
    Tensor embed(const Tensor& clip) const;
    Tensor block(std::size_t index, const Tensor& x) const;
    Tensor forward(const Tensor& clip) const;
};

enum class AdapterKind { St, Smga, Cmga };

/// Residual bottleneck x + up(inner(down(x))) with the projections applied
/// per (frame, position) over channels.
struct AdapterParams {
    AdapterKind kind = AdapterKind::St;
    Tensor w_down; // [D x D']
    Tensor w_up;   // [D' x D], zero at init
    Tensor st_kernel; // [D' x 3], ST-Adapter only
    SmgaParams smga;  // Smga-Adapter only
    CmgaParams cmga;  // Cmga-Adapter only
    std::size_t width = 0;
    std::size_t inner_width = 0;

    static std::vector<ParamLayout> layout(const std::string& prefix, AdapterKind kind, std::size_t frames,
                                           std::size_t width, std::size_t adapter_ratio, std::size_t inner_ratio);
    static AdapterParams create(ParameterStore& store, const std::string& prefix, AdapterKind kind,
                                std::size_t frames, std::size_t width, std::size_t adapter_ratio,
                                std::size_t inner_ratio);
};

Tensor adapter_down(const Tensor& x, const AdapterParams& p);
Tensor adapter_up(const Tensor& x, const AdapterParams& p);

/// x + up(DWConv3D(down(x)))
Tensor st_adapter(const Tensor& x, const AdapterParams& p);
/// x + up(S-MGA(down(x)))
Tensor smga_adapter(const Tensor& x, const AdapterParams& p, SelfScore* trace = nullptr);
/// Residual C-MGA over a whole episode at width D'.
EpisodeFeatures cmga_adapter(const EpisodeFeatures& episode, const AdapterParams& p,
                             CrossVariant variant = CrossVariant::FrameWise, std::vector<CrossScore>* trace = nullptr);

} // namespace mga

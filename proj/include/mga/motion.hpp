#pragma once

#include "mga/param_store.hpp"
#include "mga/tensor.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace mga {

enum class Direction { Backward, Forward };

/// Motion between adjacent frames, [L x D/r x H x W]. Backward entries hold
/// M(F_i, F_i+1), forward entries M(F_i+1, F_i); the last pair is repeated so
/// that every frame index has an entry.
struct MotionTensor {
    Direction direction = Direction::Backward;
    Tensor data;
    std::array<std::size_t, 4> source_shape{}; // (L, D, H, W) of the uncompressed input
    std::size_t ratio = 1;
};

struct ParamLayout {
    std::string name;
    Shape shape;
};

/// Weights of the multi-scale motion front end shared by all frames of all
/// videos that pass through one module instance.
struct MultiScaleParams {
    Tensor compress_w; // [Dc x D]
    Tensor compress_b; // [Dc]
    Tensor smooth;     // [Dc x 3 x 3], the alignment smoother
    Tensor branch_b_w; // [Dc x Dc x 3 x 3]
    Tensor branch_b_b; // [Dc]
    Tensor branch_c_w; // [Dc x Dc x 3 x 3], between pool and upsample
    Tensor branch_c_b; // [Dc]
    Tensor aggregate;  // [Dc], channel-wise gain over the branch mean
    std::size_t channels = 0;
    std::size_t ratio = 1;

    std::size_t compressed() const { return channels / ratio; }

    static std::vector<ParamLayout> layout(const std::string& prefix, std::size_t channels, std::size_t ratio);
    static MultiScaleParams create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                                   std::size_t ratio);
};

/// Throws ConfigError unless ratio >= 1 and channels % ratio == 0.
void check_ratio(std::size_t channels, std::size_t ratio);

/// Per-frame 1x1 compression D -> D/r of an [L x D x H x W] map.
Tensor compress_channels(const Tensor& f, const MultiScaleParams& p);

/// f_a - smooth(f_b) on frames (or stacks of frames) of width D/r.
Tensor aligned_difference(const Tensor& f_a, const Tensor& f_b, const MultiScaleParams& p);

/// aggregate * ((diff + conv_b(diff) + up(conv_c(pool(diff)))) / 3)
Tensor multi_scale_motion(const Tensor& diff, const MultiScaleParams& p);

/// Backward and forward motion of an already-compressed [L x D/r x H x W] map.
std::pair<MotionTensor, MotionTensor> bidirectional_motion(const Tensor& compressed, const MultiScaleParams& p);

/// compress_channels followed by bidirectional_motion.
std::pair<MotionTensor, MotionTensor> extract_motion(const Tensor& f, const MultiScaleParams& p);

} // namespace mga

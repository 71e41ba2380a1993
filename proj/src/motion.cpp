#include "mga/motion.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"

namespace mga {

void check_ratio(std::size_t channels, std::size_t ratio) {
    if (ratio == 0 || channels == 0 || channels % ratio != 0) {
        throw ConfigError("channel count " + std::to_string(channels) + " is not divisible by compression ratio " +
                          std::to_string(ratio));
    }
}

std::vector<ParamLayout> MultiScaleParams::layout(const std::string& prefix, std::size_t channels,
                                                  std::size_t ratio) {
    check_ratio(channels, ratio);
    const std::size_t dc = channels / ratio;
    return {
        {prefix + ".compress_w", {dc, channels}},
        {prefix + ".compress_b", {dc}},
        {prefix + ".smooth", {dc, 3, 3}},
        {prefix + ".branch_b_w", {dc, dc, 3, 3}},
        {prefix + ".branch_b_b", {dc}},
        {prefix + ".branch_c_w", {dc, dc, 3, 3}},
        {prefix + ".branch_c_b", {dc}},
        {prefix + ".aggregate", {dc}},
    };
}

MultiScaleParams MultiScaleParams::create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                                          std::size_t ratio) {
    check_ratio(channels, ratio);
    const std::size_t dc = channels / ratio;
    MultiScaleParams p;
    p.channels = channels;
    p.ratio = ratio;
    p.compress_w = store.add(prefix + ".compress_w", {dc, channels}, init::kaiming_uniform(channels));
    p.compress_b = store.add(prefix + ".compress_b", {dc}, init::zeros());
    p.smooth = store.add(prefix + ".smooth", {dc, 3, 3}, init::center_tap3x3());
    p.branch_b_w = store.add(prefix + ".branch_b_w", {dc, dc, 3, 3}, init::kaiming_uniform(dc * 9));
    p.branch_b_b = store.add(prefix + ".branch_b_b", {dc}, init::zeros());
    p.branch_c_w = store.add(prefix + ".branch_c_w", {dc, dc, 3, 3}, init::kaiming_uniform(dc * 9));
    p.branch_c_b = store.add(prefix + ".branch_c_b", {dc}, init::zeros());
    p.aggregate = store.add(prefix + ".aggregate", {dc}, init::constant(1.0));
    return p;
}

Tensor compress_channels(const Tensor& f, const MultiScaleParams& p) {
    if (f.rank() != 4) {
        throw DimensionError("compress_channels: expected [L x D x H x W], got " + shape_str(f.shape()));
    }
    check_ratio(f.dim(1), p.ratio);
    if (f.dim(1) != p.channels) {
        throw DimensionError("compress_channels: module built for " + std::to_string(p.channels) +
                             " channels, input " + shape_str(f.shape()));
    }
    return ops::conv1x1(f, p.compress_w, p.compress_b);
}

Tensor aligned_difference(const Tensor& f_a, const Tensor& f_b, const MultiScaleParams& p) {
    return ops::sub(f_a, ops::depthwise_conv2d(f_b, p.smooth));
}

Tensor multi_scale_motion(const Tensor& diff, const MultiScaleParams& p) {
    if (diff.rank() < 3) {
        throw DimensionError("multi_scale_motion: expected [.. x C x H x W], got " + shape_str(diff.shape()));
    }
    const std::size_t h = diff.dim(diff.rank() - 2);
    const std::size_t w = diff.dim(diff.rank() - 1);
    if (h < 2 || w < 2) {
        throw ConfigError("multi_scale_motion: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                          " is too small for 2x2 pooling");
    }
    Tensor branch_a = diff;
    Tensor branch_b = ops::conv2d_3x3(diff, p.branch_b_w, p.branch_b_b);
    Tensor branch_c = ops::bilinear_upsample2x(ops::conv2d_3x3(ops::avgpool2x2(diff), p.branch_c_w, p.branch_c_b), h, w);
    Tensor mean = ops::scale(ops::add(ops::add(branch_a, branch_b), branch_c), 1.0 / 3.0);
    return ops::channel_scale(mean, p.aggregate);
}

std::pair<MotionTensor, MotionTensor> bidirectional_motion(const Tensor& compressed, const MultiScaleParams& p) {
    if (compressed.rank() != 4) {
        throw DimensionError("bidirectional_motion: expected [L x Dc x H x W], got " +
                             shape_str(compressed.shape()));
    }
    const std::size_t frames = compressed.dim(0);
    if (frames < 2) {
        throw ConfigError("bidirectional_motion: need at least 2 frames, got " + std::to_string(frames));
    }
    if (compressed.dim(1) != p.compressed()) {
        throw DimensionError("bidirectional_motion: expected " + std::to_string(p.compressed()) +
                             " compressed channels, got " + shape_str(compressed.shape()));
    }
    Tensor earlier = ops::slice0(compressed, 0, frames - 1);
    Tensor later = ops::slice0(compressed, 1, frames);
    Tensor back = multi_scale_motion(aligned_difference(earlier, later, p), p);
    Tensor fwd = multi_scale_motion(aligned_difference(later, earlier, p), p);
    auto extend = [frames](const Tensor& pairs) {
        return ops::concat({pairs, ops::slice0(pairs, frames - 2, frames - 1)}, 0);
    };
    const std::array<std::size_t, 4> src{frames, p.channels, compressed.dim(2), compressed.dim(3)};
    return {MotionTensor{Direction::Backward, extend(back), src, p.ratio},
            MotionTensor{Direction::Forward, extend(fwd), src, p.ratio}};
}

std::pair<MotionTensor, MotionTensor> extract_motion(const Tensor& f, const MultiScaleParams& p) {
    return bidirectional_motion(compress_channels(f, p), p);
}

} // namespace mga

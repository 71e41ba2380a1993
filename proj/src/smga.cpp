#include "mga/smga.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"

#include <cmath>

namespace mga {

std::vector<ParamLayout> SmgaParams::layout(const std::string& prefix, std::size_t frames, std::size_t channels,
                                            std::size_t ratio) {
    std::vector<ParamLayout> out = MultiScaleParams::layout(prefix + ".motion", channels, ratio);
    out.push_back({prefix + ".phi3", {channels, 3}});
    out.push_back({prefix + ".lambda", {1}});
    out.push_back({prefix + ".w1", {frames, frames}});
    out.push_back({prefix + ".w2", {frames, frames}});
    out.push_back({prefix + ".w3", {channels, channels}});
    out.push_back({prefix + ".w4", {channels, channels}});
    return out;
}

SmgaParams SmgaParams::create(ParameterStore& store, const std::string& prefix, std::size_t frames,
                              std::size_t channels, std::size_t ratio) {
    if (frames < 2) {
        throw ConfigError("S-MGA needs at least 2 frames, got " + std::to_string(frames));
    }
    SmgaParams p;
    p.frames = frames;
    p.channels = channels;
    p.motion = MultiScaleParams::create(store, prefix + ".motion", channels, ratio);
    p.phi3 = store.add(prefix + ".phi3", {channels, 3}, init::temporal_identity());
    p.lambda = store.add(prefix + ".lambda", {1}, init::zeros());
    p.w1 = store.add(prefix + ".w1", {frames, frames}, init::kaiming_uniform(frames));
    p.w2 = store.add(prefix + ".w2", {frames, frames}, init::zeros());
    p.w3 = store.add(prefix + ".w3", {channels, channels}, init::kaiming_uniform(channels));
    p.w4 = store.add(prefix + ".w4", {channels, channels}, init::zeros());
    return p;
}

SelfScore self_association(const MotionTensor& backward, const MotionTensor& forward,
                           std::size_t compressed_channels) {
    if (backward.direction != Direction::Backward || forward.direction != Direction::Forward) {
        throw UsageError("self_association: expected (backward, forward) motion tensors");
    }
    if (backward.data.shape() != forward.data.shape()) {
        throw DimensionError("self_association: motion shapes differ " + shape_str(backward.data.shape()) + " vs " +
                             shape_str(forward.data.shape()));
    }
    if (backward.data.dim(1) != compressed_channels) {
        throw UsageError("self_association: scale channel count " + std::to_string(compressed_channels) +
                         " does not match motion " + shape_str(backward.data.shape()));
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(compressed_channels));
    Tensor mb = ops::to_patch_rows(backward.data);
    Tensor mf = ops::to_patch_rows(forward.data);
    SelfScore s;
    s.backward_logits = ops::scale(ops::matmul_nt(mb, mb), inv_sqrt);
    s.forward_logits = ops::scale(ops::matmul_nt(mf, mf), inv_sqrt);
    s.scores = ops::softmax_rows(ops::add(s.backward_logits, s.forward_logits));
    return s;
}

Tensor enhance(const Tensor& f, const SelfScore& s, const SmgaParams& p) {
    const std::size_t h = f.dim(2);
    const std::size_t w = f.dim(3);
    if (s.scores.shape() != Shape{f.dim(0), h * w, h * w}) {
        throw DimensionError("enhance: scores " + shape_str(s.scores.shape()) + " do not match features " +
                             shape_str(f.shape()));
    }
    Tensor values = ops::to_patch_rows(ops::depthwise_conv3d_t311(f, p.phi3));
    Tensor attended = ops::from_patch_rows(ops::matmul(s.scores, values), h, w);
    return ops::add(f, ops::mul_scalar(attended, p.lambda));
}

Tensor temporal_channel_mixer(const Tensor& f, const SmgaParams& p) {
    if (f.rank() != 4) {
        throw DimensionError("temporal_channel_mixer: expected [L x D x H x W], got " + shape_str(f.shape()));
    }
    if (f.dim(0) != p.w1.dim(0) || f.dim(1) != p.w3.dim(0)) {
        throw ConfigError("temporal_channel_mixer: mixer built for L=" + std::to_string(p.w1.dim(0)) +
                          ", D=" + std::to_string(p.w3.dim(0)) + " but input is " + shape_str(f.shape()));
    }
    Tensor g = ops::add(f, ops::contract(p.w2, ops::relu(ops::contract(p.w1, f, 0)), 0));
    return ops::add(g, ops::contract(p.w4, ops::relu(ops::contract(p.w3, g, 1)), 1));
}

Tensor smga_forward(const Tensor& f, const SmgaParams& p, SelfScore* trace) {
    if (f.rank() != 4) {
        throw DimensionError("smga_forward: expected [L x D x H x W], got " + shape_str(f.shape()));
    }
    if (f.dim(0) < 2) {
        throw ConfigError("smga_forward: need at least 2 frames");
    }
    auto [mb, mf] = extract_motion(f, p.motion);
    SelfScore s = self_association(mb, mf, p.motion.compressed());
    Tensor out = temporal_channel_mixer(enhance(f, s, p), p);
    if (trace) {
        *trace = std::move(s);
    }
    return out;
}

} // namespace mga

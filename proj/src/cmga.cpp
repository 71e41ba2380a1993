#include "mga/cmga.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"

#include <cmath>

namespace mga {

std::vector<ParamLayout> CmgaParams::layout(const std::string& prefix, std::size_t channels, std::size_t ratio) {
    std::vector<ParamLayout> out = MultiScaleParams::layout(prefix + ".motion", channels, ratio);
    out.push_back({prefix + ".phi3", {channels, 3}});
    out.push_back({prefix + ".lambda1", {1}});
    out.push_back({prefix + ".lambda2", {1}});
    return out;
}

CmgaParams CmgaParams::create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                              std::size_t ratio) {
    CmgaParams p;
    p.channels = channels;
    p.motion = MultiScaleParams::create(store, prefix + ".motion", channels, ratio);
    p.phi3 = store.add(prefix + ".phi3", {channels, 3}, init::temporal_identity());
    p.lambda1 = store.add(prefix + ".lambda1", {1}, init::zeros());
    p.lambda2 = store.add(prefix + ".lambda2", {1}, init::zeros());
    return p;
}

PatchMotion video_motion(const Tensor& f, const CmgaParams& p) {
    auto [mb, mf] = extract_motion(f, p.motion);
    return {ops::to_patch_rows(mb.data), ops::to_patch_rows(mf.data)};
}

namespace {

void check_uniform_shapes(const char* what, const std::vector<Tensor>& videos) {
    if (videos.empty()) {
        throw ConfigError(std::string(what) + ": empty video list");
    }
    for (const Tensor& v : videos) {
        if (v.rank() != 4 || v.shape() != videos[0].shape()) {
            throw ConfigError(std::string(what) + ": videos must share one [L x D x H x W] shape, got " +
                              shape_str(videos[0].shape()) + " and " + shape_str(v.shape()));
        }
    }
}

void check_pair(const PatchMotion& query, const PatchMotion& support, std::size_t dc) {
    if (query.backward.rank() != 3 || support.backward.rank() != 3) {
        throw DimensionError("cross association: motion must be [L x P x Dc]");
    }
    if (query.backward.dim(0) != support.backward.dim(0)) {
        throw UsageError("cross association: query has " + std::to_string(query.backward.dim(0)) +
                         " frames but support has " + std::to_string(support.backward.dim(0)));
    }
    if (query.backward.dim(2) != dc || support.backward.dim(2) != dc) {
        throw UsageError("cross association: channel count " + std::to_string(dc) + " does not match motion " +
                         shape_str(query.backward.shape()) + " / " + shape_str(support.backward.shape()));
    }
}

} // namespace

PatchMotion support_motion(const std::vector<Tensor>& support, const CmgaParams& p) {
    check_uniform_shapes("support_motion", support);
    std::vector<Tensor> back;
    std::vector<Tensor> fwd;
    for (const Tensor& v : support) {
        PatchMotion m = video_motion(v, p);
        back.push_back(m.backward);
        fwd.push_back(m.forward);
    }
    return {ops::concat(back, 1), ops::concat(fwd, 1)};
}

CrossScore cross_association_framewise(const PatchMotion& query, const PatchMotion& support,
                                       std::size_t compressed_channels) {
    check_pair(query, support, compressed_channels);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(compressed_channels));
    CrossScore c;
    c.backward_logits = ops::scale(ops::matmul_nt(query.backward, support.backward), inv_sqrt);
    c.forward_logits = ops::scale(ops::matmul_nt(query.forward, support.forward), inv_sqrt);
    c.scores = ops::softmax_rows(ops::add(c.backward_logits, c.forward_logits));
    return c;
}

CrossScore cross_association_frameall(const PatchMotion& query, const PatchMotion& support,
                                      std::size_t compressed_channels) {
    check_pair(query, support, compressed_channels);
    auto flat = [](const Tensor& t) { return ops::reshape(t, {t.dim(0) * t.dim(1), t.dim(2)}); };
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(compressed_channels));
    CrossScore c;
    c.backward_logits = ops::scale(ops::matmul_nt(flat(query.backward), flat(support.backward)), inv_sqrt);
    c.forward_logits = ops::scale(ops::matmul_nt(flat(query.forward), flat(support.forward)), inv_sqrt);
    c.scores = ops::softmax_rows(ops::add(c.backward_logits, c.forward_logits));
    return c;
}

Tensor support_values(const std::vector<Tensor>& support, const CmgaParams& p) {
    check_uniform_shapes("support_values", support);
    std::vector<Tensor> rows;
    rows.reserve(support.size());
    for (const Tensor& v : support) {
        rows.push_back(ops::to_patch_rows(ops::depthwise_conv3d_t311(v, p.phi3)));
    }
    return ops::concat(rows, 1);
}

Tensor enhance_query(const Tensor& f_q, const CrossScore& c, const Tensor& values, const CmgaParams& p,
                     CrossVariant variant) {
    const std::size_t frames = f_q.dim(0);
    const std::size_t h = f_q.dim(2);
    const std::size_t w = f_q.dim(3);
    if (values.rank() != 3 || values.dim(0) != frames || values.dim(2) != f_q.dim(1)) {
        throw DimensionError("enhance_query: support values " + shape_str(values.shape()) +
                             " do not match query " + shape_str(f_q.shape()));
    }
    Tensor attended_rows;
    if (variant == CrossVariant::FrameWise) {
        attended_rows = ops::matmul(c.scores, values);
    } else {
        Tensor flat_values = ops::reshape(values, {frames * values.dim(1), values.dim(2)});
        attended_rows = ops::reshape(ops::matmul(c.scores, flat_values), {frames, h * w, f_q.dim(1)});
    }
    Tensor attended = ops::from_patch_rows(attended_rows, h, w);
    Tensor self_term = ops::depthwise_conv3d_t311(f_q, p.phi3);
    return ops::add(ops::add(f_q, ops::mul_scalar(attended, p.lambda1)), ops::mul_scalar(self_term, p.lambda2));
}

Tensor enhance_support(const Tensor& f_s, const CmgaParams& p) {
    return ops::add(f_s, ops::mul_scalar(ops::depthwise_conv3d_t311(f_s, p.phi3), p.lambda2));
}

EpisodeFeatures cmga_forward(const EpisodeFeatures& episode, const CmgaParams& p, CrossVariant variant,
                             std::vector<CrossScore>* trace) {
    check_uniform_shapes("cmga_forward", episode.support);
    PatchMotion support = support_motion(episode.support, p);
    Tensor values = support_values(episode.support, p);
    EpisodeFeatures out;
    if (trace) {
        trace->clear();
    }
    for (const Tensor& q : episode.query) {
        if (q.shape() != episode.support[0].shape()) {
            throw ConfigError("cmga_forward: query shape " + shape_str(q.shape()) + " differs from support " +
                              shape_str(episode.support[0].shape()));
        }
        PatchMotion qm = video_motion(q, p);
        CrossScore c = variant == CrossVariant::FrameWise
                           ? cross_association_framewise(qm, support, p.motion.compressed())
                           : cross_association_frameall(qm, support, p.motion.compressed());
        out.query.push_back(enhance_query(q, c, values, p, variant));
        if (trace) {
            trace->push_back(std::move(c));
        }
    }
    for (const Tensor& s : episode.support) {
        out.support.push_back(enhance_support(s, p));
    }
    return out;
}

} // namespace mga

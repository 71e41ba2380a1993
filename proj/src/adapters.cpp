#include "mga/adapters.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"

namespace mga {

std::vector<ParamLayout> BackboneStub::layout(const std::string& prefix, const BackboneConfig& cfg) {
    const std::size_t patch_len = cfg.in_channels * cfg.patch * cfg.patch;
    const std::size_t side = cfg.tokens_per_side();
    std::vector<ParamLayout> out{
        {prefix + ".embed_w", {cfg.width, patch_len}},
        {prefix + ".embed_b", {cfg.width}},
    };
    if (cfg.position_embedding) {
        out.push_back({prefix + ".pos", {cfg.width, side, side}});
    }
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        out.push_back({bp + ".fc1_w", {cfg.hidden, cfg.width}});
        out.push_back({bp + ".fc1_b", {cfg.hidden}});
        out.push_back({bp + ".fc2_w", {cfg.width, cfg.hidden}});
        out.push_back({bp + ".fc2_b", {cfg.width}});
    }
    return out;
}

BackboneStub BackboneStub::create(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg,
                                  bool frozen) {
    if (cfg.patch == 0 || cfg.grid % cfg.patch != 0) {
        throw ConfigError("backbone: patch " + std::to_string(cfg.patch) + " does not tile grid " +
                          std::to_string(cfg.grid));
    }
    if (!(cfg.pixel_std > 0.0)) {
        throw ConfigError("backbone: pixel_std must be positive");
    }
    if (cfg.width == 0 || cfg.hidden == 0 || cfg.in_channels == 0) {
        throw ConfigError("backbone: widths must be positive");
    }
    const std::size_t patch_len = cfg.in_channels * cfg.patch * cfg.patch;
    const std::size_t side = cfg.tokens_per_side();
    BackboneStub s;
    s.config = cfg;
    s.embed_w = store.add(prefix + ".embed_w", {cfg.width, patch_len}, init::kaiming_uniform(patch_len), frozen);
    s.embed_b = store.add(prefix + ".embed_b", {cfg.width}, init::zeros(), frozen);
    if (cfg.position_embedding) {
        s.pos = store.add(prefix + ".pos", {cfg.width, side, side}, init::kaiming_uniform(cfg.width), frozen);
    }
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        Block blk;
        blk.fc1_w = store.add(bp + ".fc1_w", {cfg.hidden, cfg.width}, init::kaiming_uniform(cfg.width), frozen);
        blk.fc1_b = store.add(bp + ".fc1_b", {cfg.hidden}, init::zeros(), frozen);
        blk.fc2_w = store.add(bp + ".fc2_w", {cfg.width, cfg.hidden}, init::kaiming_uniform(cfg.hidden), frozen);
        blk.fc2_b = store.add(bp + ".fc2_b", {cfg.width}, init::zeros(), frozen);
        s.blocks.push_back(std::move(blk));
    }
    return s;
}

Tensor BackboneStub::embed(const Tensor& clip) const {
    if (clip.rank() != 4 || clip.dim(1) != config.in_channels || clip.dim(2) != config.grid ||
        clip.dim(3) != config.grid) {
        throw DimensionError("backbone: expected clip [L x " + std::to_string(config.in_channels) + " x " +
                             std::to_string(config.grid) + " x " + std::to_string(config.grid) + "], got " +
                             shape_str(clip.shape()));
    }
    Tensor pixels = clip;
    if (config.pixel_mean != 0.0 || config.pixel_std != 1.0) {
        pixels = ops::scale(ops::add_broadcast(clip, Tensor::full({config.grid}, -config.pixel_mean)), 1.0 / config.pixel_std);
    }
    Tensor tokens = ops::conv1x1(ops::patchify(pixels, config.patch), embed_w, embed_b);
    return pos.defined() ? ops::add_broadcast(tokens, pos) : tokens;
}

Tensor BackboneStub::block(std::size_t index, const Tensor& x) const {
    const Block& b = blocks.at(index);
    Tensor hdn = ops::relu(ops::conv1x1(ops::layer_norm(x, 1), b.fc1_w, b.fc1_b));
    return ops::add(x, ops::conv1x1(hdn, b.fc2_w, b.fc2_b));
}

Tensor BackboneStub::forward(const Tensor& clip) const {
    Tensor x = embed(clip);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        x = block(i, x);
    }
    return x;
}

std::vector<ParamLayout> AdapterParams::layout(const std::string& prefix, AdapterKind kind, std::size_t frames,
                                               std::size_t width, std::size_t adapter_ratio,
                                               std::size_t inner_ratio) {
    check_ratio(width, adapter_ratio);
    const std::size_t inner = width / adapter_ratio;
    std::vector<ParamLayout> out{{prefix + ".w_down", {width, inner}}, {prefix + ".w_up", {inner, width}}};
    std::vector<ParamLayout> rest;
    switch (kind) {
    case AdapterKind::St:
        rest = {{prefix + ".st_kernel", {inner, 3}}};
        break;
    case AdapterKind::Smga:
        rest = SmgaParams::layout(prefix + ".smga", frames, inner, inner_ratio);
        break;
    case AdapterKind::Cmga:
        rest = CmgaParams::layout(prefix + ".cmga", inner, inner_ratio);
        break;
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

AdapterParams AdapterParams::create(ParameterStore& store, const std::string& prefix, AdapterKind kind,
                                    std::size_t frames, std::size_t width, std::size_t adapter_ratio,
                                    std::size_t inner_ratio) {
    check_ratio(width, adapter_ratio);
    AdapterParams p;
    p.kind = kind;
    p.width = width;
    p.inner_width = width / adapter_ratio;
    p.w_down = store.add(prefix + ".w_down", {width, p.inner_width}, init::kaiming_uniform(width));
    p.w_up = store.add(prefix + ".w_up", {p.inner_width, width}, init::zeros());
    switch (kind) {
    case AdapterKind::St:
        p.st_kernel = store.add(prefix + ".st_kernel", {p.inner_width, 3}, init::temporal_identity());
        break;
    case AdapterKind::Smga:
        p.smga = SmgaParams::create(store, prefix + ".smga", frames, p.inner_width, inner_ratio);
        break;
    case AdapterKind::Cmga:
        p.cmga = CmgaParams::create(store, prefix + ".cmga", p.inner_width, inner_ratio);
        break;
    }
    return p;
}

Tensor adapter_down(const Tensor& x, const AdapterParams& p) { return ops::contract(p.w_down, x, 1, true); }

Tensor adapter_up(const Tensor& x, const AdapterParams& p) { return ops::contract(p.w_up, x, 1, true); }

Tensor st_adapter(const Tensor& x, const AdapterParams& p) {
    if (p.kind != AdapterKind::St) {
        throw UsageError("st_adapter: parameters belong to a different adapter kind");
    }
    return ops::add(x, adapter_up(ops::depthwise_conv3d_t311(adapter_down(x, p), p.st_kernel), p));
}

Tensor smga_adapter(const Tensor& x, const AdapterParams& p, SelfScore* trace) {
    if (p.kind != AdapterKind::Smga) {
        throw UsageError("smga_adapter: parameters belong to a different adapter kind");
    }
    return ops::add(x, adapter_up(smga_forward(adapter_down(x, p), p.smga, trace), p));
}

EpisodeFeatures cmga_adapter(const EpisodeFeatures& episode, const AdapterParams& p, CrossVariant variant,
                             std::vector<CrossScore>* trace) {
    if (p.kind != AdapterKind::Cmga) {
        throw UsageError("cmga_adapter: parameters belong to a different adapter kind");
    }
    EpisodeFeatures down;
    for (const Tensor& s : episode.support) {
        down.support.push_back(adapter_down(s, p));
    }
    for (const Tensor& q : episode.query) {
        down.query.push_back(adapter_down(q, p));
    }
    EpisodeFeatures inner = cmga_forward(down, p.cmga, variant, trace);
    EpisodeFeatures out;
    for (std::size_t i = 0; i < episode.support.size(); ++i) {
        out.support.push_back(ops::add(episode.support[i], adapter_up(inner.support[i], p)));
    }
    for (std::size_t i = 0; i < episode.query.size(); ++i) {
        out.query.push_back(ops::add(episode.query[i], adapter_up(inner.query[i], p)));
    }
    return out;
}

} // namespace mga

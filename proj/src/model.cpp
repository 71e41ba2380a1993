#include "mga/model.hpp"

#include "mga/error.hpp"

namespace mga {

FewShotModel::FewShotModel(const ModelConfig& config) : config_(config), store_(config.seed) {
    const bool adapter = config.mode == PipelineMode::Adapter;
    if (adapter && config.backbone.blocks < 2) {
        throw ConfigError("adapter model needs at least 2 backbone blocks, got " +
                          std::to_string(config.backbone.blocks));
    }
    if (config.frames < 2) {
        throw ConfigError("model needs at least 2 frames, got " + std::to_string(config.frames));
    }
    backbone_ = BackboneStub::create(store_, "backbone", config.backbone, adapter);
    const std::size_t d = config.backbone.width;
    if (!adapter) {
        if (config.use_smga) {
            smga_ = SmgaParams::create(store_, "smga", config.frames, d, config.r1);
        }
        if (config.use_cmga) {
            cmga_ = CmgaParams::create(store_, "cmga", d, config.r2);
        }
        return;
    }
    const std::size_t blocks = config.backbone.blocks;
    for (std::size_t b = 0; b < blocks; ++b) {
        const bool last = b + 1 == blocks;
        AdapterKind kind = AdapterKind::St;
        std::size_t inner_ratio = 1;
        if (!last && config.use_smga) {
            kind = AdapterKind::Smga;
            inner_ratio = config.r1;
        } else if (last && config.use_cmga) {
            kind = AdapterKind::Cmga;
            inner_ratio = config.r2;
        }
        adapters_.push_back(AdapterParams::create(store_, "adapter" + std::to_string(b), kind, config.frames, d,
                                                  config.adapter_ratio, inner_ratio));
    }
}

EpisodeFeatures FewShotModel::forward(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                                      ModelTrace* trace) const {
    if (trace) {
        *trace = {};
    }
    return config_.mode == PipelineMode::FineTune ? forward_finetune(support, query, trace)
                                                  : forward_adapter(support, query, trace);
}

EpisodeFeatures FewShotModel::forward_finetune(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                                               ModelTrace* trace) const {
    EpisodeFeatures ep;
    for (const Tensor& clip : support) {
        Tensor f = backbone_.forward(clip);
        ep.support.push_back(smga_ ? smga_forward(f, *smga_) : f);
    }
    for (const Tensor& clip : query) {
        Tensor f = backbone_.forward(clip);
        if (smga_) {
            SelfScore s;
            f = smga_forward(f, *smga_, trace ? &s : nullptr);
            if (trace) {
                trace->query_self.push_back(std::move(s));
            }
        }
        ep.query.push_back(f);
    }
    if (cmga_) {
        ep = cmga_forward(ep, *cmga_, config_.variant, trace ? &trace->cross : nullptr);
    }
    return ep;
}

EpisodeFeatures FewShotModel::forward_adapter(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                                              ModelTrace* trace) const {
    const std::size_t blocks = backbone_.blocks.size();
    auto early = [&](const Tensor& clip, SelfScore* self) {
        Tensor x = backbone_.embed(clip);
        for (std::size_t b = 0; b + 1 < blocks; ++b) {
            x = backbone_.block(b, x);
            const AdapterParams& a = adapters_[b];
            x = a.kind == AdapterKind::Smga ? smga_adapter(x, a, self) : st_adapter(x, a);
        }
        return backbone_.block(blocks - 1, x);
    };
    EpisodeFeatures ep;
    for (const Tensor& clip : support) {
        ep.support.push_back(early(clip, nullptr));
    }
    for (const Tensor& clip : query) {
        SelfScore s;
        ep.query.push_back(early(clip, trace ? &s : nullptr));
        if (trace && s.scores.defined()) {
            trace->query_self.push_back(std::move(s));
        }
    }
    const AdapterParams& last = adapters_.back();
    if (last.kind == AdapterKind::Cmga) {
        return cmga_adapter(ep, last, config_.variant, trace ? &trace->cross : nullptr);
    }
    for (Tensor& f : ep.support) {
        f = st_adapter(f, last);
    }
    for (Tensor& f : ep.query) {
        f = st_adapter(f, last);
    }
    return ep;
}

FewShotModel build_adapter_model(ModelConfig config) {
    config.mode = PipelineMode::Adapter;
    return FewShotModel(config);
}

} // namespace mga

#pragma once

#include "mga/adapters.hpp"
#include "mga/cmga.hpp"
#include "mga/param_store.hpp"
#include "mga/smga.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mga {

enum class PipelineMode { FineTune, Adapter };

struct ModelConfig {
    PipelineMode mode = PipelineMode::FineTune;
    BackboneConfig backbone;
    std::size_t frames = 8;
    std::size_t r1 = 4;
    std::size_t r2 = 4;
    std::size_t adapter_ratio = 4;
    bool use_smga = true;
    bool use_cmga = true;
    CrossVariant variant = CrossVariant::FrameWise;
    std::uint64_t seed = 0;
};

/// Score matrices captured during a forward pass, one entry per query.
struct ModelTrace {
    std::vector<SelfScore> query_self;
    std::vector<CrossScore> cross;
};

/// The whole few-shot pipeline: backbone, video-level S-MGA and task-level
/// C-MGA, either appended after a trainable backbone (fine-tuning) or
/// inserted as adapters into a frozen one.
class FewShotModel {
public:
    explicit FewShotModel(const ModelConfig& config);
    FewShotModel(const FewShotModel&) = delete;
    FewShotModel& operator=(const FewShotModel&) = delete;
    FewShotModel(FewShotModel&&) = default;
    FewShotModel& operator=(FewShotModel&&) = default;

    EpisodeFeatures forward(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                            ModelTrace* trace = nullptr) const;

    /// Output of the backbone alone (no attention modules or adapters).
    Tensor backbone_features(const Tensor& clip) const { return backbone_.forward(clip); }

    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    const ModelConfig& config() const { return config_; }
    const std::vector<AdapterParams>& adapters() const { return adapters_; }

private:
    EpisodeFeatures forward_finetune(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                                     ModelTrace* trace) const;
    EpisodeFeatures forward_adapter(const std::vector<Tensor>& support, const std::vector<Tensor>& query,
                                    ModelTrace* trace) const;

    ModelConfig config_;
    ParameterStore store_;
    BackboneStub backbone_;
    std::optional<SmgaParams> smga_;
    std::optional<CmgaParams> cmga_;
    std::vector<AdapterParams> adapters_; // one per backbone block in adapter mode
};

/// Adapter pipeline: Smga-Adapters after blocks 1..B-1, a Cmga-Adapter after
/// block B, backbone frozen. Throws ConfigError when B < 2.
FewShotModel build_adapter_model(ModelConfig config);

} // namespace mga

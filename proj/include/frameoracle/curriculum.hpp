#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "frameoracle/backends.hpp"
#include "frameoracle/core_types.hpp"
#include "frameoracle/objectives.hpp"
#include "frameoracle/selector_network.hpp"

namespace frameoracle::train {

enum class LossKind { ranknet_teacher, ranknet_loo, k_head, sft };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct StageConfig {
    int stage = 1;  // 1..4
    std::map<selector::ParamGroup, double> group_learning_rates;
    std::set<selector::ParamGroup> frozen_groups;
    int batch_size = 16;
    int max_steps = 200;
    LossKind loss_kind = LossKind::ranknet_teacher;

    void check() const;  // throws ValidationError on inconsistent freeze/rate sets
};

// Stage presets: rates and freeze masks follow the four-stage protocol; step
// budgets are sized for the synthetic world rather than wall-clock training.
std::vector<StageConfig> default_stage_configs(selector::Variant variant);

// Applies overrides from a plain-text config file with [stageN] sections and
// key = value lines (batch_size, max_steps, loss, frozen, lr.<group>).
std::vector<StageConfig> apply_stage_config_file(std::vector<StageConfig> configs,
                                                 const std::string& path);

struct TrainingExample {
    int id = 0;
    CandidateSet frames;
    PromptEncoding prompt;
    backends::TaskRecord task;
    std::optional<AnnotatedExample> annotation;  // required for stage 4
};

struct DataRouting {
    std::vector<TrainingExample> stage1, stage2, stage3, stage4;

    const std::vector<TrainingExample>& for_stage(int stage) const;
};

// Builds the four-stage routing from a planted world; every stage sees the
// same example ids, stage 4 with ground-truth annotations attached.
DataRouting planted_routing(const backends::PlantedWorld& world, int first_id, int count);

struct OptimizerConfig {
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainerOptions {
    OptimizerConfig optimizer;
    objectives::KTargetConfig k_target;  // stage-3 target search; empty grid -> {1..k_max}
    objectives::SftConfig sft;
    std::string metrics_path;       // JSONL of {step, stage, loss, lr}; empty disables
    std::string checkpoint_dir;     // per-stage checkpoints; empty disables
    std::string target_cache_dir;   // JSONL target caches keyed by (id, stage); empty disables
    int n_workers = 1;
};

struct AdamMoments {
    Matrix m, v;
};

struct TrainState {
    selector::SelectorParams params;
    std::map<std::string, AdamMoments> moments;  // trainable tensors only
    long step = 0;          // global optimizer steps taken
    int schedule_pos = 0;   // step within the current stage (drives cosine decay)
    Rng rng{0};

    static TrainState init(selector::SelectorParams params, std::uint64_t seed);
};

// Cosine-decayed factor in (0, 1]; position is the 0-based step in a stage.
double cosine_lr_factor(int position, int max_steps);

// One decoupled-weight-decay adaptive step with the given gradients. Tensors
// in frozen groups and tensors absent from `grads` are left untouched.
void apply_gradients(TrainState& state, const selector::ParamGrads& grads,
                     const StageConfig& cfg, const OptimizerConfig& opt);

struct StageSummary {
    int stage = 0;
    int steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

struct StageResult {
    TrainState state;
    StageSummary summary;
    std::vector<json> metrics;
};

// Runs one stage: applies the freeze mask, precomputes targets through the
// backends the loss kind needs, then iterates batched optimizer steps with a
// cosine schedule. Deterministic for a fixed seed and data order; aborts on a
// non-finite loss.
StageResult run_stage(TrainState state, const StageConfig& cfg,
                      const std::vector<TrainingExample>& data,
                      const backends::BackendSuite& suite, const TrainerOptions& opts,
                      std::uint64_t seed);

struct CurriculumResult {
    selector::SelectorParams params;
    std::vector<StageSummary> stages;
};

// Runs the configured stages in order (the list must be contiguous and
// ascending). `start_params` resumes from a checkpointed state at the first
// listed stage.
CurriculumResult run_curriculum(std::uint64_t seed, const std::vector<StageConfig>& stages,
                                const DataRouting& routing, const backends::BackendSuite& suite,
                                const TrainerOptions& opts,
                                std::optional<selector::SelectorParams> start_params = {});

}  // namespace frameoracle::train

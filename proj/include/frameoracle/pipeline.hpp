#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "frameoracle/backends.hpp"
#include "frameoracle/core_types.hpp"

namespace frameoracle::mining {

constexpr int kGridSize = 64;  // videos are uniformly pre-sampled to 64 frames
constexpr std::array<int, 3> kInitialAnchors = {0, 31, 63};

struct PipelineConfig {
    int lambda_rel = 4;       // Stage-II relevance threshold on the 1..5 scale
    int max_iterations = 10;  // exploration budget per instance
    int retries = 2;          // re-asks after a malformed agent reply
    std::string template_dir;  // prompt template files; empty uses built-ins
    int n_workers = 1;
};

// One parsed, schema-checked agent reply.
struct AgentResponse {
    struct FrameScore {
        int index = 0;
        std::string caption;
        int relevance = 0;  // 1..5
    };
    std::vector<FrameScore> frame_analysis;
    std::vector<std::pair<int, int>> revised_prev_scores;  // (index, new relevance)
    Confidence confidence = Confidence::medium;
    std::string answer_attempt;
    std::string reasoning;
};

// Parses the agent's raw reply against the expected schema. `shown` are the
// indices presented in this call and `context` everything shown before; any
// index outside those sets, a non-integer relevance, or a relevance outside
// 1..5 raises BackendError{protocol}.
AgentResponse parse_agent_response(const std::string& raw, backends::AgentCall kind,
                                   const std::vector<int>& shown,
                                   const std::set<int>& context);

struct ExplorationState {
    int start_idx = 0;
    int end_idx = kGridSize - 1;
    std::set<int> visited;
    MiningTrajectory trajectory;
    int iteration = 0;
    // Ordered prompt context: (index, caption, relevance) per scored frame.
    std::vector<AgentResponse::FrameScore> buffer;
    std::set<std::pair<int, int>> exhausted;  // segments with nothing left to sample

    std::string video_id;
    std::string question;
    double duration_s = 0.0;
};

// Prompt templates with {placeholder} substitution.
struct PromptTemplates {
    std::string initial;
    std::string deep_dive;
};
PromptTemplates load_templates(const std::string& dir);  // empty dir -> built-ins
std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& slots);

// Scores the three anchor frames 0, 31, 63 and records the first
// confidence/answer pair.
ExplorationState initial_probe(const std::string& video_id, const std::string& question,
                               double duration_s, backends::AgentBackend& agent,
                               const PipelineConfig& cfg);

// The adjacent anchor pair (within the current segment) with the largest
// summed relevance; ties and exhausted pairs fall back to the earlier /
// next-best pair. Returns nullopt when every pair is exhausted.
std::optional<std::pair<int, int>> choose_segment(const ExplorationState& state);

// The four evenly spaced interior probe positions of a segment, rounded.
std::vector<int> dense_anchor_positions(int start_idx, int end_idx);

// Descends into the chosen segment: samples up to four new interior frames,
// scores them, applies revisions, and appends confidence/answer. Returns
// false when the segment held nothing new (it is then marked exhausted).
bool deepen(ExplorationState& state, backends::AgentBackend& agent, const PipelineConfig& cfg);

bool should_stop(const ExplorationState& state, const PipelineConfig& cfg);

std::string normalize_answer(const std::string& s);

// Full Stage-I loop for one instance; the verdict is accepted only when the
// agent's final answer matches the ground truth.
MiningTrajectory mine(const std::string& video_id, const std::string& question,
                      const std::string& ground_truth, double duration_s,
                      backends::AgentBackend& agent, const PipelineConfig& cfg);

// Stage-II relevance filter: visited indices with relevance >= lambda_rel.
std::vector<int> filter_keyframes(const MiningTrajectory& trajectory, int lambda_rel);

// Unanimous cross-model check on the filtered keyframes. An empty keyframe
// list fails without consulting any verifier; zero verifiers is a
// configuration error.
bool verify_sufficiency(const std::vector<int>& keyframes, const backends::TaskRecord& task,
                        const std::vector<std::shared_ptr<backends::QaOracle>>& verifiers);

struct CorpusItem {
    std::int64_t id = 0;
    std::string video;
    std::string question;
    std::string answer;
    double duration_s = 0.0;
};

std::vector<CorpusItem> load_corpus_jsonl(const std::string& path);

struct DiscardReport {
    std::map<std::string, int> reason_counts;
    int total_discarded() const;
};

struct BuildResult {
    std::vector<AnnotatedExample> dataset;
    std::vector<std::pair<std::int64_t, MiningTrajectory>> trajectories;  // by corpus id
    DiscardReport discards;
};

// Runs mining + filtering + verification over the corpus. Per-instance
// failures are recorded as discards, never aborting the batch. Output is
// ordered by corpus id.
BuildResult build_dataset(const std::vector<CorpusItem>& corpus, backends::AgentBackend& agent,
                          const std::vector<std::shared_ptr<backends::QaOracle>>& verifiers,
                          const PipelineConfig& cfg);

// Writes dataset JSON, a per-instance trajectory JSONL, and the discard
// report under out_dir.
void write_build_outputs(const BuildResult& result, const std::string& out_dir);

}  // namespace frameoracle::mining

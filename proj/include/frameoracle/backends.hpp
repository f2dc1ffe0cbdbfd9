#pragma once

#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "frameoracle/common.hpp"
#include "frameoracle/core_types.hpp"

namespace frameoracle::backends {

// Identifies one video-question task instance for the oracles.
struct TaskRecord {
    std::string video_id;
    std::string question;
    std::string answer;
};

class VisualEncoderBackend {
public:
    virtual ~VisualEncoderBackend() = default;
    // Embeddings for the full pre-sampled grid of the given video.
    virtual CandidateSet encode(const std::string& video_id) = 0;
};

class TextEncoderBackend {
public:
    virtual ~TextEncoderBackend() = default;
    virtual PromptEncoding encode(const std::string& text) = 0;
};

class SimilarityTeacherBackend {
public:
    virtual ~SimilarityTeacherBackend() = default;
    virtual double score(const Eigen::Ref<const Vector>& frame_embedding,
                         const PromptEncoding& prompt) = 0;
};

class TaskLossOracle {
public:
    virtual ~TaskLossOracle() = default;
    // Loss of the downstream task when only `subset` (positions in the
    // candidate grid) is visible. The empty subset is a valid query.
    virtual double task_loss(const TaskRecord& task, std::span<const int> subset) = 0;
};

class QaOracle {
public:
    virtual ~QaOracle() = default;
    virtual std::string answer(const TaskRecord& task, std::span<const int> subset) = 0;
};

enum class AgentCall { initial, deepen };

struct AgentRequest {
    std::string video_id;
    AgentCall kind = AgentCall::initial;
    std::string prompt;                // rendered template text
    std::vector<int> frame_indices;    // new frames shown in this call
    std::vector<int> context_indices;  // frames already present in the buffer
    std::pair<int, int> segment{0, 63};
};

class AgentBackend {
public:
    virtual ~AgentBackend() = default;
    // Returns the agent's raw reply; the pipeline parses and validates it.
    virtual std::string complete(const AgentRequest& request) = 0;
};

struct BackendSuite {
    std::shared_ptr<VisualEncoderBackend> visual_encoder;
    std::shared_ptr<TextEncoderBackend> text_encoder;
    std::shared_ptr<SimilarityTeacherBackend> similarity_teacher;
    std::shared_ptr<TaskLossOracle> task_loss_oracle;
    std::shared_ptr<QaOracle> qa_oracle;
    std::shared_ptr<AgentBackend> agent;
    std::vector<std::shared_ptr<QaOracle>> verifiers;
};

// ---------------------------------------------------------------------------
// Planted-evidence world: a synthetic substrate in which the true keyframes
// of every question are known by construction.

struct EvidenceSizeSpec {
    enum class Kind { uniform, fig_shape, fixed };
    Kind kind = Kind::uniform;
    int lo = 2, hi = 8;        // uniform
    double median = 5.0;       // fig_shape: rounded lognormal, long tail
    double sigma = 0.85;
    int cap = 30;
    int value = 5;             // fixed
};

enum class EvidencePlacement { scattered, clustered };

struct PlantedWorldConfig {
    std::uint64_t seed = 0;
    int n_examples = 100;
    int grid_size = 16;      // N
    int latent_dim = 32;     // D_v == D_t
    int text_tokens = 4;
    EvidenceSizeSpec evidence_sizes;
    EvidencePlacement placement = EvidencePlacement::scattered;
    double distractor_fraction = 0.2;  // non-evidence frames with mid similarity
    double cost_epsilon = 0.001;       // per-frame cost term of the task loss
};

class PlantedWorld {
public:
    explicit PlantedWorld(const PlantedWorldConfig& config);

    const PlantedWorldConfig& config() const;
    int n_examples() const { return config().n_examples; }

    const std::vector<int>& evidence(int id) const;
    std::string question(int id) const;
    std::string answer(int id) const;
    std::string video_id(int id) const;          // "planted://<id>"
    double duration_s(int id) const;

    CandidateSet candidate_set(int id) const;
    PromptEncoding prompt_encoding(int id) const;
    TaskRecord task_record(int id) const;

    // Ground-truth annotation (keyframes = evidence set).
    AnnotatedExample annotated_example(int id) const;

    // Parses "planted://<id>"; throws BackendError{precondition} otherwise.
    int parse_id(const std::string& video_id) const;

    // Coverage loss |E \ subset| + epsilon * |subset|. epsilon < 0 means the
    // world's configured value; pass 0 for the purely additive oracle.
    std::shared_ptr<TaskLossOracle> task_loss_oracle(double epsilon = -1.0) const;
    std::shared_ptr<VisualEncoderBackend> visual_encoder() const;
    std::shared_ptr<TextEncoderBackend> text_encoder() const;
    std::shared_ptr<SimilarityTeacherBackend> similarity_teacher() const;
    // Answers correctly iff the subset covers the full evidence set.
    std::shared_ptr<QaOracle> qa_oracle() const;
    std::shared_ptr<AgentBackend> agent() const;

    BackendSuite suite(int n_verifiers = 3) const;

private:
    struct Example {
        Vector question_vec;
        std::vector<int> evidence;
        Matrix embeddings;  // grid_size x latent_dim
        Matrix prompt_tokens;
        double duration = 0.0;
    };
    struct Data {
        PlantedWorldConfig config;
        std::vector<Example> examples;
    };

    const Example& example(int id) const;

    // Backends capture this shared block, so they outlive the world handle.
    std::shared_ptr<const Data> data_;
};

std::shared_ptr<PlantedWorld> make_planted_world(const PlantedWorldConfig& config);

// Draws one evidence-set size from the spec, clamped to [1, grid_size].
int sample_evidence_size(Rng& rng, const EvidenceSizeSpec& spec, int grid_size);

// Whitespace-tokenized text encoder; each distinct token maps to a fixed
// unit gaussian vector derived from (seed, token).
class HashTextEncoder : public TextEncoderBackend {
public:
    HashTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
    PromptEncoding encode(const std::string& text) override;

private:
    int dim_;
    std::uint64_t seed_;
};

// QA oracle over HTTP: POST {base_url}/answer with
// {"video_id","question","frame_indices"} and expects {"answer"}.
// Rejects empty frame sets before any network traffic.
class HttpQaOracle : public QaOracle {
public:
    explicit HttpQaOracle(std::string base_url, int timeout_ms = 5000);
    std::string answer(const TaskRecord& task, std::span<const int> subset) override;

private:
    std::string base_url_;
    int timeout_ms_;
};

// Builds a suite from a JSON config: {"planted": {...}, "roles": {...}}.
// Role entries may be "planted" or {"kind":"http","base_url":...} /
// {"kind":"http","base_url_env":"ENV_VAR"} for QA roles.
struct SuiteWithWorld {
    BackendSuite suite;
    std::shared_ptr<PlantedWorld> world;  // null when no planted block present
};
SuiteWithWorld make_backend_suite(const json& config);
SuiteWithWorld load_backend_suite(const std::string& config_path);

PlantedWorldConfig planted_world_config_from_json(const json& j);

}  // namespace frameoracle::backends

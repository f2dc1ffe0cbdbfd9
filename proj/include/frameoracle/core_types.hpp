#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace frameoracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using json = nlohmann::json;

// Result of an invariant check: false carries the list of violated invariants.
struct ValidationResult {
    bool ok = true;
    std::vector<std::string> reasons;

    explicit operator bool() const { return ok; }
    void fail(std::string reason) {
        ok = false;
        reasons.push_back(std::move(reason));
    }
};

// The N uniformly pre-sampled frames a selector operates on.
struct CandidateSet {
    std::string video_id;
    Matrix frame_embeddings;          // N x D_v
    std::vector<int> frame_indices;   // indices into the original video, ascending
    std::vector<double> timestamps_s; // seconds, length N
    double duration_s = 0.0;

    int size() const { return static_cast<int>(frame_embeddings.rows()); }

    bool operator==(const CandidateSet& o) const;
};

struct PromptEncoding {
    std::string prompt_text;
    Matrix token_embeddings;  // T x D_t
    int token_count = 0;

    bool operator==(const PromptEncoding& o) const;
};

// Per-frame relevance scores; also carries predicted scores during training.
struct ScoreVector {
    std::vector<double> scores;

    int size() const { return static_cast<int>(scores.size()); }
    double operator[](int i) const { return scores[static_cast<std::size_t>(i)]; }

    bool operator==(const ScoreVector& o) const { return scores == o.scores; }
};

// Categorical distribution over how many frames to keep; probs[i] is p(k=i+1).
struct KDistribution {
    std::vector<double> probs;
    int k_max = 0;

    double expectation() const;
    int argmax_k() const;  // 1-based k with the highest probability, earliest wins ties

    bool operator==(const KDistribution& o) const { return probs == o.probs && k_max == o.k_max; }
};

struct SelectionResult {
    ScoreVector scores;
    KDistribution k_distribution;
    int chosen_k = 0;
    std::vector<int> selected_indices;  // positions in the candidate set, ascending

    bool operator==(const SelectionResult& o) const;
};

// One dataset record: question, answer, and the minimal sufficient keyframes.
struct AnnotatedExample {
    std::int64_t id = 0;
    std::string question;
    std::string ground_truth_answer;
    std::string video;
    std::string keyframes_dir;
    double duration = 0.0;
    int num_selected_frames = 0;
    std::optional<std::vector<int>> keyframe_indices;  // positions in the 64-frame grid

    bool operator==(const AnnotatedExample& o) const;
};

enum class Confidence { high, medium, low };
enum class Verdict { accepted, answer_mismatch, insufficient };

std::string to_string(Confidence c);
std::string to_string(Verdict v);
Confidence confidence_from_string(const std::string& s);
Verdict verdict_from_string(const std::string& s);

struct FrameRecord {
    std::string caption;
    int relevance = 0;       // integer 1..5
    int iteration_seen = 0;

    bool operator==(const FrameRecord& o) const = default;
};

// Everything the mining agent produced for one video-question instance.
struct MiningTrajectory {
    std::map<int, FrameRecord> visited;  // frame index in [0,63] -> record
    std::vector<Confidence> confidence_history;
    std::vector<std::string> answer_history;
    std::string final_answer;
    Verdict verdict = Verdict::answer_mismatch;
    std::optional<std::string> discard_reason;  // set when the instance is dropped

    bool operator==(const MiningTrajectory& o) const;
};

// ---------------------------------------------------------------------------
// Validation

ValidationResult validate(const CandidateSet& c);
ValidationResult validate(const PromptEncoding& p);
ValidationResult validate(const ScoreVector& s, int expected_n);
ValidationResult validate(const KDistribution& d);
ValidationResult validate(const SelectionResult& r);
ValidationResult validate(const AnnotatedExample& e);
ValidationResult validate(const MiningTrajectory& t);

// Builds a SelectionResult and enforces its invariants; throws ValidationError
// on a non-ascending index list or a count/score mismatch.
SelectionResult make_selection_result(ScoreVector scores, KDistribution dist, int chosen_k,
                                      std::vector<int> selected_indices);

// ---------------------------------------------------------------------------
// JSON (de)serialization. AnnotatedExample uses the release key names:
// id, question, ground_truth_answer, video, keyframes_dir, duration,
// num_selected_frames (+ optional keyframe_indices extension).

json to_json(const CandidateSet& c);
json to_json(const PromptEncoding& p);
json to_json(const ScoreVector& s);
json to_json(const KDistribution& d);
json to_json(const SelectionResult& r);
json to_json(const AnnotatedExample& e);
json to_json(const MiningTrajectory& t);

CandidateSet candidate_set_from_json(const json& j);
PromptEncoding prompt_encoding_from_json(const json& j);
ScoreVector score_vector_from_json(const json& j);
KDistribution k_distribution_from_json(const json& j);
SelectionResult selection_result_from_json(const json& j);
AnnotatedExample annotated_example_from_json(const json& j);
MiningTrajectory mining_trajectory_from_json(const json& j);

std::vector<AnnotatedExample> load_dataset(const std::string& path);
void save_dataset(const std::vector<AnnotatedExample>& dataset, const std::string& path);

}  // namespace frameoracle

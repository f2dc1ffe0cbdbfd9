#include "frameoracle/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "frameoracle/common.hpp"

namespace frameoracle {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array()) throw ValidationError("matrix: expected array of rows");
    const auto n_rows = static_cast<Eigen::Index>(j.size());
    if (n_rows == 0) return Matrix(0, 0);
    const auto n_cols = static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(n_rows, n_cols);
    for (Eigen::Index r = 0; r < n_rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != n_cols)
            throw ValidationError("matrix: ragged rows");
        for (Eigen::Index c = 0; c < n_cols; ++c)
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

}  // namespace

bool CandidateSet::operator==(const CandidateSet& o) const {
    return video_id == o.video_id && frame_indices == o.frame_indices &&
           timestamps_s == o.timestamps_s && duration_s == o.duration_s &&
           frame_embeddings.rows() == o.frame_embeddings.rows() &&
           frame_embeddings.cols() == o.frame_embeddings.cols() &&
           frame_embeddings == o.frame_embeddings;
}

bool PromptEncoding::operator==(const PromptEncoding& o) const {
    return prompt_text == o.prompt_text && token_count == o.token_count &&
           token_embeddings.rows() == o.token_embeddings.rows() &&
           token_embeddings.cols() == o.token_embeddings.cols() &&
           token_embeddings == o.token_embeddings;
}

double KDistribution::expectation() const {
    double e = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) e += static_cast<double>(i + 1) * probs[i];
    return e;
}

int KDistribution::argmax_k() const {
    int best = 1;
    double best_p = probs.empty() ? 0.0 : probs[0];
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > best_p) {
            best_p = probs[i];
            best = static_cast<int>(i) + 1;
        }
    }
    return best;
}

bool SelectionResult::operator==(const SelectionResult& o) const {
    return scores == o.scores && k_distribution == o.k_distribution && chosen_k == o.chosen_k &&
           selected_indices == o.selected_indices;
}

bool AnnotatedExample::operator==(const AnnotatedExample& o) const {
    return id == o.id && question == o.question && ground_truth_answer == o.ground_truth_answer &&
           video == o.video && keyframes_dir == o.keyframes_dir && duration == o.duration &&
           num_selected_frames == o.num_selected_frames && keyframe_indices == o.keyframe_indices;
}

bool MiningTrajectory::operator==(const MiningTrajectory& o) const {
    return visited == o.visited && confidence_history == o.confidence_history &&
           answer_history == o.answer_history && final_answer == o.final_answer &&
           verdict == o.verdict && discard_reason == o.discard_reason;
}

std::string to_string(Confidence c) {
    switch (c) {
        case Confidence::high: return "high";
        case Confidence::medium: return "medium";
        case Confidence::low: return "low";
    }
    return "medium";
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::accepted: return "accepted";
        case Verdict::answer_mismatch: return "answer_mismatch";
        case Verdict::insufficient: return "insufficient";
    }
    return "answer_mismatch";
}

Confidence confidence_from_string(const std::string& s) {
    if (s == "high") return Confidence::high;
    if (s == "medium") return Confidence::medium;
    if (s == "low") return Confidence::low;
    throw ValidationError("unknown confidence: " + s);
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "accepted") return Verdict::accepted;
    if (s == "answer_mismatch") return Verdict::answer_mismatch;
    if (s == "insufficient") return Verdict::insufficient;
    throw ValidationError("unknown verdict: " + s);
}

// ---------------------------------------------------------------------------
// Validation

ValidationResult validate(const CandidateSet& c) {
    ValidationResult r;
    const int n = c.size();
    if (n < 1) r.fail("candidate set must hold at least one frame");
    if (static_cast<int>(c.frame_indices.size()) != n) r.fail("frame_indices length != N");
    if (static_cast<int>(c.timestamps_s.size()) != n) r.fail("timestamps_s length != N");
    for (std::size_t i = 1; i < c.frame_indices.size(); ++i) {
        if (c.frame_indices[i] <= c.frame_indices[i - 1]) {
            r.fail("frame_indices not strictly increasing");
            break;
        }
    }
    for (double t : c.timestamps_s) {
        if (!(t >= 0.0) || t > c.duration_s) {
            r.fail("timestamp outside [0, duration_s]");
            break;
        }
    }
    if (!all_finite(c.frame_embeddings)) r.fail("frame embeddings contain non-finite values");
    return r;
}

ValidationResult validate(const PromptEncoding& p) {
    ValidationResult r;
    if (p.token_count < 1) r.fail("token_count must be >= 1");
    if (p.token_embeddings.rows() != p.token_count) r.fail("token_embeddings rows != token_count");
    if (!all_finite(p.token_embeddings)) r.fail("token embeddings contain non-finite values");
    return r;
}

ValidationResult validate(const ScoreVector& s, int expected_n) {
    ValidationResult r;
    if (s.size() != expected_n) r.fail("score vector length != candidate count");
    for (double v : s.scores) {
        if (!std::isfinite(v)) {
            r.fail("score vector contains non-finite values");
            break;
        }
    }
    return r;
}

ValidationResult validate(const KDistribution& d) {
    ValidationResult r;
    if (d.k_max < 1) r.fail("k_max must be >= 1");
    if (static_cast<int>(d.probs.size()) != d.k_max) r.fail("probs length != k_max");
    double sum = 0.0;
    for (double p : d.probs) {
        if (p < 0.0 || !std::isfinite(p)) {
            r.fail("probs must be non-negative and finite");
            break;
        }
        sum += p;
    }
    if (r.ok && std::abs(sum - 1.0) > 1e-6) r.fail("probs must sum to 1 within 1e-6");
    return r;
}

ValidationResult validate(const SelectionResult& res) {
    ValidationResult r;
    auto dist_check = validate(res.k_distribution);
    if (!dist_check.ok)
        for (auto& reason : dist_check.reasons) r.fail("k_distribution: " + reason);
    if (res.chosen_k < 1 || res.chosen_k > res.k_distribution.k_max)
        r.fail("chosen_k outside [1, k_max]");
    if (static_cast<int>(res.selected_indices.size()) != res.chosen_k)
        r.fail("selected_indices size != chosen_k");
    for (std::size_t i = 1; i < res.selected_indices.size(); ++i) {
        if (res.selected_indices[i] <= res.selected_indices[i - 1]) {
            r.fail("selected_indices not strictly increasing");
            break;
        }
    }
    // Selected must be exactly the top-chosen_k by score; lower index wins ties.
    const int n = res.scores.size();
    if (!res.selected_indices.empty() && n > 0) {
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (res.scores[a] != res.scores[b]) return res.scores[a] > res.scores[b];
            return a < b;
        });
        std::vector<int> expect(order.begin(),
                                order.begin() + std::min<std::size_t>(order.size(),
                                                                      res.selected_indices.size()));
        std::sort(expect.begin(), expect.end());
        if (expect != res.selected_indices) r.fail("selected_indices are not the top-k by score");
    }
    return r;
}

ValidationResult validate(const AnnotatedExample& e) {
    ValidationResult r;
    if (e.num_selected_frames < 1) r.fail("num_selected_frames must be >= 1");
    if (!std::isfinite(e.duration) || e.duration < 0.0) r.fail("duration must be finite and >= 0");
    if (e.keyframe_indices) {
        const auto& idx = *e.keyframe_indices;
        if (static_cast<int>(idx.size()) != e.num_selected_frames)
            r.fail("keyframe_indices length != num_selected_frames");
        for (int v : idx) {
            if (v < 0 || v > 63) {
                r.fail("keyframe index outside [0, 63]");
                break;
            }
        }
        for (std::size_t i = 1; i < idx.size(); ++i) {
            if (idx[i] <= idx[i - 1]) {
                r.fail("keyframe_indices not strictly increasing");
                break;
            }
        }
    }
    return r;
}

ValidationResult validate(const MiningTrajectory& t) {
    ValidationResult r;
    for (const auto& [idx, rec] : t.visited) {
        if (idx < 0 || idx > 63) {
            r.fail("visited frame index outside [0, 63]");
            break;
        }
        if (rec.relevance < 1 || rec.relevance > 5) {
            r.fail("relevance outside 1..5");
            break;
        }
    }
    if (t.confidence_history.empty() || t.answer_history.empty())
        r.fail("histories must be non-empty");
    if (t.confidence_history.size() != t.answer_history.size())
        r.fail("confidence/answer histories differ in length");
    return r;
}

SelectionResult make_selection_result(ScoreVector scores, KDistribution dist, int chosen_k,
                                      std::vector<int> selected_indices) {
    SelectionResult res{std::move(scores), std::move(dist), chosen_k, std::move(selected_indices)};
    auto check = validate(res);
    if (!check.ok) {
        std::string msg = "invalid SelectionResult:";
        for (auto& reason : check.reasons) msg += " " + reason + ";";
        throw ValidationError(msg);
    }
    return res;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const CandidateSet& c) {
    return json{{"video_id", c.video_id},
                {"frame_embeddings", matrix_to_json(c.frame_embeddings)},
                {"frame_indices", c.frame_indices},
                {"timestamps_s", c.timestamps_s},
                {"duration_s", c.duration_s}};
}

CandidateSet candidate_set_from_json(const json& j) {
    CandidateSet c;
    c.video_id = j.at("video_id").get<std::string>();
    c.frame_embeddings = matrix_from_json(j.at("frame_embeddings"));
    c.frame_indices = j.at("frame_indices").get<std::vector<int>>();
    c.timestamps_s = j.at("timestamps_s").get<std::vector<double>>();
    c.duration_s = j.at("duration_s").get<double>();
    return c;
}

json to_json(const PromptEncoding& p) {
    return json{{"prompt_text", p.prompt_text},
                {"token_embeddings", matrix_to_json(p.token_embeddings)},
                {"token_count", p.token_count}};
}

PromptEncoding prompt_encoding_from_json(const json& j) {
    PromptEncoding p;
    p.prompt_text = j.at("prompt_text").get<std::string>();
    p.token_embeddings = matrix_from_json(j.at("token_embeddings"));
    p.token_count = j.at("token_count").get<int>();
    return p;
}

json to_json(const ScoreVector& s) { return json{{"scores", s.scores}}; }

ScoreVector score_vector_from_json(const json& j) {
    return ScoreVector{j.at("scores").get<std::vector<double>>()};
}

json to_json(const KDistribution& d) { return json{{"probs", d.probs}, {"k_max", d.k_max}}; }

KDistribution k_distribution_from_json(const json& j) {
    return KDistribution{j.at("probs").get<std::vector<double>>(), j.at("k_max").get<int>()};
}

json to_json(const SelectionResult& r) {
    return json{{"scores", to_json(r.scores)},
                {"k_distribution", to_json(r.k_distribution)},
                {"chosen_k", r.chosen_k},
                {"selected_indices", r.selected_indices}};
}

SelectionResult selection_result_from_json(const json& j) {
    return make_selection_result(score_vector_from_json(j.at("scores")),
                                 k_distribution_from_json(j.at("k_distribution")),
                                 j.at("chosen_k").get<int>(),
                                 j.at("selected_indices").get<std::vector<int>>());
}

json to_json(const AnnotatedExample& e) {
    json j{{"id", e.id},
           {"question", e.question},
           {"ground_truth_answer", e.ground_truth_answer},
           {"video", e.video},
           {"keyframes_dir", e.keyframes_dir},
           {"duration", e.duration},
           {"num_selected_frames", e.num_selected_frames}};
    if (e.keyframe_indices) j["keyframe_indices"] = *e.keyframe_indices;
    return j;
}

AnnotatedExample annotated_example_from_json(const json& j) {
    AnnotatedExample e;
    e.id = j.at("id").get<std::int64_t>();
    e.question = j.at("question").get<std::string>();
    e.ground_truth_answer = j.at("ground_truth_answer").get<std::string>();
    e.video = j.at("video").get<std::string>();
    e.keyframes_dir = j.at("keyframes_dir").get<std::string>();
    e.duration = j.at("duration").get<double>();
    e.num_selected_frames = j.at("num_selected_frames").get<int>();
    if (j.contains("keyframe_indices"))
        e.keyframe_indices = j.at("keyframe_indices").get<std::vector<int>>();
    return e;
}

json to_json(const MiningTrajectory& t) {
    json visited = json::object();
    for (const auto& [idx, rec] : t.visited) {
        visited[std::to_string(idx)] = json{{"caption", rec.caption},
                                            {"relevance", rec.relevance},
                                            {"iteration_seen", rec.iteration_seen}};
    }
    json conf = json::array();
    for (auto c : t.confidence_history) conf.push_back(to_string(c));
    json j{{"visited", std::move(visited)},
           {"confidence_history", std::move(conf)},
           {"answer_history", t.answer_history},
           {"final_answer", t.final_answer},
           {"verdict", to_string(t.verdict)}};
    if (t.discard_reason) j["discard_reason"] = *t.discard_reason;
    return j;
}

MiningTrajectory mining_trajectory_from_json(const json& j) {
    MiningTrajectory t;
    for (auto it = j.at("visited").begin(); it != j.at("visited").end(); ++it) {
        FrameRecord rec;
        rec.caption = it.value().at("caption").get<std::string>();
        rec.relevance = it.value().at("relevance").get<int>();
        rec.iteration_seen = it.value().at("iteration_seen").get<int>();
        t.visited[std::stoi(it.key())] = std::move(rec);
    }
    for (const auto& c : j.at("confidence_history"))
        t.confidence_history.push_back(confidence_from_string(c.get<std::string>()));
    t.answer_history = j.at("answer_history").get<std::vector<std::string>>();
    t.final_answer = j.at("final_answer").get<std::string>();
    t.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    if (j.contains("discard_reason")) t.discard_reason = j.at("discard_reason").get<std::string>();
    return t;
}

std::vector<AnnotatedExample> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file: " + path);
    json j;
    in >> j;
    if (!j.is_array()) throw ValidationError("dataset file must hold a JSON array: " + path);
    std::vector<AnnotatedExample> out;
    out.reserve(j.size());
    for (const auto& item : j) out.push_back(annotated_example_from_json(item));
    return out;
}

void save_dataset(const std::vector<AnnotatedExample>& dataset, const std::string& path) {
    json arr = json::array();
    for (const auto& e : dataset) arr.push_back(to_json(e));
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset file: " + path);
    out << arr.dump(2) << "\n";
}

}  // namespace frameoracle

#include "frameoracle/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace frameoracle::mining {

namespace {

const char* kInitialTemplate = R"(You are analyzing a video that is {duration_seconds} seconds long. The video has been uniformly sampled into 64 frames, indexed from 0 (start) to 63 (end).

Analyze these initial frames (indices: {initial_indices}) to answer: "{question}". Provide a short caption for each frame, a relevance score (INTEGER 1-5), your confidence (high/medium/low), and your answer attempt.

Respond in JSON: {"frame_analysis": [{"index": int, "caption": "str", "relevance": int}], "confidence": "str", "answer_attempt": "str", "reasoning": "str"}

IMPORTANT GUIDELINES:

- Relevance combines BOTH (a) how well the frame's TEMPORAL POSITION matches the question, and (b) how much the visible CONTENT answers the question. A high score (4-5) requires strong evidence on both axes.
- You may use "high" confidence early ONLY IF you have seen explicit, definitive evidence that unquestionably answers the question (e.g., a clearly visible target object, person, or action).
- Before setting "high" confidence, explicitly state in your reasoning: (a) why the current evidence is sufficient, and (b) why additional unseen frames are unlikely to alter your conclusion.
- If there is any reasonable scenario where unseen frames could alter your answer, acknowledge it and keep your confidence at "medium".

Follow these instructions strictly.
)";

const char* kDeepDiveTemplate = R"(You are analyzing a video that is {duration_seconds} seconds long. The video has been uniformly sampled into 64 frames, indexed from 0 (start) to 63 (end).

Current context on question "{question}":

Current context in buffer "{buffer}".

Now analyze these new frames (indices: {indices}) from the gap ({start_idx}, {end_idx}).

Tasks:
- Provide a caption and a relevance score (INTEGER 1-5) for each NEW frame, your UPDATED confidence, answer, and reasoning.
- If the new evidence changes your view of any PREVIOUS frame listed above, list the updated scores under "revised_prev_scores" (index, new relevance 1-5).

Respond in JSON: {"new_frame_analysis": [{"index": int, "caption": "str", "relevance": int}], "revised_prev_scores": [{"index": int, "relevance": int}], "confidence": "str", "answer_attempt": "str", "reasoning": "str"}

IMPORTANT GUIDELINES:

- Relevance combines BOTH (a) how well the frame's TEMPORAL POSITION matches the question, and (b) how much the visible CONTENT answers the question. A high score (4-5) requires strong evidence on both axes.
- You may use "high" confidence early ONLY IF you have seen explicit, definitive evidence that unquestionably answers the question (e.g., a clearly visible target object, person, or action).
- Before setting "high" confidence, explicitly state in your reasoning: (a) why the current evidence is sufficient, and (b) why additional unseen frames are unlikely to alter your conclusion.
- If there is any reasonable scenario where unseen frames could alter your answer, acknowledge it and keep your confidence at "medium".

Follow these instructions strictly.
)";

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open template file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_duration(double seconds) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", seconds);
    return buf;
}

std::string format_index_list(const std::vector<int>& indices) {
    std::string out = "[";
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(indices[i]);
    }
    return out + "]";
}

std::string render_buffer(const std::vector<AgentResponse::FrameScore>& buffer) {
    json arr = json::array();
    for (const auto& f : buffer)
        arr.push_back(json{{"index", f.index}, {"caption", f.caption}, {"relevance", f.relevance}});
    return arr.dump();
}

// Asks the agent and parses its reply, re-asking on protocol violations up to
// cfg.retries extra times.
AgentResponse ask_agent(backends::AgentBackend& agent, const backends::AgentRequest& request,
                        const std::vector<int>& shown, const std::set<int>& context,
                        const PipelineConfig& cfg) {
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        const std::string raw = agent.complete(request);
        try {
            return parse_agent_response(raw, request.kind, shown, context);
        } catch (const BackendError& e) {
            last_error = e.what();
        }
    }
    throw BackendError(BackendError::Kind::protocol,
                       "agent reply stayed malformed after " + std::to_string(cfg.retries + 1) +
                           " attempts: " + last_error,
                       /*retryable=*/false, cfg.retries + 1);
}

void record_response(ExplorationState& state, const AgentResponse& resp, int iteration_seen) {
    for (const auto& f : resp.frame_analysis) {
        state.visited.insert(f.index);
        state.trajectory.visited[f.index] = FrameRecord{f.caption, f.relevance, iteration_seen};
        state.buffer.push_back(f);
    }
    for (const auto& [idx, relevance] : resp.revised_prev_scores) {
        auto it = state.trajectory.visited.find(idx);
        if (it != state.trajectory.visited.end()) it->second.relevance = relevance;
        for (auto& b : state.buffer)
            if (b.index == idx) b.relevance = relevance;
    }
    state.trajectory.confidence_history.push_back(resp.confidence);
    state.trajectory.answer_history.push_back(resp.answer_attempt);
}

}  // namespace

PromptTemplates load_templates(const std::string& dir) {
    if (dir.empty()) return {kInitialTemplate, kDeepDiveTemplate};
    return {read_file(dir + "/initial_probe.txt"), read_file(dir + "/deep_dive.txt")};
}

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& slots) {
    std::string out = tpl;
    for (const auto& [key, value] : slots) {
        const std::string needle = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = out.find(needle, pos)) != std::string::npos) {
            out.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    return out;
}

AgentResponse parse_agent_response(const std::string& raw, backends::AgentCall kind,
                                   const std::vector<int>& shown, const std::set<int>& context) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const std::exception& e) {
        throw BackendError(BackendError::Kind::protocol,
                           std::string("agent reply is not JSON: ") + e.what());
    }
    auto fail = [](const std::string& why) -> void {
        throw BackendError(BackendError::Kind::protocol, "agent reply schema violation: " + why);
    };

    const char* list_key =
        kind == backends::AgentCall::initial ? "frame_analysis" : "new_frame_analysis";
    if (!j.contains(list_key) || !j.at(list_key).is_array()) fail(std::string(list_key) + " missing");

    AgentResponse resp;
    std::set<int> seen_in_reply;
    const std::set<int> shown_set(shown.begin(), shown.end());
    for (const auto& entry : j.at(list_key)) {
        if (!entry.contains("index") || !entry.at("index").is_number_integer())
            fail("frame index missing or not an integer");
        const int idx = entry.at("index").get<int>();
        if (!shown_set.count(idx)) fail("frame index " + std::to_string(idx) + " was not shown");
        if (!seen_in_reply.insert(idx).second) fail("duplicate frame index " + std::to_string(idx));
        if (!entry.contains("relevance") || !entry.at("relevance").is_number_integer())
            fail("relevance missing or not an integer");
        const int rel = entry.at("relevance").get<int>();
        if (rel < 1 || rel > 5) fail("relevance " + std::to_string(rel) + " outside 1..5");
        if (!entry.contains("caption") || !entry.at("caption").is_string())
            fail("caption missing");
        resp.frame_analysis.push_back(
            {idx, entry.at("caption").get<std::string>(), rel});
    }
    if (seen_in_reply.size() != shown_set.size()) fail("reply does not cover every shown frame");

    if (kind == backends::AgentCall::deepen && j.contains("revised_prev_scores")) {
        if (!j.at("revised_prev_scores").is_array()) fail("revised_prev_scores must be an array");
        for (const auto& entry : j.at("revised_prev_scores")) {
            if (!entry.contains("index") || !entry.at("index").is_number_integer())
                fail("revision index missing");
            const int idx = entry.at("index").get<int>();
            if (!context.count(idx) && !shown_set.count(idx))
                fail("revision of never-shown frame " + std::to_string(idx));
            if (!entry.contains("relevance") || !entry.at("relevance").is_number_integer())
                fail("revision relevance missing");
            const int rel = entry.at("relevance").get<int>();
            if (rel < 1 || rel > 5) fail("revision relevance outside 1..5");
            resp.revised_prev_scores.emplace_back(idx, rel);
        }
    }

    if (!j.contains("confidence") || !j.at("confidence").is_string()) fail("confidence missing");
    try {
        resp.confidence = confidence_from_string(j.at("confidence").get<std::string>());
    } catch (const std::exception&) {
        fail("confidence must be high/medium/low");
    }
    if (!j.contains("answer_attempt") || !j.at("answer_attempt").is_string())
        fail("answer_attempt missing");
    resp.answer_attempt = j.at("answer_attempt").get<std::string>();
    resp.reasoning = j.value("reasoning", "");
    return resp;
}

ExplorationState initial_probe(const std::string& video_id, const std::string& question,
                               double duration_s, backends::AgentBackend& agent,
                               const PipelineConfig& cfg) {
    const PromptTemplates templates = load_templates(cfg.template_dir);
    const std::vector<int> anchors(kInitialAnchors.begin(), kInitialAnchors.end());

    ExplorationState state;
    state.video_id = video_id;
    state.question = question;
    state.duration_s = duration_s;

    backends::AgentRequest request;
    request.video_id = video_id;
    request.kind = backends::AgentCall::initial;
    request.frame_indices = anchors;
    request.segment = {0, kGridSize - 1};
    request.prompt = render_template(templates.initial,
                                     {{"duration_seconds", format_duration(duration_s)},
                                      {"initial_indices", format_index_list(anchors)},
                                      {"question", question}});

    const AgentResponse resp = ask_agent(agent, request, anchors, {}, cfg);
    record_response(state, resp, 1);
    state.iteration = 1;
    return state;
}

std::optional<std::pair<int, int>> choose_segment(const ExplorationState& state) {
    std::vector<int> anchors;
    for (int idx : state.visited)
        if (idx >= state.start_idx && idx <= state.end_idx) anchors.push_back(idx);
    if (anchors.size() < 2) return std::nullopt;

    struct Pair {
        int start, end, sum;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i + 1 < anchors.size(); ++i) {
        const int a = anchors[i], b = anchors[i + 1];
        if (b - a < 2) continue;  // no interior positions to probe
        if (state.exhausted.count({a, b})) continue;
        const int sum = state.trajectory.visited.at(a).relevance +
                        state.trajectory.visited.at(b).relevance;
        pairs.push_back({a, b, sum});
    }
    if (pairs.empty()) return std::nullopt;
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.sum != y.sum) return x.sum > y.sum;
        return x.start < y.start;  // ties resolve to the earlier segment
    });
    return std::make_pair(pairs.front().start, pairs.front().end);
}

std::vector<int> dense_anchor_positions(int start_idx, int end_idx) {
    std::vector<int> out;
    for (int i = 0; i < 4; ++i) {
        const double pos = (static_cast<double>(start_idx) * (4 - i) +
                            static_cast<double>(end_idx) * (i + 1)) /
                           5.0;
        const int rounded = static_cast<int>(std::llround(pos));
        if (rounded <= start_idx || rounded >= end_idx) continue;
        if (!out.empty() && out.back() == rounded) continue;
        out.push_back(rounded);
    }
    return out;
}

bool deepen(ExplorationState& state, backends::AgentBackend& agent, const PipelineConfig& cfg) {
    const int s = state.start_idx, e = state.end_idx;
    int unvisited_interior = 0;
    for (int i = s + 1; i < e; ++i)
        if (!state.visited.count(i)) ++unvisited_interior;
    std::vector<int> positions;
    for (int p : dense_anchor_positions(s, e))
        if (!state.visited.count(p)) positions.push_back(p);
    if (unvisited_interior < 4 || positions.empty()) {
        state.exhausted.insert({s, e});
        return false;
    }

    const PromptTemplates templates = load_templates(cfg.template_dir);
    backends::AgentRequest request;
    request.video_id = state.video_id;
    request.kind = backends::AgentCall::deepen;
    request.frame_indices = positions;
    request.context_indices.assign(state.visited.begin(), state.visited.end());
    request.segment = {s, e};
    request.prompt = render_template(templates.deep_dive,
                                     {{"duration_seconds", format_duration(state.duration_s)},
                                      {"question", state.question},
                                      {"buffer", render_buffer(state.buffer)},
                                      {"indices", format_index_list(positions)},
                                      {"start_idx", std::to_string(s)},
                                      {"end_idx", std::to_string(e)}});

    const AgentResponse resp = ask_agent(agent, request, positions, state.visited, cfg);
    record_response(state, resp, state.iteration + 1);
    state.iteration += 1;
    return true;
}

std::string normalize_answer(const std::string& s) {
    std::string out;
    bool in_space = true;  // swallow leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) {
                out.push_back(' ');
                in_space = true;
            }
        } else {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

bool should_stop(const ExplorationState& state, const PipelineConfig& cfg) {
    if (state.iteration < 1) return false;
    if (static_cast<int>(state.visited.size()) >= kGridSize) return true;
    if (state.iteration >= cfg.max_iterations) return true;
    const auto& answers = state.trajectory.answer_history;
    const auto& conf = state.trajectory.confidence_history;
    if (conf.empty() || conf.back() != Confidence::high) return false;
    if (answers.size() < 2) return false;  // no stability evidence yet
    return normalize_answer(answers.back()) == normalize_answer(answers[answers.size() - 2]);
}

MiningTrajectory mine(const std::string& video_id, const std::string& question,
                      const std::string& ground_truth, double duration_s,
                      backends::AgentBackend& agent, const PipelineConfig& cfg) {
    ExplorationState state;
    try {
        state = initial_probe(video_id, question, duration_s, agent, cfg);
        while (!should_stop(state, cfg)) {
            const auto segment = choose_segment(state);
            if (!segment) {
                // Every pair in the current segment is exhausted; widen back
                // to the root once, then give up if nothing is left there.
                if (state.start_idx == 0 && state.end_idx == kGridSize - 1) break;
                state.start_idx = 0;
                state.end_idx = kGridSize - 1;
                continue;
            }
            state.start_idx = segment->first;
            state.end_idx = segment->second;
            if (!deepen(state, agent, cfg)) continue;
        }
    } catch (const BackendError& e) {
        MiningTrajectory failed = std::move(state.trajectory);
        if (failed.confidence_history.empty()) {
            failed.confidence_history.push_back(Confidence::low);
            failed.answer_history.emplace_back("");
        }
        failed.final_answer = failed.answer_history.back();
        failed.verdict = Verdict::answer_mismatch;
        failed.discard_reason = std::string("agent_protocol_failure: ") + e.what();
        return failed;
    }

    MiningTrajectory traj = std::move(state.trajectory);
    traj.final_answer = traj.answer_history.back();
    if (normalize_answer(traj.final_answer) == normalize_answer(ground_truth)) {
        traj.verdict = Verdict::accepted;
    } else {
        traj.verdict = Verdict::answer_mismatch;
        traj.discard_reason = "answer_mismatch";
    }
    return traj;
}

std::vector<int> filter_keyframes(const MiningTrajectory& trajectory, int lambda_rel) {
    std::vector<int> out;
    for (const auto& [idx, rec] : trajectory.visited)
        if (rec.relevance >= lambda_rel) out.push_back(idx);
    return out;  // std::map iterates in ascending index order
}

bool verify_sufficiency(const std::vector<int>& keyframes, const backends::TaskRecord& task,
                        const std::vector<std::shared_ptr<backends::QaOracle>>& verifiers) {
    if (verifiers.empty())
        throw ValidationError("verify_sufficiency: no verifiers configured");
    if (keyframes.empty()) return false;
    const std::string want = normalize_answer(task.answer);
    for (const auto& verifier : verifiers) {
        if (normalize_answer(verifier->answer(task, keyframes)) != want) return false;
    }
    return true;
}

std::vector<CorpusItem> load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open corpus file: " + path);
    std::vector<CorpusItem> corpus;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json j = json::parse(line);
        CorpusItem item;
        item.id = j.value("id", line_no);
        item.video = j.at("video").get<std::string>();
        item.question = j.at("question").get<std::string>();
        item.answer = j.at("answer").get<std::string>();
        item.duration_s = j.value("duration", 150.0);
        corpus.push_back(std::move(item));
        ++line_no;
    }
    return corpus;
}

int DiscardReport::total_discarded() const {
    int n = 0;
    for (const auto& [reason, count] : reason_counts) n += count;
    return n;
}

BuildResult build_dataset(const std::vector<CorpusItem>& corpus, backends::AgentBackend& agent,
                          const std::vector<std::shared_ptr<backends::QaOracle>>& verifiers,
                          const PipelineConfig& cfg) {
    if (verifiers.empty())
        throw ValidationError("build_dataset: no verifiers configured");

    struct Outcome {
        std::int64_t id = 0;
        MiningTrajectory trajectory;
        std::optional<AnnotatedExample> example;
        std::string discard_reason;
    };

    std::vector<Outcome> outcomes = parallel_map(
        corpus,
        [&](const CorpusItem& item) {
            Outcome out;
            out.id = item.id;
            try {
                out.trajectory =
                    mine(item.video, item.question, item.answer, item.duration_s, agent, cfg);
                if (out.trajectory.verdict != Verdict::accepted) {
                    out.discard_reason = out.trajectory.discard_reason.value_or("answer_mismatch");
                    return out;
                }
                const std::vector<int> keyframes =
                    filter_keyframes(out.trajectory, cfg.lambda_rel);
                if (keyframes.empty()) {
                    out.trajectory.verdict = Verdict::insufficient;
                    out.trajectory.discard_reason = "no_keyframes_above_threshold";
                    out.discard_reason = "no_keyframes_above_threshold";
                    return out;
                }
                const backends::TaskRecord task{item.video, item.question, item.answer};
                if (!verify_sufficiency(keyframes, task, verifiers)) {
                    out.trajectory.verdict = Verdict::insufficient;
                    out.trajectory.discard_reason = "verification_failed";
                    out.discard_reason = "verification_failed";
                    return out;
                }
                AnnotatedExample ex;
                ex.id = item.id;
                ex.question = item.question;
                ex.ground_truth_answer = item.answer;
                ex.video = item.video;
                ex.keyframes_dir = item.video + ".keyframes";
                ex.duration = item.duration_s;
                ex.num_selected_frames = static_cast<int>(keyframes.size());
                ex.keyframe_indices = keyframes;
                out.example = std::move(ex);
            } catch (const std::exception& e) {
                out.discard_reason = std::string("error: ") + e.what();
                if (out.trajectory.confidence_history.empty()) {
                    out.trajectory.confidence_history.push_back(Confidence::low);
                    out.trajectory.answer_history.emplace_back("");
                }
                out.trajectory.verdict = Verdict::answer_mismatch;
                out.trajectory.discard_reason = out.discard_reason;
            }
            return out;
        },
        cfg.n_workers);

    std::stable_sort(outcomes.begin(), outcomes.end(),
                     [](const Outcome& a, const Outcome& b) { return a.id < b.id; });

    BuildResult result;
    for (auto& out : outcomes) {
        result.trajectories.emplace_back(out.id, std::move(out.trajectory));
        if (out.example)
            result.dataset.push_back(std::move(*out.example));
        else
            result.discards.reason_counts[out.discard_reason] += 1;
    }
    return result;
}

void write_build_outputs(const BuildResult& result, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    save_dataset(result.dataset, out_dir + "/dataset.json");

    std::ofstream traj_out(out_dir + "/trajectories.jsonl");
    for (const auto& [id, traj] : result.trajectories) {
        json j{{"id", id}, {"trajectory", to_json(traj)}};
        traj_out << j.dump() << "\n";
    }

    json report{{"retained", result.dataset.size()},
                {"discarded", result.discards.total_discarded()},
                {"reason_counts", result.discards.reason_counts}};
    std::ofstream report_out(out_dir + "/discard_report.json");
    report_out << report.dump(2) << "\n";
}

}  // namespace frameoracle::mining

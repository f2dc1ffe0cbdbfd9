#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "frameoracle/backends.hpp"
#include "frameoracle/pipeline.hpp"

using namespace frameoracle;
using namespace frameoracle::mining;
using backends::AgentCall;
using backends::AgentRequest;

namespace {

// Scripted agent: fixed relevance per frame index, configurable confidence /
// answer sequence, optional revisions and malformed replies.
class ScriptedAgent : public backends::AgentBackend {
public:
    std::map<int, int> relevance;
    int default_relevance = 1;
    std::vector<std::pair<std::string, std::string>> responses;  // (confidence, answer) per call
    std::map<int, int> revise_on_call;                           // call# -> (revision packed below)
    std::pair<int, int> revision{-1, 0};                         // index, new relevance
    int bad_replies = 0;  // emit malformed JSON for the first N calls
    int calls = 0;

    std::string complete(const AgentRequest& request) override {
        const int call = calls++;
        if (call < bad_replies) return "{\"frame_analysis\": \"oops\"";  // not even JSON
        json analysis = json::array();
        for (int idx : request.frame_indices) {
            const auto it = relevance.find(idx);
            analysis.push_back(json{{"index", idx},
                                    {"caption", "frame " + std::to_string(idx)},
                                    {"relevance", it == relevance.end() ? default_relevance
                                                                        : it->second}});
        }
        const auto& [confidence, answer] =
            responses[std::min<std::size_t>(static_cast<std::size_t>(call),
                                            responses.size() - 1)];
        json reply;
        if (request.kind == AgentCall::initial) {
            reply["frame_analysis"] = std::move(analysis);
        } else {
            reply["new_frame_analysis"] = std::move(analysis);
            json revs = json::array();
            if (revise_on_call.count(call))
                revs.push_back(json{{"index", revision.first}, {"relevance", revision.second}});
            reply["revised_prev_scores"] = std::move(revs);
        }
        reply["confidence"] = confidence;
        reply["answer_attempt"] = answer;
        reply["reasoning"] = "scripted";
        return reply.dump();
    }
};

backends::PlantedWorldConfig mining_world_config(std::uint64_t seed = 0) {
    backends::PlantedWorldConfig cfg;
    cfg.seed = seed;
    cfg.n_examples = 200;
    cfg.grid_size = 64;
    cfg.latent_dim = 32;
    cfg.evidence_sizes.lo = 2;
    cfg.evidence_sizes.hi = 6;
    cfg.placement = backends::EvidencePlacement::clustered;
    return cfg;
}

}  // namespace

TEST_CASE("initial probe scores exactly the three anchors") {
    ScriptedAgent agent;
    agent.relevance = {{0, 2}, {31, 5}, {63, 3}};
    agent.responses = {{"medium", "maybe"}};
    PipelineConfig cfg;
    const auto state = initial_probe("vid", "q?", 120.0, agent, cfg);
    CHECK(state.visited == std::set<int>{0, 31, 63});
    CHECK(state.trajectory.visited.at(0).relevance == 2);
    CHECK(state.trajectory.visited.at(31).relevance == 5);
    CHECK(state.trajectory.visited.at(63).relevance == 3);
    CHECK(state.iteration == 1);
    CHECK(state.trajectory.confidence_history.size() == 1);
    // The prompt carries the substituted slots.
    CHECK(agent.calls == 1);
}

TEST_CASE("malformed replies are retried, then surface as protocol errors") {
    ScriptedAgent agent;
    agent.relevance = {{0, 1}, {31, 1}, {63, 1}};
    agent.responses = {{"medium", "x"}};
    agent.bad_replies = 1;  // first reply garbage, second fine
    PipelineConfig cfg;
    cfg.retries = 2;
    CHECK_NOTHROW(initial_probe("vid", "q?", 10.0, agent, cfg));
    CHECK(agent.calls == 2);

    ScriptedAgent hopeless;
    hopeless.bad_replies = 1000;
    hopeless.responses = {{"medium", "x"}};
    CHECK_THROWS_AS(initial_probe("vid", "q?", 10.0, hopeless, cfg), BackendError);
    CHECK(hopeless.calls == cfg.retries + 1);
}

TEST_CASE("relevance outside 1..5 counts as a schema violation") {
    json reply{{"frame_analysis",
                json::array({json{{"index", 0}, {"caption", "c"}, {"relevance", 7}}})},
               {"confidence", "medium"},
               {"answer_attempt", "a"},
               {"reasoning", ""}};
    CHECK_THROWS_AS(parse_agent_response(reply.dump(), AgentCall::initial, {0}, {}),
                    BackendError);
}

TEST_CASE("choose_segment compares adjacent anchor sums; ties go earlier") {
    ExplorationState state;
    state.start_idx = 0;
    state.end_idx = 63;
    state.visited = {0, 31, 63};
    state.trajectory.visited[0] = {"", 2, 1};
    state.trajectory.visited[31] = {"", 5, 1};
    state.trajectory.visited[63] = {"", 3, 1};
    auto seg = choose_segment(state);
    REQUIRE(seg.has_value());
    CHECK(*seg == std::pair<int, int>{31, 63});  // 2+5 < 5+3

    state.trajectory.visited[63] = {"", 2, 1};  // 7 vs 7: tie
    seg = choose_segment(state);
    REQUIRE(seg.has_value());
    CHECK(*seg == std::pair<int, int>{0, 31});
}

TEST_CASE("choose_segment generalizes over the current segment's anchors") {
    ExplorationState state;
    state.start_idx = 31;
    state.end_idx = 63;
    state.visited = {0, 31, 37, 44, 50, 57, 63};
    for (int idx : {0, 31, 37, 44, 57, 63}) state.trajectory.visited[idx] = {"", 2, 1};
    state.trajectory.visited[50] = {"", 5, 2};
    const auto seg = choose_segment(state);
    REQUIRE(seg.has_value());
    CHECK(*seg == std::pair<int, int>{44, 50});  // the anchor at 50 pulls its pairs up
    // Anchors outside [31,63] (index 0) never participate.
}

TEST_CASE("dense anchors are evenly spaced and rounded") {
    CHECK(dense_anchor_positions(31, 63) == std::vector<int>{37, 44, 50, 57});
    CHECK(dense_anchor_positions(0, 31) == std::vector<int>{6, 12, 19, 25});
    // Narrow gaps collapse after rounding/clamping.
    CHECK(dense_anchor_positions(4, 6) == std::vector<int>{5});
}

TEST_CASE("deepen scores new frames, applies revisions, and respects exhaustion") {
    ScriptedAgent agent;
    agent.relevance = {{0, 2}, {31, 5}, {63, 3}};
    agent.default_relevance = 4;
    agent.responses = {{"medium", "m"}, {"medium", "m"}};
    agent.revise_on_call = {{1, 1}};
    agent.revision = {31, 2};  // second call revises anchor 31 down to 2
    PipelineConfig cfg;

    auto state = initial_probe("vid", "q?", 60.0, agent, cfg);
    state.start_idx = 31;
    state.end_idx = 63;
    REQUIRE(deepen(state, agent, cfg));
    CHECK(state.iteration == 2);
    for (int idx : {37, 44, 50, 57}) {
        CHECK(state.visited.count(idx) == 1);
        CHECK(state.trajectory.visited.at(idx).relevance == 4);
        CHECK(state.trajectory.visited.at(idx).iteration_seen == 2);
    }
    CHECK(state.trajectory.visited.at(31).relevance == 2);  // revision applied

    // A segment with fewer than four unvisited interior positions exhausts.
    state.start_idx = 44;
    state.end_idx = 50;
    state.visited.insert({45, 46, 47, 48});
    CHECK_FALSE(deepen(state, agent, cfg));
    CHECK(state.exhausted.count({44, 50}) == 1);
}

TEST_CASE("should_stop: stability, coverage, and budget arms") {
    PipelineConfig cfg;
    ExplorationState state;
    state.iteration = 3;
    state.visited = {0, 31, 63};
    state.trajectory.confidence_history = {Confidence::medium, Confidence::high, Confidence::high};
    state.trajectory.answer_history = {"a", "  The Ball ", "the ball"};
    CHECK(should_stop(state, cfg));  // high + stable normalized answers

    ExplorationState fresh;
    fresh.iteration = 1;
    fresh.visited = {0, 31, 63};
    fresh.trajectory.confidence_history = {Confidence::high};
    fresh.trajectory.answer_history = {"the ball"};
    CHECK_FALSE(should_stop(fresh, cfg));  // no stability evidence yet

    ExplorationState covered;
    covered.iteration = 2;
    for (int i = 0; i < 64; ++i) covered.visited.insert(i);
    covered.trajectory.confidence_history = {Confidence::medium, Confidence::medium};
    covered.trajectory.answer_history = {"x", "y"};
    CHECK(should_stop(covered, cfg));  // everything examined

    ExplorationState budget;
    budget.iteration = cfg.max_iterations;
    budget.visited = {0, 31, 63};
    budget.trajectory.confidence_history = {Confidence::medium};
    budget.trajectory.answer_history = {"x"};
    CHECK(should_stop(budget, cfg));
}

TEST_CASE("mine on the planted world: verdicts and trajectory shape") {
    const backends::PlantedWorld world(mining_world_config());
    auto agent = world.agent();
    PipelineConfig cfg;

    int accepted = 0;
    for (int id = 0; id < 30; ++id) {
        const auto traj = mine(world.video_id(id), world.question(id), world.answer(id),
                               world.duration_s(id), *agent, cfg);
        CHECK(traj.visited.size() >= 3);  // the probe alone scores three anchors
        CHECK(bool(validate(traj)));
        if (traj.verdict == Verdict::accepted) {
            ++accepted;
            CHECK(traj.final_answer == world.answer(id));
        }
        // Visited indices never leave the grid and never shrink (final superset
        // of the probe anchors).
        for (const auto& [idx, rec] : traj.visited) {
            CHECK(idx >= 0);
            CHECK(idx <= 63);
        }
        for (int anchor : kInitialAnchors) CHECK(traj.visited.count(anchor) == 1);
    }
    CHECK(accepted > 0);
}

TEST_CASE("mine marks wrong answers as answer_mismatch") {
    ScriptedAgent agent;
    agent.responses = {{"high", "blue"}, {"high", "blue"}, {"high", "blue"}};
    agent.relevance = {{0, 1}, {31, 1}, {63, 1}};
    PipelineConfig cfg;
    const auto traj = mine("vid", "what color?", "red", 30.0, agent, cfg);
    CHECK(traj.verdict == Verdict::answer_mismatch);
    CHECK(traj.discard_reason == "answer_mismatch");
}

TEST_CASE("protocol failure after retries discards with a reason") {
    ScriptedAgent hopeless;
    hopeless.bad_replies = 1000;
    hopeless.responses = {{"medium", "x"}};
    PipelineConfig cfg;
    const auto traj = mine("vid", "q?", "a", 30.0, hopeless, cfg);
    CHECK(traj.verdict == Verdict::answer_mismatch);
    REQUIRE(traj.discard_reason.has_value());
    CHECK(traj.discard_reason->rfind("agent_protocol_failure", 0) == 0);
    CHECK(bool(validate(traj)));
}

TEST_CASE("filter_keyframes applies the relevance threshold") {
    MiningTrajectory traj;
    traj.visited[0] = {"", 2, 1};
    traj.visited[31] = {"", 5, 1};
    traj.visited[44] = {"", 4, 2};
    traj.visited[63] = {"", 1, 1};
    traj.confidence_history = {Confidence::high};
    traj.answer_history = {"a"};

    CHECK(filter_keyframes(traj, 4) == std::vector<int>{31, 44});
    CHECK(filter_keyframes(traj, 5) == std::vector<int>{31});
    CHECK(filter_keyframes(traj, 1) == std::vector<int>{0, 31, 44, 63});
    MiningTrajectory low;
    low.visited[3] = {"", 2, 1};
    CHECK(filter_keyframes(low, 4).empty());

    // Filtered keyframes always come from the visited set.
    for (int idx : filter_keyframes(traj, 4)) CHECK(traj.visited.count(idx) == 1);
}

namespace {
class CountingOracle : public backends::QaOracle {
public:
    std::string fixed_answer;
    mutable int calls = 0;
    explicit CountingOracle(std::string ans) : fixed_answer(std::move(ans)) {}
    std::string answer(const backends::TaskRecord&, std::span<const int>) override {
        ++calls;
        return fixed_answer;
    }
};
}  // namespace

TEST_CASE("verify_sufficiency demands unanimity and skips empty keyframe sets") {
    const backends::TaskRecord task{"v", "q", "yes"};
    auto good1 = std::make_shared<CountingOracle>("yes");
    auto good2 = std::make_shared<CountingOracle>("Yes ");
    auto bad = std::make_shared<CountingOracle>("no");

    CHECK(verify_sufficiency({1, 2}, task, {good1, good2, good1}));
    CHECK_FALSE(verify_sufficiency({1, 2}, task, {good1, good2, bad}));

    good1->calls = 0;
    CHECK_FALSE(verify_sufficiency({}, task, {good1, good2}));
    CHECK(good1->calls == 0);  // no verifier consulted

    CHECK_THROWS_AS(verify_sufficiency({1}, task, {}), ValidationError);
}

TEST_CASE("build_dataset on the planted world: retention, schema, determinism") {
    const auto world = backends::make_planted_world(mining_world_config());
    auto agent = world->agent();
    std::vector<std::shared_ptr<backends::QaOracle>> verifiers = {
        world->qa_oracle(), world->qa_oracle(), world->qa_oracle()};

    std::vector<CorpusItem> corpus;
    for (int id = 0; id < world->n_examples(); ++id)
        corpus.push_back(CorpusItem{id, world->video_id(id), world->question(id),
                                    world->answer(id), world->duration_s(id)});

    PipelineConfig cfg;
    cfg.n_workers = 4;
    const auto result = build_dataset(corpus, *agent, verifiers, cfg);

    CHECK(!result.dataset.empty());
    CHECK(result.dataset.size() + static_cast<std::size_t>(result.discards.total_discarded()) ==
          corpus.size());

    for (const auto& ex : result.dataset) {
        CHECK(bool(validate(ex)));
        REQUIRE(ex.keyframe_indices.has_value());
        // Retained keyframe sets cover the planted evidence.
        const auto& evidence = world->evidence(static_cast<int>(ex.id));
        const std::set<int> keys(ex.keyframe_indices->begin(), ex.keyframe_indices->end());
        for (int e : evidence) CHECK(keys.count(e) == 1);
        // Re-running verification on the output is a fixed point.
        const backends::TaskRecord task{ex.video, ex.question, ex.ground_truth_answer};
        CHECK(verify_sufficiency(*ex.keyframe_indices, task, verifiers));
    }

    // Deterministic across runs and worker counts: byte-identical output.
    PipelineConfig serial = cfg;
    serial.n_workers = 1;
    const auto again = build_dataset(corpus, *agent, verifiers, serial);
    json a = json::array(), b = json::array();
    for (const auto& ex : result.dataset) a.push_back(to_json(ex));
    for (const auto& ex : again.dataset) b.push_back(to_json(ex));
    CHECK(a.dump() == b.dump());

    // Write the artifacts and re-read the dataset.
    const std::string out_dir = "/tmp/fo_test_mine_out";
    write_build_outputs(result, out_dir);
    const auto reloaded = load_dataset(out_dir + "/dataset.json");
    CHECK(reloaded.size() == result.dataset.size());
}

TEST_CASE("build_dataset discards wrong answers with reason answer_mismatch") {
    const auto world = backends::make_planted_world(mining_world_config(7));
    // An agent that always answers wrongly regardless of what it sees.
    class WrongAnswerAgent : public backends::AgentBackend {
    public:
        explicit WrongAnswerAgent(std::shared_ptr<backends::AgentBackend> inner)
            : inner_(std::move(inner)) {}
        std::string complete(const AgentRequest& request) override {
            json j = json::parse(inner_->complete(request));
            j["answer_attempt"] = "definitely wrong";
            return j.dump();
        }

    private:
        std::shared_ptr<backends::AgentBackend> inner_;
    } wrong(world->agent());

    std::vector<CorpusItem> corpus;
    for (int id = 0; id < 10; ++id)
        corpus.push_back(CorpusItem{id, world->video_id(id), world->question(id),
                                    world->answer(id), world->duration_s(id)});
    std::vector<std::shared_ptr<backends::QaOracle>> verifiers = {world->qa_oracle()};
    const auto result = build_dataset(corpus, wrong, verifiers, PipelineConfig{});
    CHECK(result.dataset.empty());
    CHECK(result.discards.reason_counts.at("answer_mismatch") == 10);
}

TEST_CASE("prompt templates substitute every slot") {
    const auto templates = load_templates("");
    const std::string rendered = render_template(
        templates.initial, {{"duration_seconds", "99.500"},
                            {"initial_indices", "[0, 31, 63]"},
                            {"question", "what happens?"}});
    CHECK(rendered.find("99.500") != std::string::npos);
    CHECK(rendered.find("[0, 31, 63]") != std::string::npos);
    CHECK(rendered.find("what happens?") != std::string::npos);
    CHECK(rendered.find("{duration_seconds}") == std::string::npos);
    CHECK(rendered.find("{question}") == std::string::npos);
    // The JSON response schema braces survive untouched.
    CHECK(rendered.find("\"frame_analysis\"") != std::string::npos);
}

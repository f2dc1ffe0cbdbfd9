#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "frameoracle/common.hpp"
#include "frameoracle/core_types.hpp"

using namespace frameoracle;

namespace {

AnnotatedExample release_format_record() {
    // The published example record: folding-technique question, 126.893 s clip.
    AnnotatedExample e;
    e.id = 30;
    e.question = "What folding technique is demonstrated first in the video?";
    e.ground_truth_answer = "The 'SHIKAKU NO GI' (Square Fold) technique is demonstrated first.";
    e.video = "/srv/nfs/video_data/video/ytb_8yhoV5C3bT8.mp4";
    e.keyframes_dir = "/srv/nfs/video_data/extracted_frames/ytb_8yhoV5C3bT8";
    e.duration = 126.893;
    e.num_selected_frames = 8;
    return e;
}

CandidateSet small_candidate_set() {
    CandidateSet c;
    c.video_id = "vid-1";
    c.frame_embeddings = Matrix::Random(4, 3);
    c.frame_indices = {0, 10, 20, 30};
    c.timestamps_s = {0.0, 1.5, 3.0, 4.5};
    c.duration_s = 6.0;
    return c;
}

}  // namespace

TEST_CASE("validate accepts the release-format example record") {
    const AnnotatedExample e = release_format_record();
    auto r = validate(e);
    CHECK(bool(r));
    CHECK(r.reasons.empty());
}

TEST_CASE("validate rejects a zero frame count") {
    AnnotatedExample e = release_format_record();
    e.num_selected_frames = 0;
    auto r = validate(e);
    CHECK_FALSE(bool(r));
    CHECK(!r.reasons.empty());
}

TEST_CASE("validate rejects a declared/listed count mismatch") {
    AnnotatedExample e = release_format_record();
    e.keyframe_indices = std::vector<int>{1, 5, 9, 13, 21, 34, 55};  // 7 listed, 8 declared
    auto r = validate(e);
    CHECK_FALSE(bool(r));
}

TEST_CASE("validate rejects keyframe indices outside the 64-frame grid") {
    AnnotatedExample e = release_format_record();
    e.num_selected_frames = 2;
    e.keyframe_indices = std::vector<int>{3, 64};
    CHECK_FALSE(bool(validate(e)));
}

TEST_CASE("annotated example JSON uses the release key names") {
    const json j = to_json(release_format_record());
    for (const char* key : {"id", "question", "ground_truth_answer", "video", "keyframes_dir",
                            "duration", "num_selected_frames"})
        CHECK(j.contains(key));
    CHECK_FALSE(j.contains("keyframe_indices"));  // optional extension stays absent
    CHECK(j.at("duration").get<double>() == 126.893);
}

TEST_CASE("annotated example round-trips byte-exactly with normalized key order") {
    const AnnotatedExample e = release_format_record();
    const std::string once = to_json(e).dump();
    const AnnotatedExample back = annotated_example_from_json(json::parse(once));
    CHECK(back == e);
    CHECK(to_json(back).dump() == once);
}

TEST_CASE("serialization round-trips for every domain type") {
    const CandidateSet c = small_candidate_set();
    CHECK(candidate_set_from_json(to_json(c)) == c);

    PromptEncoding p;
    p.prompt_text = "what is shown";
    p.token_embeddings = Matrix::Random(3, 5);
    p.token_count = 3;
    CHECK(prompt_encoding_from_json(to_json(p)) == p);

    ScoreVector s{{0.25, -1.5, 3.75}};
    CHECK(score_vector_from_json(to_json(s)) == s);

    KDistribution d{{0.25, 0.5, 0.25}, 3};
    CHECK(k_distribution_from_json(to_json(d)) == d);

    const SelectionResult res = make_selection_result(ScoreVector{{0.1, 0.9, 0.5}}, d, 2, {1, 2});
    CHECK(selection_result_from_json(to_json(res)) == res);

    AnnotatedExample e = release_format_record();
    e.keyframe_indices = std::vector<int>{1, 5, 9, 13, 21, 34, 55, 60};
    CHECK(annotated_example_from_json(to_json(e)) == e);

    MiningTrajectory t;
    t.visited[0] = {"opening shot", 2, 1};
    t.visited[31] = {"the key action", 5, 1};
    t.confidence_history = {Confidence::medium, Confidence::high};
    t.answer_history = {"not sure yet", "a square fold"};
    t.final_answer = "a square fold";
    t.verdict = Verdict::accepted;
    CHECK(mining_trajectory_from_json(to_json(t)) == t);
}

TEST_CASE("candidate set invariants") {
    CHECK(bool(validate(small_candidate_set())));

    CandidateSet c = small_candidate_set();
    c.frame_indices = {0, 10, 10, 30};
    CHECK_FALSE(bool(validate(c)));

    c = small_candidate_set();
    c.timestamps_s[2] = 100.0;  // past duration
    CHECK_FALSE(bool(validate(c)));

    c = small_candidate_set();
    c.frame_embeddings(1, 1) = std::nan("");
    CHECK_FALSE(bool(validate(c)));
}

TEST_CASE("k distribution invariants") {
    KDistribution ok{{0.5, 0.5}, 2};
    CHECK(bool(validate(ok)));
    KDistribution bad_sum{{0.5, 0.4}, 2};
    CHECK_FALSE(bool(validate(bad_sum)));
    KDistribution negative{{1.2, -0.2}, 2};
    CHECK_FALSE(bool(validate(negative)));
    CHECK(ok.argmax_k() == 1);  // earlier k wins exact ties
    CHECK(KDistribution{{0.2, 0.3, 0.5}, 3}.expectation() == doctest::Approx(2.3));
}

TEST_CASE("selection result construction rejects unsorted indices") {
    const KDistribution d{{0.0, 1.0, 0.0}, 3};
    CHECK_THROWS_AS(make_selection_result(ScoreVector{{3.0, 2.0, 1.0}}, d, 2, {1, 0}),
                    ValidationError);
    CHECK_THROWS_AS(make_selection_result(ScoreVector{{3.0, 2.0, 1.0}}, d, 2, {0}),
                    ValidationError);
    // Top-2 of (3,2,1) is {0,1}; {0,2} is not the top-k set.
    CHECK_THROWS_AS(make_selection_result(ScoreVector{{3.0, 2.0, 1.0}}, d, 2, {0, 2}),
                    ValidationError);
    CHECK_NOTHROW(make_selection_result(ScoreVector{{3.0, 2.0, 1.0}}, d, 2, {0, 1}));
}

TEST_CASE("mining trajectory invariants") {
    MiningTrajectory t;
    t.visited[5] = {"", 3, 1};
    t.confidence_history = {Confidence::medium};
    t.answer_history = {"x"};
    CHECK(bool(validate(t)));

    t.visited[64] = {"", 3, 1};
    CHECK_FALSE(bool(validate(t)));
    t.visited.erase(64);

    t.visited[5].relevance = 6;
    CHECK_FALSE(bool(validate(t)));
    t.visited[5].relevance = 3;

    t.answer_history.push_back("y");
    CHECK_FALSE(bool(validate(t)));
}

TEST_CASE("dataset file round-trip") {
    std::vector<AnnotatedExample> dataset{release_format_record()};
    dataset[0].keyframe_indices = std::vector<int>{2, 7, 11, 19, 23, 40, 41, 60};
    const std::string path = "/tmp/fo_test_dataset.json";
    save_dataset(dataset, path);
    const auto loaded = load_dataset(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0] == dataset[0]);
}

// End-to-end smoke tests of the command-line binary via subprocesses.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "frameoracle/core_types.hpp"

using frameoracle::json;

namespace {

const std::string kCli = FO_CLI_PATH;
const std::string kWork = "/tmp/fo_cli_test";

int run(const std::string& args, const std::string& stdout_file = "") {
    std::string cmd = kCli + " " + args;
    if (!stdout_file.empty()) cmd += " > " + stdout_file;
    cmd += " 2> " + kWork + "/stderr.txt";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Setup {
    Setup() {
        std::filesystem::remove_all(kWork);
        std::filesystem::create_directories(kWork);
    }
} setup;

const std::string kTrainArgs =
    "--variant frames16 --stages 1-4 --seed 0 --d-model 24 --n-layers 1 --n-heads 2 "
    "--dropout 0 --world-examples 32 --world-n 16 --world-latent 16 "
    "--config " + kWork + "/stages.cfg --out " + kWork + "/train";

}  // namespace

TEST_CASE("train runs the full curriculum and writes artifacts") {
    {
        std::ofstream cfg(kWork + "/stages.cfg");
        for (int s = 1; s <= 4; ++s)
            cfg << "[stage" << s << "]\nmax_steps = 8\nbatch_size = 4\n";
    }
    const int rc = run("train " + kTrainArgs, kWork + "/train_stdout.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc == 0);
    CHECK(std::filesystem::exists(kWork + "/train/params_final.ckpt"));
    CHECK(std::filesystem::exists(kWork + "/train/params_stage4.ckpt"));
    CHECK(std::filesystem::exists(kWork + "/train/metrics.jsonl"));
    const json summary = json::parse(slurp(kWork + "/train_stdout.json"));
    CHECK(summary.size() == 4);
}

TEST_CASE("select works from a planted backend and from an embedding file") {
    const int rc = run("select --checkpoint " + kWork +
                           "/train/params_final.ckpt --prompt \"What happens at marker 3?\" "
                           "--video-id planted://3 --world-examples 32 --world-n 16 "
                           "--world-latent 16",
                       kWork + "/select.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc == 0);
    const json sel = json::parse(slurp(kWork + "/select.json"));
    CHECK(sel.at("chosen_k").get<int>() >= 1);
    CHECK(sel.at("selected_indices").size() == sel.at("chosen_k").get<std::size_t>());

    // topk mode through the embeddings-file path needs no backend at all.
    {
        frameoracle::Matrix emb = frameoracle::Matrix::Random(16, 16);
        std::ofstream raw(kWork + "/emb.bin", std::ios::binary);
        const char magic[8] = {'F', 'O', 'E', 'M', 'B', '0', '0', '1'};
        raw.write(magic, 8);
        const std::uint32_t n = 16, d = 16, dtype = 1;
        raw.write(reinterpret_cast<const char*>(&n), 4);
        raw.write(reinterpret_cast<const char*>(&d), 4);
        raw.write(reinterpret_cast<const char*>(&dtype), 4);
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                const double v = emb(r, c);
                raw.write(reinterpret_cast<const char*>(&v), 8);
            }
    }
    const int rc2 = run("select --checkpoint " + kWork +
                            "/train/params_final.ckpt --prompt \"anything\" --embeddings " +
                            kWork + "/emb.bin --mode topk:5",
                        kWork + "/select2.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc2 == 0);
    const json sel2 = json::parse(slurp(kWork + "/select2.json"));
    CHECK(sel2.at("chosen_k").get<int>() == 5);
}

TEST_CASE("mine applies the threshold and emits a dataset plus reports") {
    {
        std::ofstream cfg(kWork + "/backends.json");
        cfg << R"({"planted": {"seed": 0, "n_examples": 24, "grid_size": 64, "latent_dim": 16,
                   "placement": "clustered",
                   "evidence": {"kind": "uniform", "lo": 2, "hi": 5}}})";
    }
    const int rc = run("mine --backend-config " + kWork + "/backends.json --lambda 4 --out " +
                           kWork + "/mine --workers 2",
                       kWork + "/mine_stdout.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc == 0);
    CHECK(std::filesystem::exists(kWork + "/mine/dataset.json"));
    CHECK(std::filesystem::exists(kWork + "/mine/trajectories.jsonl"));
    CHECK(std::filesystem::exists(kWork + "/mine/discard_report.json"));

    const auto dataset = frameoracle::load_dataset(kWork + "/mine/dataset.json");
    for (const auto& ex : dataset) CHECK(bool(frameoracle::validate(ex)));
}

TEST_CASE("eval reproduces the fixed-k protocol shape") {
    // Dataset over the same planted world the checkpoint was trained on.
    {
        std::ofstream cfg(kWork + "/eval_backends.json");
        cfg << R"({"planted": {"seed": 0, "n_examples": 32, "grid_size": 16, "latent_dim": 16,
                   "evidence": {"kind": "uniform", "lo": 2, "hi": 8}}})";
    }
    {
        json arr = json::array();
        for (int id = 24; id < 32; ++id) {
            arr.push_back(json{{"id", id},
                               {"question", "What happens at marker " + std::to_string(id) + "?"},
                               {"ground_truth_answer", "answer-" + std::to_string(id)},
                               {"video", "planted://" + std::to_string(id)},
                               {"keyframes_dir", "planted://" + std::to_string(id) + "/frames"},
                               {"duration", 150.0},
                               {"num_selected_frames", 4}});
        }
        std::ofstream ds(kWork + "/eval_dataset.json");
        ds << arr.dump();
    }
    const int rc = run("eval --checkpoint " + kWork + "/train/params_final.ckpt --dataset " +
                           kWork + "/eval_dataset.json --backend-config " + kWork +
                           "/eval_backends.json --mode topk:8 --out " + kWork + "/report.json",
                       kWork + "/eval_stdout.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc == 0);
    const json report = json::parse(slurp(kWork + "/report.json"));
    CHECK(report.at("mean_chosen_k").get<double>() == 8.0);
    CHECK(report.at("n_examples").get<int>() == 8);
}

TEST_CASE("stats writes histograms and summary quantiles") {
    const int rc = run("stats --dataset " + kWork + "/mine/dataset.json --out " + kWork +
                           "/stats",
                       kWork + "/stats_stdout.json");
    CAPTURE(slurp(kWork + "/stderr.txt"));
    REQUIRE(rc == 0);
    CHECK(std::filesystem::exists(kWork + "/stats/keyframe_count_hist.csv"));
    CHECK(std::filesystem::exists(kWork + "/stats/keyframe_count_hist.svg"));
    CHECK(std::filesystem::exists(kWork + "/stats/duration_hist.csv"));
    const json summary = json::parse(slurp(kWork + "/stats_stdout.json"));
    CHECK(summary.at("n_examples").get<int>() >= 1);
}

TEST_CASE("unknown flags exit with the validation code") {
    CHECK(run("train --does-not-exist 1") == 1);
    CHECK(run("bogus-subcommand") == 1);
    CHECK(run("eval --checkpoint missing.ckpt --dataset missing.json") == 1);
}

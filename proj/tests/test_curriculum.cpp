#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "frameoracle/curriculum.hpp"
#include "frameoracle/harness.hpp"

using namespace frameoracle;
using namespace frameoracle::train;
using selector::ParamGroup;

namespace {

backends::PlantedWorldConfig tiny_world_config() {
    backends::PlantedWorldConfig cfg;
    cfg.seed = 2;
    cfg.n_examples = 48;
    cfg.grid_size = 16;
    cfg.latent_dim = 24;
    cfg.evidence_sizes.lo = 2;
    cfg.evidence_sizes.hi = 6;
    return cfg;
}

selector::SelectorConfig tiny_net_config() {
    selector::SelectorConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_v = 24;
    cfg.d_t = 24;
    cfg.k_max = 16;
    cfg.max_frames = 16;
    cfg.dropout = 0.0;
    return cfg;
}

std::vector<StageConfig> shortened(std::vector<StageConfig> stages, int steps) {
    for (auto& s : stages) {
        s.max_steps = steps;
        s.batch_size = 8;
    }
    return stages;
}

}  // namespace

TEST_CASE("default stage configs carry the published rates and freeze masks") {
    const auto configs16 = default_stage_configs(selector::Variant::frames16);
    REQUIRE(configs16.size() == 4);

    const auto& s1 = configs16[0];
    CHECK(s1.group_learning_rates.at(ParamGroup::projectors) == 1e-4);
    CHECK(s1.group_learning_rates.at(ParamGroup::encoder) == 1e-4);
    CHECK(s1.frozen_groups.count(ParamGroup::k_head) == 1);
    CHECK(s1.batch_size == 16);

    const auto& s2 = configs16[1];
    CHECK(s2.group_learning_rates.at(ParamGroup::rank_head) == 1e-4);
    CHECK(s2.group_learning_rates.at(ParamGroup::encoder) == 1e-5);
    CHECK(s2.frozen_groups.count(ParamGroup::k_head) == 1);

    const auto& s3 = configs16[2];
    CHECK(s3.group_learning_rates.at(ParamGroup::k_head) == 1e-4);
    CHECK(s3.group_learning_rates.at(ParamGroup::encoder) == 1e-7);
    CHECK(s3.frozen_groups.count(ParamGroup::rank_head) == 1);

    const auto& s4 = configs16[3];
    CHECK(s4.group_learning_rates.at(ParamGroup::rank_head) == 5e-5);
    CHECK(s4.group_learning_rates.at(ParamGroup::k_head) == 5e-5);
    CHECK(s4.group_learning_rates.at(ParamGroup::projectors) == 1e-5);
    CHECK(s4.frozen_groups.empty());
    CHECK(s4.batch_size == 8);

    for (const auto& cfg : configs16) CHECK_NOTHROW(cfg.check());

    const auto configs64 = default_stage_configs(selector::Variant::frames64);
    CHECK(configs64[0].batch_size == 2);
    CHECK(configs64[1].batch_size == 16);
}

TEST_CASE("stage config invariants reject frozen groups with rates") {
    StageConfig bad;
    bad.stage = 1;
    bad.loss_kind = LossKind::ranknet_teacher;
    bad.group_learning_rates = {{ParamGroup::projectors, 1e-4},
                                {ParamGroup::encoder, 1e-4},
                                {ParamGroup::k_head, 1e-4}};
    bad.frozen_groups = {ParamGroup::k_head, ParamGroup::rank_head};
    CHECK_THROWS_AS(bad.check(), ValidationError);

    StageConfig missing_rate;
    missing_rate.stage = 1;
    missing_rate.group_learning_rates = {{ParamGroup::projectors, 1e-4}};
    missing_rate.frozen_groups = {ParamGroup::k_head, ParamGroup::rank_head};
    CHECK_THROWS_AS(missing_rate.check(), ValidationError);  // encoder has no rate
}

TEST_CASE("stage config file overrides defaults") {
    const std::string path = "/tmp/fo_test_stages.cfg";
    {
        std::ofstream out(path);
        out << "# overrides\n[stage1]\nbatch_size = 4\nmax_steps = 11\n"
            << "[stage3]\nlr.k_head = 2e-4\n";
    }
    const auto configs =
        apply_stage_config_file(default_stage_configs(selector::Variant::frames16), path);
    CHECK(configs[0].batch_size == 4);
    CHECK(configs[0].max_steps == 11);
    CHECK(configs[2].group_learning_rates.at(ParamGroup::k_head) == 2e-4);
    CHECK(configs[1].batch_size == 16);  // untouched

    {
        std::ofstream out(path);
        out << "[stage1]\nnonsense = 1\n";
    }
    CHECK_THROWS_AS(
        apply_stage_config_file(default_stage_configs(selector::Variant::frames16), path),
        ValidationError);
}

TEST_CASE("cosine schedule starts at 1 and decays") {
    CHECK(cosine_lr_factor(0, 100) == doctest::Approx(1.0));
    CHECK(cosine_lr_factor(50, 100) == doctest::Approx(0.5));
    CHECK(cosine_lr_factor(99, 100) < 0.001);
}

TEST_CASE("apply_gradients: per-group learning rates drive the update magnitude") {
    auto params = selector::init_params(tiny_net_config(), 0);
    TrainState state = TrainState::init(params, 0);

    StageConfig cfg;
    cfg.stage = 2;
    cfg.loss_kind = LossKind::ranknet_loo;
    cfg.group_learning_rates = {{ParamGroup::rank_head, 1e-4},
                                {ParamGroup::projectors, 1e-5},
                                {ParamGroup::encoder, 1e-5}};
    cfg.frozen_groups = {ParamGroup::k_head};
    cfg.batch_size = 1;
    cfg.max_steps = 1000000;  // keep the cosine factor at ~1 for step 0

    OptimizerConfig opt;
    opt.weight_decay = 0.0;

    selector::ParamGrads grads;
    selector::for_each_tensor(params, [&](ParamGroup, const std::string& name, Matrix& m) {
        grads.by_name[name] = Matrix::Ones(m.rows(), m.cols());
    });
    apply_gradients(state, grads, cfg, opt);

    // First adaptive step moves every trainable coordinate by ~lr (bias
    // correction makes m_hat/sqrt(v_hat) = 1 for a constant gradient).
    selector::for_each_tensor(state.params, [&](ParamGroup g, const std::string& name, Matrix& m) {
        const Matrix delta = m - [&]() {
            Matrix orig;
            selector::for_each_tensor(params, [&](ParamGroup, const std::string& n2, Matrix& m2) {
                if (n2 == name) orig = m2;
            });
            return orig;
        }();
        if (cfg.frozen_groups.count(g)) {
            CHECK(delta.norm() == 0.0);
        } else {
            const double expected = cfg.group_learning_rates.at(g);
            CHECK(std::abs(delta.maxCoeff() + expected) < expected * 0.01);
            CHECK(std::abs(delta.minCoeff() + expected) < expected * 0.01);
        }
    });

    // Moments exist only for trainable tensors.
    for (const auto& [name, mom] : state.moments) CHECK(name.rfind("k_head", 0) != 0);
}

TEST_CASE("run_stage: stage-1 distillation loss falls on the planted world") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 32);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 60);

    TrainState state = TrainState::init(selector::init_params(tiny_net_config(), 1), 1);
    TrainerOptions opts;
    const auto result = run_stage(std::move(state), stages[0], routing.stage1, world->suite(),
                                  opts, 1);
    CHECK(result.summary.last_loss < result.summary.first_loss);
    for (const auto& rec : result.metrics) {
        CHECK(std::isfinite(rec.at("loss").get<double>()));
        CHECK(rec.at("stage").get<int>() == 1);
    }
}

TEST_CASE("run_stage: frozen groups stay bit-identical through training") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 24);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 25);

    auto params = selector::init_params(tiny_net_config(), 3);

    // Stage 1 freezes both heads; stage 3 freezes the rank head.
    for (const int stage_idx : {0, 2}) {
        const auto& cfg = stages[static_cast<std::size_t>(stage_idx)];
        std::map<std::string, Matrix> before;
        selector::for_each_tensor(params, [&](ParamGroup g, const std::string& name, Matrix& m) {
            if (cfg.frozen_groups.count(g)) before[name] = m;
        });
        TrainState state = TrainState::init(params, 5);
        const auto result =
            run_stage(std::move(state), cfg, routing.for_stage(cfg.stage), world->suite(), {}, 5);
        selector::for_each_tensor(result.state.params,
                                  [&](ParamGroup g, const std::string& name, const Matrix& m) {
                                      if (!cfg.frozen_groups.count(g)) return;
                                      REQUIRE(before.count(name) == 1);
                                      CHECK(m == before.at(name));
                                  });
        // No optimizer moments for frozen tensors.
        for (const auto& [name, mom] : result.state.moments) {
            bool frozen = false;
            selector::for_each_tensor(result.state.params,
                                      [&](ParamGroup g, const std::string& n2, const Matrix&) {
                                          if (n2 == name && cfg.frozen_groups.count(g))
                                              frozen = true;
                                      });
            CHECK_FALSE(frozen);
        }
    }
}

TEST_CASE("run_stage requires the backend its loss kind needs") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 8);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 5);

    backends::BackendSuite no_teacher = world->suite();
    no_teacher.similarity_teacher = nullptr;
    TrainState state = TrainState::init(selector::init_params(tiny_net_config(), 0), 0);
    CHECK_THROWS_AS(run_stage(std::move(state), stages[0], routing.stage1, no_teacher, {}, 0),
                    ValidationError);

    backends::BackendSuite no_oracle = world->suite();
    no_oracle.task_loss_oracle = nullptr;
    TrainState state2 = TrainState::init(selector::init_params(tiny_net_config(), 0), 0);
    CHECK_THROWS_AS(run_stage(std::move(state2), stages[1], routing.stage2, no_oracle, {}, 0),
                    ValidationError);
}

TEST_CASE("run_curriculum enforces stage order and is deterministic") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 24);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 12);

    std::vector<StageConfig> permuted = {stages[1], stages[0]};
    CHECK_THROWS_AS(run_curriculum(0, permuted, routing, world->suite(), {}), ValidationError);
    std::vector<StageConfig> gapped = {stages[0], stages[2]};
    CHECK_THROWS_AS(run_curriculum(0, gapped, routing, world->suite(), {}), ValidationError);

    auto start = selector::init_params(tiny_net_config(), 9);
    const auto a = run_curriculum(4, stages, routing, world->suite(), {}, start);
    const auto b = run_curriculum(4, stages, routing, world->suite(), {}, start);
    CHECK(selector::params_equal(a.params, b.params));
}

TEST_CASE("resuming after stage 2 reproduces the uninterrupted stage-3 state") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 24);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 10);

    const auto start = selector::init_params(tiny_net_config(), 11);
    const std::vector<StageConfig> first_two(stages.begin(), stages.begin() + 2);
    const std::vector<StageConfig> third(stages.begin() + 2, stages.begin() + 3);
    const std::vector<StageConfig> first_three(stages.begin(), stages.begin() + 3);

    const auto uninterrupted = run_curriculum(6, first_three, routing, world->suite(), {}, start);
    const auto half = run_curriculum(6, first_two, routing, world->suite(), {}, start);
    const auto resumed = run_curriculum(6, third, routing, world->suite(), {}, half.params);
    CHECK(selector::params_equal(uninterrupted.params, resumed.params));
}

TEST_CASE("metrics and per-stage checkpoints land on disk") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 16);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 6);
    const std::vector<StageConfig> just_one(stages.begin(), stages.begin() + 1);

    TrainerOptions opts;
    opts.metrics_path = "/tmp/fo_test_metrics.jsonl";
    opts.checkpoint_dir = "/tmp/fo_test_ckpts";
    opts.target_cache_dir = "/tmp/fo_test_cache";
    std::remove(opts.metrics_path.c_str());

    const auto result = run_curriculum(0, just_one, routing, world->suite(), opts,
                                       selector::init_params(tiny_net_config(), 0));
    CHECK(result.stages.size() == 1);

    std::ifstream metrics(opts.metrics_path);
    REQUIRE(metrics.good());
    int lines = 0;
    std::string line;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        CHECK(rec.contains("step"));
        CHECK(rec.contains("stage"));
        CHECK(rec.contains("loss"));
        CHECK(rec.contains("lr"));
        ++lines;
    }
    CHECK(lines == 6);
    CHECK_NOTHROW(selector::load_checkpoint("/tmp/fo_test_ckpts/params_stage1.ckpt"));
    std::ifstream cache("/tmp/fo_test_cache/targets_stage1.jsonl");
    CHECK(cache.good());
}

TEST_CASE("target cache short-circuits oracle calls on a second stage run") {
    const auto world = backends::make_planted_world(tiny_world_config());
    const DataRouting routing = planted_routing(*world, 0, 8);
    auto stages = shortened(default_stage_configs(selector::Variant::frames16), 3);

    class CountingLossOracle : public backends::TaskLossOracle {
    public:
        explicit CountingLossOracle(std::shared_ptr<backends::TaskLossOracle> inner)
            : inner_(std::move(inner)) {}
        std::atomic<int> calls{0};
        double task_loss(const backends::TaskRecord& task, std::span<const int> subset) override {
            ++calls;
            return inner_->task_loss(task, subset);
        }

    private:
        std::shared_ptr<backends::TaskLossOracle> inner_;
    };

    auto counting = std::make_shared<CountingLossOracle>(world->task_loss_oracle());
    backends::BackendSuite suite = world->suite();
    suite.task_loss_oracle = counting;

    TrainerOptions opts;
    opts.target_cache_dir = "/tmp/fo_test_cache2";
    std::filesystem::remove_all(opts.target_cache_dir);

    TrainState s1 = TrainState::init(selector::init_params(tiny_net_config(), 0), 0);
    run_stage(std::move(s1), stages[1], routing.stage2, suite, opts, 0);
    const int first_run_calls = counting->calls;
    CHECK(first_run_calls == 8 * 17);  // N+1 oracle calls per example

    TrainState s2 = TrainState::init(selector::init_params(tiny_net_config(), 0), 0);
    run_stage(std::move(s2), stages[1], routing.stage2, suite, opts, 0);
    CHECK(counting->calls == first_run_calls);  // cache hit, no new calls
}

#include "frameoracle/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace frameoracle::train {

using selector::ParamGroup;

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::ranknet_teacher: return "ranknet_teacher";
        case LossKind::ranknet_loo: return "ranknet_loo";
        case LossKind::k_head: return "k_head";
        case LossKind::sft: return "sft";
    }
    return "ranknet_teacher";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "ranknet_teacher") return LossKind::ranknet_teacher;
    if (s == "ranknet_loo") return LossKind::ranknet_loo;
    if (s == "k_head") return LossKind::k_head;
    if (s == "sft") return LossKind::sft;
    throw ValidationError("unknown loss kind: " + s);
}

void StageConfig::check() const {
    if (stage < 1 || stage > 4) throw ValidationError("stage config: stage must lie in 1..4");
    if (batch_size < 1) throw ValidationError("stage config: batch_size must be >= 1");
    if (max_steps < 1) throw ValidationError("stage config: max_steps must be >= 1");
    for (ParamGroup g : selector::kAllGroups) {
        const bool frozen = frozen_groups.count(g) > 0;
        const auto it = group_learning_rates.find(g);
        const bool has_rate = it != group_learning_rates.end() && it->second != 0.0;
        if (frozen && has_rate)
            throw ValidationError("stage config: frozen group " + selector::to_string(g) +
                                  " must not carry a learning rate");
        if (!frozen && !has_rate)
            throw ValidationError("stage config: trainable group " + selector::to_string(g) +
                                  " needs a positive learning rate");
        if (has_rate && it->second < 0.0)
            throw ValidationError("stage config: negative learning rate");
    }
}

std::vector<StageConfig> default_stage_configs(selector::Variant variant) {
    const bool small_batch_stage1 = variant == selector::Variant::frames64;
    std::vector<StageConfig> out(4);

    out[0].stage = 1;
    out[0].loss_kind = LossKind::ranknet_teacher;
    out[0].group_learning_rates = {{ParamGroup::projectors, 1e-4}, {ParamGroup::encoder, 1e-4}};
    out[0].frozen_groups = {ParamGroup::rank_head, ParamGroup::k_head};
    out[0].batch_size = small_batch_stage1 ? 2 : 16;
    out[0].max_steps = 200;

    out[1].stage = 2;
    out[1].loss_kind = LossKind::ranknet_loo;
    out[1].group_learning_rates = {{ParamGroup::rank_head, 1e-4},
                                   {ParamGroup::projectors, 1e-5},
                                   {ParamGroup::encoder, 1e-5}};
    out[1].frozen_groups = {ParamGroup::k_head};
    out[1].batch_size = 16;
    out[1].max_steps = 160;

    out[2].stage = 3;
    out[2].loss_kind = LossKind::k_head;
    out[2].group_learning_rates = {{ParamGroup::k_head, 1e-4},
                                   {ParamGroup::projectors, 1e-7},
                                   {ParamGroup::encoder, 1e-7}};
    out[2].frozen_groups = {ParamGroup::rank_head};
    out[2].batch_size = 16;
    out[2].max_steps = 160;

    out[3].stage = 4;
    out[3].loss_kind = LossKind::sft;
    out[3].group_learning_rates = {{ParamGroup::rank_head, 5e-5},
                                   {ParamGroup::k_head, 5e-5},
                                   {ParamGroup::projectors, 1e-5},
                                   {ParamGroup::encoder, 1e-5}};
    out[3].frozen_groups = {};
    out[3].batch_size = 8;
    out[3].max_steps = 200;

    for (const auto& cfg : out) cfg.check();
    return out;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<StageConfig> apply_stage_config_file(std::vector<StageConfig> configs,
                                                 const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open stage config file: " + path);
    StageConfig* current = nullptr;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            const std::string section = t.substr(1, t.size() - 2);
            if (section.rfind("stage", 0) != 0)
                throw ValidationError("stage config file: unknown section " + section);
            const int stage = std::stoi(section.substr(5));
            current = nullptr;
            for (auto& c : configs)
                if (c.stage == stage) current = &c;
            if (current == nullptr)
                throw ValidationError("stage config file: section for absent stage " + section);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos || current == nullptr)
            throw ValidationError("stage config file: bad line " + std::to_string(line_no));
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "batch_size") {
            current->batch_size = std::stoi(value);
        } else if (key == "max_steps") {
            current->max_steps = std::stoi(value);
        } else if (key == "loss") {
            current->loss_kind = loss_kind_from_string(value);
        } else if (key == "frozen") {
            current->frozen_groups.clear();
            std::istringstream iss(value);
            std::string name;
            while (std::getline(iss, name, ',')) {
                name = trim(name);
                if (!name.empty())
                    current->frozen_groups.insert(selector::param_group_from_string(name));
            }
        } else if (key.rfind("lr.", 0) == 0) {
            const ParamGroup g = selector::param_group_from_string(key.substr(3));
            current->group_learning_rates[g] = std::stod(value);
        } else {
            throw ValidationError("stage config file: unknown key " + key);
        }
    }
    for (auto& c : configs) {
        for (ParamGroup g : c.frozen_groups) c.group_learning_rates.erase(g);
        c.check();
    }
    return configs;
}

const std::vector<TrainingExample>& DataRouting::for_stage(int stage) const {
    switch (stage) {
        case 1: return stage1;
        case 2: return stage2;
        case 3: return stage3;
        case 4: return stage4;
        default: throw ValidationError("data routing: stage must lie in 1..4");
    }
}

DataRouting planted_routing(const backends::PlantedWorld& world, int first_id, int count) {
    DataRouting routing;
    for (int id = first_id; id < first_id + count; ++id) {
        TrainingExample ex;
        ex.id = id;
        ex.frames = world.candidate_set(id);
        ex.prompt = world.prompt_encoding(id);
        ex.task = world.task_record(id);
        routing.stage1.push_back(ex);
        routing.stage2.push_back(ex);
        routing.stage3.push_back(ex);
        ex.annotation = world.annotated_example(id);
        routing.stage4.push_back(std::move(ex));
    }
    return routing;
}

TrainState TrainState::init(selector::SelectorParams params, std::uint64_t seed) {
    TrainState s;
    s.params = std::move(params);
    s.rng = Rng(mix_seed(seed, 0x72a1));
    return s;
}

double cosine_lr_factor(int position, int max_steps) {
    if (max_steps <= 1) return 1.0;
    const double x = static_cast<double>(position) / static_cast<double>(max_steps);
    return 0.5 * (1.0 + std::cos(M_PI * x));
}

void apply_gradients(TrainState& state, const selector::ParamGrads& grads, const StageConfig& cfg,
                     const OptimizerConfig& opt) {
    const double factor = cosine_lr_factor(state.schedule_pos, cfg.max_steps);
    // Moments are reset at stage entry, so bias correction tracks the
    // stage-local position rather than the global step count.
    const long t = state.schedule_pos + 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));

    selector::for_each_tensor(
        state.params, [&](ParamGroup g, const std::string& name, Matrix& theta) {
            if (cfg.frozen_groups.count(g)) return;
            const auto git = grads.by_name.find(name);
            if (git == grads.by_name.end()) return;
            const auto lrit = cfg.group_learning_rates.find(g);
            if (lrit == cfg.group_learning_rates.end()) return;
            const double lr = lrit->second * factor;

            auto [mit, inserted] = state.moments.try_emplace(name);
            AdamMoments& mom = mit->second;
            if (inserted) {
                mom.m = Matrix::Zero(theta.rows(), theta.cols());
                mom.v = Matrix::Zero(theta.rows(), theta.cols());
            }
            const Matrix& grad = git->second;
            mom.m = opt.beta1 * mom.m + (1.0 - opt.beta1) * grad;
            mom.v = opt.beta2 * mom.v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
            const Matrix m_hat = mom.m / bc1;
            const Matrix v_hat = mom.v / bc2;
            theta -= lr * (m_hat.array() / (v_hat.array().sqrt() + opt.eps)).matrix();
            theta -= lr * opt.weight_decay * theta;
        });
    state.step += 1;
    state.schedule_pos += 1;
}

// ---------------------------------------------------------------------------
// Per-stage target preparation

namespace {

struct PreparedTargets {
    // stage 1 / 2: pairwise labels per example; stage 3 / 4: k* or annotation
    std::vector<objectives::PairwiseLabels> labels;
    std::vector<int> k_star;
};

json cache_record(int id, int stage, const json& payload) {
    json j{{"id", id}, {"stage", stage}};
    j.update(payload);
    return j;
}

std::map<int, json> load_target_cache(const std::string& path) {
    std::map<int, json> cache;
    std::ifstream in(path);
    if (!in) return cache;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        cache[j.at("id").get<int>()] = j;
    }
    return cache;
}

void store_target_cache(const std::string& path, const std::map<int, json>& cache) {
    std::ofstream out(path);
    for (const auto& [id, j] : cache) out << j.dump() << "\n";
}

PreparedTargets prepare_targets(const StageConfig& cfg, const std::vector<TrainingExample>& data,
                                const backends::BackendSuite& suite,
                                const selector::SelectorParams& params,
                                const TrainerOptions& opts) {
    PreparedTargets prepared;
    std::string cache_path;
    std::map<int, json> cache;
    if (!opts.target_cache_dir.empty() && cfg.loss_kind != LossKind::sft) {
        std::filesystem::create_directories(opts.target_cache_dir);
        cache_path = opts.target_cache_dir + "/targets_stage" + std::to_string(cfg.stage) + ".jsonl";
        cache = load_target_cache(cache_path);
    }

    auto cached = [&](const TrainingExample& ex, const char* key) -> const json* {
        auto it = cache.find(ex.id);
        if (it == cache.end() || !it->second.contains(key)) return nullptr;
        return &it->second;
    };

    switch (cfg.loss_kind) {
        case LossKind::ranknet_teacher: {
            if (!suite.similarity_teacher)
                throw ValidationError("stage " + std::to_string(cfg.stage) +
                                      ": similarity teacher backend unavailable");
            for (const auto& ex : data) {
                ScoreVector teacher;
                if (const json* hit = cached(ex, "teacher_scores")) {
                    teacher.scores = hit->at("teacher_scores").get<std::vector<double>>();
                } else {
                    const int n = ex.frames.size();
                    teacher.scores.resize(static_cast<std::size_t>(n));
                    for (int i = 0; i < n; ++i)
                        teacher.scores[static_cast<std::size_t>(i)] = suite.similarity_teacher->score(
                            ex.frames.frame_embeddings.row(i).transpose(), ex.prompt);
                    cache[ex.id] = cache_record(ex.id, cfg.stage, {{"teacher_scores", teacher.scores}});
                }
                prepared.labels.push_back(objectives::pairwise_labels(teacher));
            }
            break;
        }
        case LossKind::ranknet_loo: {
            if (!suite.task_loss_oracle)
                throw ValidationError("stage " + std::to_string(cfg.stage) +
                                      ": task loss oracle unavailable");
            for (const auto& ex : data) {
                ScoreVector loo;
                if (const json* hit = cached(ex, "loo_scores")) {
                    loo.scores = hit->at("loo_scores").get<std::vector<double>>();
                } else {
                    loo = objectives::loo_targets(ex.frames, ex.task, *suite.task_loss_oracle,
                                                  opts.n_workers);
                    cache[ex.id] = cache_record(ex.id, cfg.stage, {{"loo_scores", loo.scores}});
                }
                prepared.labels.push_back(objectives::pairwise_labels(loo));
            }
            break;
        }
        case LossKind::k_head: {
            if (!suite.task_loss_oracle)
                throw ValidationError("stage " + std::to_string(cfg.stage) +
                                      ": task loss oracle unavailable");
            for (const auto& ex : data) {
                int k_star;
                if (const json* hit = cached(ex, "k_star")) {
                    k_star = hit->at("k_star").get<int>();
                } else {
                    // Rank scores come from the frozen rank head at stage entry.
                    auto [scores, dist] = selector::forward(params, ex.frames, ex.prompt);
                    objectives::KTargetConfig kt = opts.k_target;
                    if (kt.k_grid.empty()) {
                        const int hi = std::min(params.config.k_max, ex.frames.size());
                        for (int k = 1; k <= hi; ++k) kt.k_grid.push_back(k);
                    }
                    k_star = objectives::kstar_target(ex.frames, scores, ex.task,
                                                      *suite.task_loss_oracle, kt);
                    cache[ex.id] = cache_record(ex.id, cfg.stage, {{"k_star", k_star}});
                }
                prepared.k_star.push_back(k_star);
            }
            break;
        }
        case LossKind::sft: {
            for (const auto& ex : data) {
                if (!ex.annotation || !ex.annotation->keyframe_indices)
                    throw ValidationError("stage " + std::to_string(cfg.stage) +
                                          ": example " + std::to_string(ex.id) +
                                          " lacks keyframe annotations");
            }
            break;
        }
    }
    if (!cache_path.empty()) store_target_cache(cache_path, cache);
    return prepared;
}

}  // namespace

StageResult run_stage(TrainState state, const StageConfig& cfg,
                      const std::vector<TrainingExample>& data,
                      const backends::BackendSuite& suite, const TrainerOptions& opts,
                      std::uint64_t seed) {
    cfg.check();
    if (data.empty()) throw ValidationError("run_stage: empty example stream");

    // Freeze mask for this stage.
    std::map<std::string, bool> flags;
    for (ParamGroup g : selector::kAllGroups)
        flags[selector::to_string(g)] = cfg.frozen_groups.count(g) == 0;
    state.params = selector::set_trainable(std::move(state.params), flags);
    state.moments.clear();
    state.schedule_pos = 0;
    state.rng = Rng(mix_seed(seed, static_cast<std::uint64_t>(cfg.stage)));

    const PreparedTargets targets = prepare_targets(cfg, data, suite, state.params, opts);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng.engine());

    StageResult result;
    result.summary.stage = cfg.stage;
    std::ofstream metrics_out;
    if (!opts.metrics_path.empty()) metrics_out.open(opts.metrics_path, std::ios::app);

    std::size_t cursor = 0;
    for (int step = 0; step < cfg.max_steps; ++step) {
        selector::ParamGrads batch_grads;
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = order[cursor];
            cursor = (cursor + 1) % order.size();
            const TrainingExample& ex = data[i];

            selector::DropoutSpec dropout{state.params.config.dropout, &state.rng};
            selector::ForwardPass pass =
                selector::forward_training(state.params, ex.frames, ex.prompt, dropout);

            double loss = 0.0;
            Vector d_scores, d_klogits;
            switch (cfg.loss_kind) {
                case LossKind::ranknet_teacher:
                case LossKind::ranknet_loo: {
                    auto lg = objectives::ranknet_loss_grad(pass.scores, targets.labels[i]);
                    loss = lg.value;
                    d_scores = lg.grad;
                    break;
                }
                case LossKind::k_head: {
                    auto lg = objectives::k_head_loss_grad_logits(pass.k_logits, targets.k_star[i],
                                                                  opts.k_target);
                    loss = lg.value;
                    d_klogits = lg.grad;
                    break;
                }
                case LossKind::sft: {
                    auto lg = objectives::sft_loss(pass.scores, pass.k_logits, *ex.annotation,
                                                   opts.sft);
                    loss = lg.value;
                    d_scores = lg.d_scores;
                    d_klogits = lg.d_k_logits;
                    break;
                }
            }
            if (!std::isfinite(loss))
                throw ValidationError("run_stage: non-finite loss at stage " +
                                      std::to_string(cfg.stage) + " step " + std::to_string(step) +
                                      " example " + std::to_string(ex.id));
            batch_loss += loss;
            batch_grads.accumulate(pass.backward(d_scores, d_klogits));
        }
        batch_grads.scale(1.0 / static_cast<double>(cfg.batch_size));
        batch_loss /= static_cast<double>(cfg.batch_size);

        const double factor = cosine_lr_factor(state.schedule_pos, cfg.max_steps);
        apply_gradients(state, batch_grads, cfg, opts.optimizer);

        json lr_obj = json::object();
        for (const auto& [g, lr] : cfg.group_learning_rates)
            lr_obj[selector::to_string(g)] = lr * factor;
        json rec{{"step", state.step}, {"stage", cfg.stage}, {"loss", batch_loss},
                 {"lr", std::move(lr_obj)}};
        if (metrics_out.is_open()) metrics_out << rec.dump() << "\n";
        result.metrics.push_back(std::move(rec));

        if (step == 0) result.summary.first_loss = batch_loss;
        result.summary.last_loss = batch_loss;
    }
    result.summary.steps = cfg.max_steps;
    result.state = std::move(state);
    return result;
}

CurriculumResult run_curriculum(std::uint64_t seed, const std::vector<StageConfig>& stages,
                                const DataRouting& routing, const backends::BackendSuite& suite,
                                const TrainerOptions& opts,
                                std::optional<selector::SelectorParams> start_params) {
    if (stages.empty()) throw ValidationError("run_curriculum: no stages given");
    for (std::size_t i = 1; i < stages.size(); ++i) {
        if (stages[i].stage != stages[i - 1].stage + 1)
            throw ValidationError("run_curriculum: stages must be contiguous and ascending");
    }

    selector::SelectorParams params =
        start_params ? std::move(*start_params)
                     : selector::init_params(selector::SelectorConfig{}, seed);
    TrainState state = TrainState::init(std::move(params), seed);

    CurriculumResult result;
    for (const StageConfig& cfg : stages) {
        StageResult stage_result =
            run_stage(std::move(state), cfg, routing.for_stage(cfg.stage), suite, opts, seed);
        state = std::move(stage_result.state);
        result.stages.push_back(stage_result.summary);
        if (!opts.checkpoint_dir.empty()) {
            std::filesystem::create_directories(opts.checkpoint_dir);
            selector::save_checkpoint(state.params, opts.checkpoint_dir + "/params_stage" +
                                                        std::to_string(cfg.stage) + ".ckpt");
        }
    }
    result.params = std::move(state.params);
    return result;
}

}  // namespace frameoracle::train

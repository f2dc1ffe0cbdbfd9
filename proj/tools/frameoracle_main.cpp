// Command-line surface: adaptive/top-k selection, curriculum training on the
// synthetic world, keyframe mining, evaluation, and dataset statistics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "frameoracle/backends.hpp"
#include "frameoracle/curriculum.hpp"
#include "frameoracle/harness.hpp"
#include "frameoracle/pipeline.hpp"
#include "frameoracle/selector_network.hpp"

namespace fo = frameoracle;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;

struct WorldOptions {
    std::uint64_t seed = 0;
    int examples = 600;
    int grid = 16;
    int latent = 32;
    int evidence_lo = 2;
    int evidence_hi = 8;

    fo::backends::PlantedWorldConfig to_config() const {
        fo::backends::PlantedWorldConfig cfg;
        cfg.seed = seed;
        cfg.n_examples = examples;
        cfg.grid_size = grid;
        cfg.latent_dim = latent;
        cfg.evidence_sizes.kind = fo::backends::EvidenceSizeSpec::Kind::uniform;
        cfg.evidence_sizes.lo = evidence_lo;
        cfg.evidence_sizes.hi = evidence_hi;
        return cfg;
    }
};

std::pair<int, int> parse_stage_range(const std::string& text) {
    const auto dash = text.find('-');
    int first, last;
    if (dash == std::string::npos) {
        first = last = std::stoi(text);
    } else {
        first = std::stoi(text.substr(0, dash));
        last = std::stoi(text.substr(dash + 1));
    }
    if (first < 1 || last > 4 || first > last)
        throw fo::ValidationError("--stages must name a range within 1..4, e.g. 1-4 or 3");
    return {first, last};
}

fo::backends::SuiteWithWorld suite_from_args(const std::string& backend_config,
                                             const WorldOptions& world) {
    if (!backend_config.empty()) return fo::backends::load_backend_suite(backend_config);
    fo::backends::SuiteWithWorld out;
    out.world = fo::backends::make_planted_world(world.to_config());
    out.suite = out.world->suite();
    return out;
}

int cmd_train(const std::string& variant_name, const std::string& stages_text,
              std::uint64_t seed, const std::string& out_dir, const std::string& stage_config,
              const std::string& init_checkpoint, const std::string& sft_dataset,
              const WorldOptions& world, int d_model, int n_layers, int n_heads, double dropout,
              int holdout) {
    const auto variant = fo::selector::variant_from_string(variant_name);
    const auto [first_stage, last_stage] = parse_stage_range(stages_text);

    fo::backends::PlantedWorldConfig world_cfg = world.to_config();
    auto planted = fo::backends::make_planted_world(world_cfg);
    const int train_count = std::max(1, world_cfg.n_examples - holdout);
    fo::train::DataRouting routing = fo::train::planted_routing(*planted, 0, train_count);

    if (!sft_dataset.empty()) {
        const auto annotations = fo::load_dataset(sft_dataset);
        routing.stage4.clear();
        for (const auto& ann : annotations) {
            auto check = fo::validate(ann);
            if (!check.ok) throw fo::ValidationError("invalid record in " + sft_dataset);
            fo::train::TrainingExample ex;
            ex.id = static_cast<int>(ann.id);
            const int id = planted->parse_id(ann.video);
            ex.frames = planted->candidate_set(id);
            ex.prompt = planted->prompt_encoding(id);
            ex.task = planted->task_record(id);
            ex.annotation = ann;
            routing.stage4.push_back(std::move(ex));
        }
    }

    fo::selector::SelectorConfig base;
    base.d_model = d_model;
    base.n_layers = n_layers;
    base.n_heads = n_heads;
    base.dropout = dropout;
    base.d_v = world_cfg.latent_dim;
    base.d_t = world_cfg.latent_dim;
    fo::selector::SelectorConfig net_cfg = fo::selector::variant_config(variant, base);
    net_cfg.max_frames = std::max(net_cfg.max_frames, world_cfg.grid_size);
    net_cfg.check();

    auto all_stages = fo::train::default_stage_configs(variant);
    if (!stage_config.empty())
        all_stages = fo::train::apply_stage_config_file(std::move(all_stages), stage_config);
    std::vector<fo::train::StageConfig> stages;
    for (const auto& cfg : all_stages)
        if (cfg.stage >= first_stage && cfg.stage <= last_stage) stages.push_back(cfg);

    fo::train::TrainerOptions opts;
    std::filesystem::create_directories(out_dir);
    opts.checkpoint_dir = out_dir;
    opts.metrics_path = out_dir + "/metrics.jsonl";
    opts.target_cache_dir = out_dir + "/target_cache";

    std::optional<fo::selector::SelectorParams> start;
    if (!init_checkpoint.empty())
        start = fo::selector::load_checkpoint(init_checkpoint);
    else if (first_stage != 1)
        throw fo::ValidationError("resuming at stage " + std::to_string(first_stage) +
                                  " requires --init <checkpoint>");
    if (!start) start = fo::selector::init_params(net_cfg, seed);

    const auto result = fo::train::run_curriculum(seed, stages, routing, planted->suite(), opts,
                                                  std::move(start));
    fo::selector::save_checkpoint(result.params, out_dir + "/params_final.ckpt");

    fo::json summary = fo::json::array();
    for (const auto& s : result.stages)
        summary.push_back(fo::json{{"stage", s.stage},
                                   {"steps", s.steps},
                                   {"first_loss", s.first_loss},
                                   {"last_loss", s.last_loss}});
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_mine(const std::string& corpus_path, const std::string& backend_config, int lambda,
             const std::string& out_dir, int max_iterations, int workers,
             const std::string& template_dir, const WorldOptions& world) {
    auto suite = suite_from_args(backend_config, world);
    if (!suite.suite.agent) throw fo::BackendError(fo::BackendError::Kind::precondition,
                                                   "mine: no agent backend configured");
    if (suite.suite.verifiers.empty())
        throw fo::BackendError(fo::BackendError::Kind::precondition,
                               "mine: no verifier backends configured");

    std::vector<fo::mining::CorpusItem> corpus;
    if (!corpus_path.empty()) {
        corpus = fo::mining::load_corpus_jsonl(corpus_path);
    } else if (suite.world) {
        for (int id = 0; id < suite.world->n_examples(); ++id) {
            corpus.push_back(fo::mining::CorpusItem{id, suite.world->video_id(id),
                                                    suite.world->question(id),
                                                    suite.world->answer(id),
                                                    suite.world->duration_s(id)});
        }
    } else {
        throw fo::ValidationError("mine: need --corpus or a planted backend config");
    }

    fo::mining::PipelineConfig cfg;
    cfg.lambda_rel = lambda;
    cfg.max_iterations = max_iterations;
    cfg.n_workers = workers;
    cfg.template_dir = template_dir;

    const auto result =
        fo::mining::build_dataset(corpus, *suite.suite.agent, suite.suite.verifiers, cfg);
    fo::mining::write_build_outputs(result, out_dir);

    const auto dataset_stats = result.dataset.empty()
                                   ? fo::harness::DatasetStats{}
                                   : fo::harness::stats(result.dataset);
    if (!result.dataset.empty()) fo::harness::write_stats_outputs(dataset_stats, out_dir);

    std::cout << fo::json{{"retained", result.dataset.size()},
                          {"discarded", result.discards.total_discarded()},
                          {"reason_counts", result.discards.reason_counts}}
                     .dump(2)
              << "\n";
    return kExitOk;
}

int cmd_select(const std::string& checkpoint, const std::string& embeddings_path,
               const std::string& prompt_text, const std::string& mode_text, double duration,
               const std::string& backend_config, const std::string& video_id,
               const WorldOptions& world) {
    const auto params = fo::selector::load_checkpoint(checkpoint);

    fo::CandidateSet frames;
    fo::PromptEncoding prompt;
    if (!embeddings_path.empty()) {
        const fo::Matrix emb = fo::harness::read_embedding_file(embeddings_path);
        const int n = static_cast<int>(emb.rows());
        frames.video_id = "embeddings://" + embeddings_path;
        frames.frame_embeddings = emb;
        const double total = duration > 0 ? duration : static_cast<double>(n);
        for (int i = 0; i < n; ++i) {
            frames.frame_indices.push_back(i);
            frames.timestamps_s.push_back(total * (i + 0.5) / n);
        }
        frames.duration_s = total;
        fo::backends::HashTextEncoder text_enc(params.config.d_t, 0);
        prompt = text_enc.encode(prompt_text);
    } else if (!backend_config.empty() || !video_id.empty()) {
        auto suite = suite_from_args(backend_config, world);
        if (!suite.suite.visual_encoder || !suite.suite.text_encoder)
            throw fo::BackendError(fo::BackendError::Kind::precondition,
                                   "select: backend config lacks encoders");
        frames = suite.suite.visual_encoder->encode(video_id);
        prompt = suite.suite.text_encoder->encode(prompt_text);
    } else {
        throw fo::ValidationError("select: need --embeddings or --backend-config/--video-id");
    }

    const auto mode = fo::harness::EvalMode::parse(mode_text);
    const fo::SelectionResult result =
        mode.adaptive ? fo::harness::select(params, frames, prompt)
                      : fo::harness::select_topk(params, frames, prompt, mode.top_k);
    std::cout << fo::to_json(result).dump(2) << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_path,
             const std::string& backend_config, const std::string& mode_text,
             const std::string& out_path, int workers, double tokens_per_frame,
             const WorldOptions& world) {
    const auto params = fo::selector::load_checkpoint(checkpoint);
    const auto dataset = fo::load_dataset(dataset_path);
    for (const auto& ex : dataset) {
        auto check = fo::validate(ex);
        if (!check.ok)
            throw fo::ValidationError("eval: invalid record id=" + std::to_string(ex.id) + ": " +
                                      check.reasons.front());
    }
    auto suite = suite_from_args(backend_config, world);
    fo::harness::EvalOptions opts;
    opts.n_workers = workers;
    opts.tokens_per_frame = tokens_per_frame;
    const auto report = fo::harness::evaluate(params, dataset, suite.suite,
                                              fo::harness::EvalMode::parse(mode_text), opts);
    const fo::json j = fo::harness::to_json(report);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_stats(const std::string& dataset_path, const std::string& out_dir) {
    const auto dataset = fo::load_dataset(dataset_path);
    const auto s = fo::harness::stats(dataset);
    fo::harness::write_stats_outputs(s, out_dir);
    std::cout << fo::json{{"n_examples", s.n_examples},
                          {"count_median", s.count_median},
                          {"count_mean", s.count_mean},
                          {"count_p25", s.count_p25},
                          {"count_p75", s.count_p75},
                          {"count_p90", s.count_p90},
                          {"fraction_at_most_10", s.fraction_at_most_10},
                          {"duration_median", s.duration_median},
                          {"duration_mean", s.duration_mean}}
                     .dump(2)
              << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"frameoracle: adaptive frame selection toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    WorldOptions world;

    auto add_world_options = [&](CLI::App* cmd) {
        cmd->add_option("--world-seed", world.seed, "synthetic world seed");
        cmd->add_option("--world-examples", world.examples, "synthetic world size");
        cmd->add_option("--world-n", world.grid, "candidate grid size N");
        cmd->add_option("--world-latent", world.latent, "latent embedding width");
        cmd->add_option("--evidence-lo", world.evidence_lo, "min evidence frames");
        cmd->add_option("--evidence-hi", world.evidence_hi, "max evidence frames");
    };

    // train
    auto* train = app.add_subcommand("train", "run the staged curriculum");
    std::string variant = "frames16", stages = "1-4", train_out = "train_out";
    std::string stage_config, init_checkpoint, sft_dataset;
    int d_model = 256, n_layers = 4, n_heads = 8, holdout = 0;
    double dropout = 0.1;
    train->add_option("--variant", variant, "frames16 or frames64");
    train->add_option("--stages", stages, "stage range, e.g. 1-4 or 3");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--config", stage_config, "stage config file");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--init", init_checkpoint, "checkpoint to resume from");
    train->add_option("--sft-dataset", sft_dataset, "stage-4 annotations (JSON)");
    train->add_option("--d-model", d_model);
    train->add_option("--n-layers", n_layers);
    train->add_option("--n-heads", n_heads);
    train->add_option("--dropout", dropout);
    train->add_option("--holdout", holdout, "trailing examples excluded from training");
    add_world_options(train);

    // mine
    auto* mine = app.add_subcommand("mine", "mine keyframe annotations");
    std::string corpus_path, backend_config, mine_out = "mine_out", template_dir;
    int lambda = 4, max_iterations = 10, workers = 1;
    mine->add_option("--corpus", corpus_path, "corpus JSONL of {video,question,answer}");
    mine->add_option("--config,--backend-config", backend_config, "backend config JSON");
    mine->add_option("--lambda", lambda, "relevance threshold (1..5)");
    mine->add_option("--out", mine_out, "output directory");
    mine->add_option("--max-iterations", max_iterations);
    mine->add_option("--workers", workers);
    mine->add_option("--templates", template_dir, "prompt template directory");
    mine->add_option("--seed", seed);
    add_world_options(mine);

    // select
    auto* select = app.add_subcommand("select", "select frames for one input");
    std::string checkpoint, embeddings_path, prompt_text, mode_text = "adaptive", video_id;
    double duration = 0.0;
    select->add_option("--checkpoint", checkpoint)->required();
    select->add_option("--embeddings", embeddings_path, "embedding file");
    select->add_option("--prompt", prompt_text)->required();
    select->add_option("--mode", mode_text, "adaptive or topk:<k>");
    select->add_option("--duration", duration, "video duration in seconds");
    select->add_option("--config,--backend-config", backend_config);
    select->add_option("--video-id", video_id);
    select->add_option("--seed", seed);
    add_world_options(select);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string dataset_path, report_out;
    double tokens_per_frame = fo::harness::kDefaultTokensPerFrame;
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--dataset", dataset_path)->required();
    eval->add_option("--config,--backend-config", backend_config);
    eval->add_option("--mode", mode_text, "adaptive or topk:<k>");
    eval->add_option("--out", report_out, "report JSON path");
    eval->add_option("--workers", workers);
    eval->add_option("--tokens-per-frame", tokens_per_frame);
    eval->add_option("--seed", seed);
    add_world_options(eval);

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "dataset statistics and histograms");
    std::string stats_out = "stats_out";
    stats_cmd->add_option("--dataset", dataset_path)->required();
    stats_cmd->add_option("--out", stats_out, "output directory");
    stats_cmd->add_option("--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints usage / error text
        return e.get_exit_code() == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (train->parsed())
            return cmd_train(variant, stages, seed, train_out, stage_config, init_checkpoint,
                             sft_dataset, world, d_model, n_layers, n_heads, dropout, holdout);
        if (mine->parsed())
            return cmd_mine(corpus_path, backend_config, lambda, mine_out, max_iterations,
                            workers, template_dir, world);
        if (select->parsed())
            return cmd_select(checkpoint, embeddings_path, prompt_text, mode_text, duration,
                              backend_config, video_id, world);
        if (eval->parsed())
            return cmd_eval(checkpoint, dataset_path, backend_config, mode_text, report_out,
                            workers, tokens_per_frame, world);
        if (stats_cmd->parsed()) return cmd_stats(dataset_path, stats_out);
    } catch (const fo::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const fo::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}

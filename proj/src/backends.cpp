#include "frameoracle/backends.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>

namespace frameoracle::backends {

namespace {

Vector random_unit(Rng& rng, int dim) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.gaussian();
    const double n = v.norm();
    return n > 0 ? Vector(v / n) : Vector::Unit(dim, 0);
}

// Unit vector at the requested cosine to q.
Vector at_cosine(Rng& rng, const Vector& q, double cosine) {
    const int dim = static_cast<int>(q.size());
    Vector g = random_unit(rng, dim);
    Vector perp = g - g.dot(q) * q;
    double n = perp.norm();
    if (n < 1e-12) {
        perp = Vector::Unit(dim, 0) - q[0] * q;
        n = perp.norm();
    }
    perp /= n;
    const double sine = std::sqrt(std::max(0.0, 1.0 - cosine * cosine));
    return cosine * q + sine * perp;
}

}  // namespace

int sample_evidence_size(Rng& rng, const EvidenceSizeSpec& spec, int grid_size) {
    int k = 1;
    switch (spec.kind) {
        case EvidenceSizeSpec::Kind::uniform:
            k = static_cast<int>(rng.uniform_int(spec.lo, spec.hi));
            break;
        case EvidenceSizeSpec::Kind::fig_shape: {
            const double x = std::exp(std::log(spec.median) + spec.sigma * rng.gaussian());
            k = static_cast<int>(std::lround(x));
            k = std::min(k, spec.cap);
            break;
        }
        case EvidenceSizeSpec::Kind::fixed:
            k = spec.value;
            break;
    }
    return std::clamp(k, 1, grid_size);
}

namespace {

std::vector<int> sample_positions(Rng& rng, int count, int grid_size, EvidencePlacement placement) {
    std::vector<int> out;
    if (placement == EvidencePlacement::clustered && count < grid_size) {
        // Evidence lives in a contiguous temporal window with a little slack.
        const int window = std::min(grid_size, count + std::max(1, count / 3));
        const int start = static_cast<int>(rng.uniform_int(0, grid_size - window));
        std::vector<int> pool(static_cast<std::size_t>(window));
        std::iota(pool.begin(), pool.end(), start);
        for (int i = 0; i < count; ++i) {
            const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
            out.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
    } else {
        std::vector<int> pool(static_cast<std::size_t>(grid_size));
        std::iota(pool.begin(), pool.end(), 0);
        for (int i = 0; i < count && !pool.empty(); ++i) {
            const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
            out.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

PlantedWorld::PlantedWorld(const PlantedWorldConfig& config) {
    if (config.n_examples < 1 || config.grid_size < 1 || config.latent_dim < 2 ||
        config.text_tokens < 1)
        throw ValidationError("planted world: invalid sizes");
    auto data = std::make_shared<Data>();
    data->config = config;
    data->examples.resize(static_cast<std::size_t>(config.n_examples));
    for (int id = 0; id < config.n_examples; ++id) {
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(id)));
        Example& ex = data->examples[static_cast<std::size_t>(id)];
        ex.question_vec = random_unit(rng, config.latent_dim);
        const int k = sample_evidence_size(rng, config.evidence_sizes, config.grid_size);
        ex.evidence = sample_positions(rng, k, config.grid_size, config.placement);

        ex.embeddings.resize(config.grid_size, config.latent_dim);
        std::set<int> evidence_set(ex.evidence.begin(), ex.evidence.end());
        for (int f = 0; f < config.grid_size; ++f) {
            Vector emb;
            if (evidence_set.count(f)) {
                emb = at_cosine(rng, ex.question_vec, rng.uniform(0.85, 0.97));
            } else if (rng.uniform() < config.distractor_fraction) {
                emb = at_cosine(rng, ex.question_vec, rng.uniform(0.30, 0.55));
            } else {
                emb = random_unit(rng, config.latent_dim);
            }
            ex.embeddings.row(f) = emb.transpose();
        }

        ex.prompt_tokens.resize(config.text_tokens, config.latent_dim);
        for (int t = 0; t < config.text_tokens; ++t) {
            Vector tok = ex.question_vec + 0.05 * random_unit(rng, config.latent_dim);
            ex.prompt_tokens.row(t) = (tok / tok.norm()).transpose();
        }
        ex.duration = 120.0 + 60.0 * rng.uniform();
    }
    data_ = std::move(data);
}

const PlantedWorldConfig& PlantedWorld::config() const { return data_->config; }

const PlantedWorld::Example& PlantedWorld::example(int id) const {
    if (id < 0 || id >= data_->config.n_examples)
        throw BackendError(BackendError::Kind::precondition,
                           "planted world: unknown example id " + std::to_string(id));
    return data_->examples[static_cast<std::size_t>(id)];
}

const std::vector<int>& PlantedWorld::evidence(int id) const { return example(id).evidence; }

std::string PlantedWorld::question(int id) const {
    example(id);
    return "What happens at marker " + std::to_string(id) + "?";
}

std::string PlantedWorld::answer(int id) const {
    example(id);
    return "answer-" + std::to_string(id);
}

std::string PlantedWorld::video_id(int id) const {
    example(id);
    return "planted://" + std::to_string(id);
}

double PlantedWorld::duration_s(int id) const { return example(id).duration; }

CandidateSet PlantedWorld::candidate_set(int id) const {
    const Example& ex = example(id);
    const int n = data_->config.grid_size;
    CandidateSet c;
    c.video_id = video_id(id);
    c.frame_embeddings = ex.embeddings;
    c.frame_indices.resize(static_cast<std::size_t>(n));
    c.timestamps_s.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        c.frame_indices[static_cast<std::size_t>(i)] = i;
        c.timestamps_s[static_cast<std::size_t>(i)] =
            ex.duration * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    c.duration_s = ex.duration;
    return c;
}

PromptEncoding PlantedWorld::prompt_encoding(int id) const {
    const Example& ex = example(id);
    PromptEncoding p;
    p.prompt_text = question(id);
    p.token_embeddings = ex.prompt_tokens;
    p.token_count = static_cast<int>(ex.prompt_tokens.rows());
    return p;
}

TaskRecord PlantedWorld::task_record(int id) const {
    return TaskRecord{video_id(id), question(id), answer(id)};
}

AnnotatedExample PlantedWorld::annotated_example(int id) const {
    const Example& ex = example(id);
    AnnotatedExample a;
    a.id = id;
    a.question = question(id);
    a.ground_truth_answer = answer(id);
    a.video = video_id(id);
    a.keyframes_dir = "planted://" + std::to_string(id) + "/frames";
    a.duration = ex.duration;
    a.num_selected_frames = static_cast<int>(ex.evidence.size());
    a.keyframe_indices = ex.evidence;
    return a;
}

int PlantedWorld::parse_id(const std::string& vid) const {
    constexpr const char* kPrefix = "planted://";
    if (vid.rfind(kPrefix, 0) != 0)
        throw BackendError(BackendError::Kind::precondition,
                           "not a planted video id: " + vid);
    const int id = std::stoi(vid.substr(std::string(kPrefix).size()));
    example(id);
    return id;
}

// ---------------------------------------------------------------------------
// Planted backends

namespace {

using DataPtr = std::shared_ptr<const void>;

class PlantedTaskLoss : public TaskLossOracle {
public:
    PlantedTaskLoss(PlantedWorld world, double epsilon) : world_(std::move(world)), epsilon_(epsilon) {}

    double task_loss(const TaskRecord& task, std::span<const int> subset) override {
        const int id = world_.parse_id(task.video_id);
        const auto& evidence = world_.evidence(id);
        std::set<int> present(subset.begin(), subset.end());
        int missing = 0;
        for (int e : evidence)
            if (!present.count(e)) ++missing;
        return static_cast<double>(missing) + epsilon_ * static_cast<double>(subset.size());
    }

private:
    PlantedWorld world_;
    double epsilon_;
};

class PlantedVisualEncoder : public VisualEncoderBackend {
public:
    explicit PlantedVisualEncoder(PlantedWorld world) : world_(std::move(world)) {}
    CandidateSet encode(const std::string& video_id) override {
        return world_.candidate_set(world_.parse_id(video_id));
    }

private:
    PlantedWorld world_;
};

class PlantedTextEncoder : public TextEncoderBackend {
public:
    explicit PlantedTextEncoder(PlantedWorld world)
        : world_(std::move(world)),
          fallback_(world_.config().latent_dim, mix_seed(world_.config().seed, 0x7e47)) {}

    PromptEncoding encode(const std::string& text) override {
        for (int id = 0; id < world_.n_examples(); ++id) {
            if (world_.question(id) == text) return world_.prompt_encoding(id);
        }
        return fallback_.encode(text);  // free-text prompts still work
    }

private:
    PlantedWorld world_;
    HashTextEncoder fallback_;
};

class CosineSimilarityTeacher : public SimilarityTeacherBackend {
public:
    double score(const Eigen::Ref<const Vector>& frame_embedding,
                 const PromptEncoding& prompt) override {
        Vector query = prompt.token_embeddings.colwise().mean().transpose();
        const double qn = query.norm();
        const double fn = frame_embedding.norm();
        if (qn < 1e-12 || fn < 1e-12) return 0.0;
        return frame_embedding.dot(query) / (qn * fn);
    }
};

class PlantedQaOracle : public QaOracle {
public:
    explicit PlantedQaOracle(PlantedWorld world) : world_(std::move(world)) {}

    std::string answer(const TaskRecord& task, std::span<const int> subset) override {
        const int id = world_.parse_id(task.video_id);
        const auto& evidence = world_.evidence(id);
        std::set<int> present(subset.begin(), subset.end());
        for (int e : evidence)
            if (!present.count(e)) return "uncertain";
        return world_.answer(id);
    }

private:
    PlantedWorld world_;
};

class PlantedAgent : public AgentBackend {
public:
    explicit PlantedAgent(PlantedWorld world) : world_(std::move(world)) {}

    std::string complete(const AgentRequest& request) override {
        const int id = world_.parse_id(request.video_id);
        const auto& evidence = world_.evidence(id);
        std::set<int> evidence_set(evidence.begin(), evidence.end());
        std::set<int> seen(request.context_indices.begin(), request.context_indices.end());
        seen.insert(request.frame_indices.begin(), request.frame_indices.end());

        int evidence_seen = 0;
        for (int e : evidence)
            if (seen.count(e)) ++evidence_seen;
        const int need_all = static_cast<int>(evidence.size());
        const int need_half = (need_all + 1) / 2;

        const std::uint64_t seed = world_.config().seed;
        json analysis = json::array();
        for (int idx : request.frame_indices) {
            int relevance;
            std::string caption;
            if (evidence_set.count(idx)) {
                relevance = 5;
                caption = "marker evidence at frame " + std::to_string(idx);
            } else {
                relevance = 1 + static_cast<int>(mix_seed(seed, hash_str(request.video_id) ^
                                                                    static_cast<std::uint64_t>(idx)) % 2);
                caption = "background at frame " + std::to_string(idx);
            }
            analysis.push_back(json{{"index", idx}, {"caption", caption}, {"relevance", relevance}});
        }

        json reply;
        if (request.kind == AgentCall::initial) {
            reply["frame_analysis"] = std::move(analysis);
        } else {
            reply["new_frame_analysis"] = std::move(analysis);
            // Occasionally nudge a previously seen background frame between 1
            // and 2; evidence scores are never revised downward.
            json revisions = json::array();
            for (int idx : request.context_indices) {
                if (evidence_set.count(idx)) continue;
                const std::uint64_t h = mix_seed(
                    seed ^ 0x9ec5ULL,
                    hash_str(request.video_id) ^
                        static_cast<std::uint64_t>(idx * 131 + static_cast<int>(seen.size())));
                if (h % 11 == 0 && revisions.size() < 2) {
                    revisions.push_back(json{{"index", idx}, {"relevance", 1 + static_cast<int>(h % 2)}});
                }
            }
            reply["revised_prev_scores"] = std::move(revisions);
        }
        reply["confidence"] = evidence_seen >= need_all ? "high" : "medium";
        reply["answer_attempt"] = evidence_seen >= need_half ? world_.answer(id) : "not sure yet";
        reply["reasoning"] = "matched " + std::to_string(evidence_seen) + " marker frames";
        return reply.dump();
    }

private:
    PlantedWorld world_;
};

}  // namespace

std::shared_ptr<TaskLossOracle> PlantedWorld::task_loss_oracle(double epsilon) const {
    const double eps = epsilon < 0.0 ? data_->config.cost_epsilon : epsilon;
    return std::make_shared<PlantedTaskLoss>(*this, eps);
}

std::shared_ptr<VisualEncoderBackend> PlantedWorld::visual_encoder() const {
    return std::make_shared<PlantedVisualEncoder>(*this);
}

std::shared_ptr<TextEncoderBackend> PlantedWorld::text_encoder() const {
    return std::make_shared<PlantedTextEncoder>(*this);
}

std::shared_ptr<SimilarityTeacherBackend> PlantedWorld::similarity_teacher() const {
    return std::make_shared<CosineSimilarityTeacher>();
}

std::shared_ptr<QaOracle> PlantedWorld::qa_oracle() const {
    return std::make_shared<PlantedQaOracle>(*this);
}

std::shared_ptr<AgentBackend> PlantedWorld::agent() const {
    return std::make_shared<PlantedAgent>(*this);
}

BackendSuite PlantedWorld::suite(int n_verifiers) const {
    BackendSuite s;
    s.visual_encoder = visual_encoder();
    s.text_encoder = text_encoder();
    s.similarity_teacher = similarity_teacher();
    s.task_loss_oracle = task_loss_oracle();
    s.qa_oracle = qa_oracle();
    s.agent = agent();
    for (int i = 0; i < n_verifiers; ++i) s.verifiers.push_back(qa_oracle());
    return s;
}

std::shared_ptr<PlantedWorld> make_planted_world(const PlantedWorldConfig& config) {
    return std::make_shared<PlantedWorld>(config);
}

// ---------------------------------------------------------------------------
// HashTextEncoder

PromptEncoding HashTextEncoder::encode(const std::string& text) {
    std::istringstream iss(text);
    std::vector<std::string> tokens;
    std::string tok;
    while (iss >> tok) tokens.push_back(tok);
    if (tokens.empty()) tokens.push_back("<empty>");
    PromptEncoding p;
    p.prompt_text = text;
    p.token_count = static_cast<int>(tokens.size());
    p.token_embeddings.resize(p.token_count, dim_);
    for (int t = 0; t < p.token_count; ++t) {
        Rng rng(mix_seed(seed_, hash_str(tokens[static_cast<std::size_t>(t)])));
        Vector v = random_unit(rng, dim_);
        p.token_embeddings.row(t) = v.transpose();
    }
    return p;
}

// ---------------------------------------------------------------------------
// HttpQaOracle

HttpQaOracle::HttpQaOracle(std::string base_url, int timeout_ms)
    : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {}

std::string HttpQaOracle::answer(const TaskRecord& task, std::span<const int> subset) {
    if (subset.empty())
        throw BackendError(BackendError::Kind::precondition,
                           "http qa oracle: refusing an empty frame set");
    httplib::Client client(base_url_);
    client.set_connection_timeout(0, timeout_ms_ * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    json body{{"video_id", task.video_id},
              {"question", task.question},
              {"frame_indices", std::vector<int>(subset.begin(), subset.end())}};
    auto res = client.Post("/answer", body.dump(), "application/json");
    if (!res)
        throw BackendError(BackendError::Kind::transport,
                           "http qa oracle: no response from " + base_url_,
                           /*retryable=*/true);
    if (res->status != 200)
        throw BackendError(BackendError::Kind::protocol,
                           "http qa oracle: status " + std::to_string(res->status));
    try {
        return json::parse(res->body).at("answer").get<std::string>();
    } catch (const std::exception& e) {
        throw BackendError(BackendError::Kind::protocol,
                           std::string("http qa oracle: bad payload: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Suite construction from configuration

PlantedWorldConfig planted_world_config_from_json(const json& j) {
    PlantedWorldConfig c;
    c.seed = j.value("seed", static_cast<std::uint64_t>(0));
    c.n_examples = j.value("n_examples", c.n_examples);
    c.grid_size = j.value("grid_size", c.grid_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.text_tokens = j.value("text_tokens", c.text_tokens);
    c.distractor_fraction = j.value("distractor_fraction", c.distractor_fraction);
    c.cost_epsilon = j.value("cost_epsilon", c.cost_epsilon);
    if (j.contains("placement"))
        c.placement = j.at("placement").get<std::string>() == "clustered"
                          ? EvidencePlacement::clustered
                          : EvidencePlacement::scattered;
    if (j.contains("evidence")) {
        const auto& e = j.at("evidence");
        const std::string kind = e.value("kind", "uniform");
        if (kind == "uniform") {
            c.evidence_sizes.kind = EvidenceSizeSpec::Kind::uniform;
            c.evidence_sizes.lo = e.value("lo", c.evidence_sizes.lo);
            c.evidence_sizes.hi = e.value("hi", c.evidence_sizes.hi);
        } else if (kind == "fig_shape") {
            c.evidence_sizes.kind = EvidenceSizeSpec::Kind::fig_shape;
            c.evidence_sizes.median = e.value("median", c.evidence_sizes.median);
            c.evidence_sizes.sigma = e.value("sigma", c.evidence_sizes.sigma);
            c.evidence_sizes.cap = e.value("cap", c.evidence_sizes.cap);
        } else if (kind == "fixed") {
            c.evidence_sizes.kind = EvidenceSizeSpec::Kind::fixed;
            c.evidence_sizes.value = e.value("value", c.evidence_sizes.value);
        } else {
            throw ValidationError("unknown evidence size kind: " + kind);
        }
    }
    return c;
}

namespace {

std::shared_ptr<QaOracle> qa_from_role(const json& role, const std::shared_ptr<PlantedWorld>& world) {
    if (role.is_string() && role.get<std::string>() == "planted") {
        if (!world) throw ValidationError("backend config: planted role without a planted block");
        return world->qa_oracle();
    }
    if (role.is_object() && role.value("kind", "") == "http") {
        std::string url = role.value("base_url", "");
        if (url.empty() && role.contains("base_url_env")) {
            const char* env = std::getenv(role.at("base_url_env").get<std::string>().c_str());
            if (env == nullptr)
                throw ValidationError("backend config: environment variable " +
                                      role.at("base_url_env").get<std::string>() + " is unset");
            url = env;
        }
        if (url.empty()) throw ValidationError("backend config: http role lacks a base URL");
        return std::make_shared<HttpQaOracle>(url, role.value("timeout_ms", 5000));
    }
    throw ValidationError("backend config: unsupported qa role: " + role.dump());
}

}  // namespace

SuiteWithWorld make_backend_suite(const json& config) {
    SuiteWithWorld out;
    if (config.contains("planted")) {
        out.world = make_planted_world(planted_world_config_from_json(config.at("planted")));
        out.suite = out.world->suite();
    }
    if (config.contains("roles")) {
        const auto& roles = config.at("roles");
        if (roles.contains("qa_oracle")) out.suite.qa_oracle = qa_from_role(roles.at("qa_oracle"), out.world);
        if (roles.contains("verifiers")) {
            out.suite.verifiers.clear();
            for (const auto& v : roles.at("verifiers"))
                out.suite.verifiers.push_back(qa_from_role(v, out.world));
        }
    }
    if (!out.suite.visual_encoder && !out.world)
        throw ValidationError("backend config: no usable backends configured");
    return out;
}

SuiteWithWorld load_backend_suite(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw ValidationError("cannot open backend config: " + config_path);
    json j;
    in >> j;
    return make_backend_suite(j);
}

}  // namespace frameoracle::backends

#include "frameoracle/selector_network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace frameoracle::selector {

std::string to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::projectors: return "projectors";
        case ParamGroup::encoder: return "encoder";
        case ParamGroup::rank_head: return "rank_head";
        case ParamGroup::k_head: return "k_head";
    }
    return "projectors";
}

ParamGroup param_group_from_string(const std::string& s) {
    if (s == "projectors") return ParamGroup::projectors;
    if (s == "encoder") return ParamGroup::encoder;
    if (s == "rank_head") return ParamGroup::rank_head;
    if (s == "k_head") return ParamGroup::k_head;
    throw ValidationError("unknown parameter group: " + s);
}

Variant variant_from_string(const std::string& s) {
    if (s == "frames16") return Variant::frames16;
    if (s == "frames64") return Variant::frames64;
    throw ValidationError("unknown variant: " + s + " (expected frames16 or frames64)");
}

std::string to_string(Variant v) { return v == Variant::frames16 ? "frames16" : "frames64"; }

void SelectorConfig::check() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_v < 1 || d_t < 1)
        throw ValidationError("selector config: dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ValidationError("selector config: d_model must be divisible by n_heads");
    if (k_max < 1) throw ValidationError("selector config: k_max must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw ValidationError("selector config: dropout must lie in [0, 1)");
    if (max_frames < 1) throw ValidationError("selector config: max_frames must be >= 1");
}

SelectorConfig variant_config(Variant v, const SelectorConfig& base) {
    SelectorConfig cfg = base;
    if (v == Variant::frames16) {
        cfg.max_frames = 16;
        cfg.k_max = 16;
    } else {
        cfg.max_frames = 64;
        cfg.k_max = 16;  // predicted K is capped at 16 for the 64-frame variant
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Tensor iteration

namespace {

template <typename Params, typename Fn>
void visit_tensors(Params& p, Fn&& fn) {
    fn(ParamGroup::projectors, "projectors.w_visual", p.projectors.w_visual);
    fn(ParamGroup::projectors, "projectors.b_visual", p.projectors.b_visual);
    fn(ParamGroup::projectors, "projectors.w_text", p.projectors.w_text);
    fn(ParamGroup::projectors, "projectors.b_text", p.projectors.b_text);
    fn(ParamGroup::projectors, "projectors.frame_pos", p.projectors.frame_pos);
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        auto& layer = p.encoder[l];
        const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
        auto attn = [&](const std::string& name, auto& a) {
            fn(ParamGroup::encoder, prefix + name + ".wq", a.wq);
            fn(ParamGroup::encoder, prefix + name + ".wk", a.wk);
            fn(ParamGroup::encoder, prefix + name + ".wv", a.wv);
            fn(ParamGroup::encoder, prefix + name + ".wo", a.wo);
            fn(ParamGroup::encoder, prefix + name + ".bq", a.bq);
            fn(ParamGroup::encoder, prefix + name + ".bk", a.bk);
            fn(ParamGroup::encoder, prefix + name + ".bv", a.bv);
            fn(ParamGroup::encoder, prefix + name + ".bo", a.bo);
        };
        attn("self", layer.self_attn);
        attn("cross", layer.cross_attn);
        fn(ParamGroup::encoder, prefix + "ln1_g", layer.ln1_g);
        fn(ParamGroup::encoder, prefix + "ln1_b", layer.ln1_b);
        fn(ParamGroup::encoder, prefix + "ln2_g", layer.ln2_g);
        fn(ParamGroup::encoder, prefix + "ln2_b", layer.ln2_b);
        fn(ParamGroup::encoder, prefix + "ln3_g", layer.ln3_g);
        fn(ParamGroup::encoder, prefix + "ln3_b", layer.ln3_b);
        fn(ParamGroup::encoder, prefix + "ff_w1", layer.ff_w1);
        fn(ParamGroup::encoder, prefix + "ff_b1", layer.ff_b1);
        fn(ParamGroup::encoder, prefix + "ff_w2", layer.ff_w2);
        fn(ParamGroup::encoder, prefix + "ff_b2", layer.ff_b2);
    }
    fn(ParamGroup::encoder, "encoder.ln_f_g", p.ln_f_g);
    fn(ParamGroup::encoder, "encoder.ln_f_b", p.ln_f_b);
    auto head = [&](ParamGroup g, const std::string& name, auto& h) {
        fn(g, name + ".w1", h.w1);
        fn(g, name + ".b1", h.b1);
        fn(g, name + ".w2", h.w2);
        fn(g, name + ".b2", h.b2);
    };
    head(ParamGroup::rank_head, "rank_head", p.rank_head);
    head(ParamGroup::k_head, "k_head", p.k_head);
}

}  // namespace

void for_each_tensor(SelectorParams& p,
                     const std::function<void(ParamGroup, const std::string&, Matrix&)>& fn) {
    visit_tensors(p, fn);
}

void for_each_tensor(const SelectorParams& p,
                     const std::function<void(ParamGroup, const std::string&, const Matrix&)>& fn) {
    visit_tensors(p, fn);
}

void ParamGrads::accumulate(const ParamGrads& other) {
    for (const auto& [name, g] : other.by_name) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            by_name.emplace(name, g);
        else
            it->second += g;
    }
}

void ParamGrads::scale(double s) {
    for (auto& [name, g] : by_name) g *= s;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = std_dev * rng.gaussian();
    return m;
}

Matrix xavier(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return gaussian_matrix(rng, fan_in, fan_out, std_dev);
}

AttentionParams init_attention(Rng& rng, int d) {
    AttentionParams a;
    a.wq = xavier(rng, d, d);
    a.wk = xavier(rng, d, d);
    a.wv = xavier(rng, d, d);
    a.wo = xavier(rng, d, d);
    a.bq = Matrix::Zero(1, d);
    a.bk = Matrix::Zero(1, d);
    a.bv = Matrix::Zero(1, d);
    a.bo = Matrix::Zero(1, d);
    return a;
}

}  // namespace

SelectorParams init_params(const SelectorConfig& config, std::uint64_t seed) {
    config.check();
    Rng rng(mix_seed(seed, 0x5e1ec70f));
    SelectorParams p;
    p.config = config;
    const int d = config.d_model;
    const int d_ff = 4 * d;

    p.projectors.w_visual = xavier(rng, config.d_v, d);
    p.projectors.b_visual = Matrix::Zero(1, d);
    p.projectors.w_text = xavier(rng, config.d_t, d);
    p.projectors.b_text = Matrix::Zero(1, d);
    p.projectors.frame_pos = gaussian_matrix(rng, config.max_frames, d, 0.02);

    p.encoder.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : p.encoder) {
        layer.self_attn = init_attention(rng, d);
        layer.cross_attn = init_attention(rng, d);
        layer.ln1_g = Matrix::Ones(1, d);
        layer.ln1_b = Matrix::Zero(1, d);
        layer.ln2_g = Matrix::Ones(1, d);
        layer.ln2_b = Matrix::Zero(1, d);
        layer.ln3_g = Matrix::Ones(1, d);
        layer.ln3_b = Matrix::Zero(1, d);
        layer.ff_w1 = xavier(rng, d, d_ff);
        layer.ff_b1 = Matrix::Zero(1, d_ff);
        layer.ff_w2 = xavier(rng, d_ff, d);
        layer.ff_b2 = Matrix::Zero(1, d);
    }
    p.ln_f_g = Matrix::Ones(1, d);
    p.ln_f_b = Matrix::Zero(1, d);

    p.rank_head.w1 = xavier(rng, d, d);
    p.rank_head.b1 = Matrix::Zero(1, d);
    p.rank_head.w2 = xavier(rng, d, 1);
    p.rank_head.b2 = Matrix::Zero(1, 1);

    p.k_head.w1 = xavier(rng, d, d);
    p.k_head.b1 = Matrix::Zero(1, d);
    p.k_head.w2 = xavier(rng, d, config.k_max);
    p.k_head.b2 = Matrix::Zero(1, config.k_max);

    return p;
}

SelectorParams set_trainable(SelectorParams params,
                             const std::map<std::string, bool>& group_flags) {
    for (const auto& [name, flag] : group_flags) {
        const ParamGroup g = param_group_from_string(name);  // throws on unknown name
        params.trainable[static_cast<int>(g)] = flag;
    }
    return params;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

using ad::Tape;
using ad::Var;

struct TapedParams {
    std::map<std::string, Var> vars;
    Var at(const std::string& name) const { return vars.at(name); }
};

TapedParams load_params_on_tape(Tape& tape, const SelectorParams& p, bool with_grads) {
    TapedParams tp;
    for_each_tensor(p, [&](ParamGroup g, const std::string& name, const Matrix& m) {
        const bool rg = with_grads && p.is_trainable(g);
        tp.vars.emplace(name, tape.leaf(m, rg));
    });
    return tp;
}

Var maybe_dropout(Tape& t, Var x, const DropoutSpec& spec) {
    if (spec.rate <= 0.0) return x;
    if (spec.rng == nullptr) throw ValidationError("dropout requires an RNG");
    const Matrix& v = t.val(x);
    Matrix mask(v.rows(), v.cols());
    const double keep = 1.0 - spec.rate;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c)
            mask(r, c) = (spec.rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return t.cmul_const(x, std::move(mask));
}

// Multi-head attention; queries from `q_in`, keys/values from `kv_in`.
Var multi_head_attention(Tape& t, Var q_in, Var kv_in, const TapedParams& tp,
                         const std::string& prefix, int n_heads, int d_model) {
    const int d_head = d_model / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
    Var q = t.add_rowvec(t.matmul(q_in, tp.at(prefix + ".wq")), tp.at(prefix + ".bq"));
    Var k = t.add_rowvec(t.matmul(kv_in, tp.at(prefix + ".wk")), tp.at(prefix + ".bk"));
    Var v = t.add_rowvec(t.matmul(kv_in, tp.at(prefix + ".wv")), tp.at(prefix + ".bv"));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = t.col_block(q, h * d_head, d_head);
        Var kh = t.col_block(k, h * d_head, d_head);
        Var vh = t.col_block(v, h * d_head, d_head);
        Var logits = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt);
        Var attn = t.softmax_rows(logits);
        heads.push_back(t.matmul(attn, vh));
    }
    Var merged = t.concat_cols(heads);
    return t.add_rowvec(t.matmul(merged, tp.at(prefix + ".wo")), tp.at(prefix + ".bo"));
}

struct ForwardVars {
    Var scores;    // N x 1
    Var k_logits;  // 1 x k_max
};

// The fusion encoder runs on the frame stream; each layer self-attends over
// frames and cross-attends into the projected text memory. The K head reads
// the mean over frame positions, so its logits depend on pooled frame
// features only.
ForwardVars build_forward(Tape& t, const TapedParams& tp, const SelectorParams& p,
                          const CandidateSet& frames, const PromptEncoding& prompt,
                          const DropoutSpec& dropout) {
    const auto& cfg = p.config;
    const int n = frames.size();

    if (n < 1) throw ValidationError("forward: candidate set is empty");
    if (n > cfg.max_frames)
        throw ValidationError("forward: N=" + std::to_string(n) + " exceeds max_frames=" +
                              std::to_string(cfg.max_frames));
    if (frames.frame_embeddings.cols() != cfg.d_v)
        throw ValidationError("forward: visual width mismatch");
    if (prompt.token_embeddings.cols() != cfg.d_t)
        throw ValidationError("forward: text width mismatch");
    if (prompt.token_embeddings.rows() < 1) throw ValidationError("forward: empty prompt");

    Var frames_in = t.constant(frames.frame_embeddings);
    Var text_in = t.constant(prompt.token_embeddings);

    Var x = t.add_rowvec(t.matmul(frames_in, tp.at("projectors.w_visual")),
                         tp.at("projectors.b_visual"));
    // Learned position embeddings on frame positions only.
    Var pos = t.col_block(t.transpose(tp.at("projectors.frame_pos")), 0, n);
    x = t.add(x, t.transpose(pos));

    Var text_mem = t.add_rowvec(t.matmul(text_in, tp.at("projectors.w_text")),
                                tp.at("projectors.b_text"));

    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        const std::string pre = "encoder.layer" + std::to_string(l) + ".";
        Var h1 = t.layer_norm(x, tp.at(pre + "ln1_g"), tp.at(pre + "ln1_b"));
        Var sa = multi_head_attention(t, h1, h1, tp, pre + "self", cfg.n_heads, cfg.d_model);
        x = t.add(x, maybe_dropout(t, sa, dropout));

        Var h2 = t.layer_norm(x, tp.at(pre + "ln2_g"), tp.at(pre + "ln2_b"));
        Var ca = multi_head_attention(t, h2, text_mem, tp, pre + "cross", cfg.n_heads, cfg.d_model);
        x = t.add(x, maybe_dropout(t, ca, dropout));

        Var h3 = t.layer_norm(x, tp.at(pre + "ln3_g"), tp.at(pre + "ln3_b"));
        Var ff = t.add_rowvec(t.matmul(h3, tp.at(pre + "ff_w1")), tp.at(pre + "ff_b1"));
        ff = t.gelu(ff);
        ff = t.add_rowvec(t.matmul(ff, tp.at(pre + "ff_w2")), tp.at(pre + "ff_b2"));
        x = t.add(x, maybe_dropout(t, ff, dropout));
    }
    x = t.layer_norm(x, tp.at("encoder.ln_f_g"), tp.at("encoder.ln_f_b"));

    Var rank_h = t.gelu(t.add_rowvec(t.matmul(x, tp.at("rank_head.w1")), tp.at("rank_head.b1")));
    Var scores = t.add_rowvec(t.matmul(rank_h, tp.at("rank_head.w2")), tp.at("rank_head.b2"));

    // K head: per-position feature map, then mean over frame positions. The
    // pooled-then-map ordering cannot represent counts of nonlinearly
    // detected positions; mapping first keeps that information while the
    // logits still depend on frame positions only through the mean.
    Var k_h = t.gelu(t.add_rowvec(t.matmul(x, tp.at("k_head.w1")), tp.at("k_head.b1")));
    Var pooled = t.mean_rows(k_h);
    Var k_logits = t.add_rowvec(t.matmul(pooled, tp.at("k_head.w2")), tp.at("k_head.b2"));

    return {scores, k_logits};
}

KDistribution softmax_distribution(const Eigen::RowVectorXd& logits) {
    KDistribution d;
    d.k_max = static_cast<int>(logits.size());
    const double m = logits.maxCoeff();
    Eigen::RowVectorXd e = (logits.array() - m).exp();
    e /= e.sum();
    d.probs.assign(e.data(), e.data() + e.size());
    return d;
}

}  // namespace

ParamGrads ForwardPass::backward(const Vector& d_scores, const Vector& d_k_logits) {
    if (!tape) throw std::logic_error("ForwardPass::backward: tape already consumed");
    std::vector<std::pair<ad::Var, Matrix>> seeds;
    if (d_scores.size() > 0) {
        if (d_scores.size() != static_cast<Eigen::Index>(scores.scores.size()))
            throw ValidationError("backward: d_scores length mismatch");
        seeds.emplace_back(scores_var, Matrix(d_scores));
    }
    if (d_k_logits.size() > 0) {
        if (d_k_logits.size() != k_logits.size())
            throw ValidationError("backward: d_k_logits length mismatch");
        seeds.emplace_back(k_logits_var, Matrix(d_k_logits.transpose()));
    }
    tape->backward(seeds);
    ParamGrads grads;
    for (const auto& [name, var] : param_vars) {
        if (tape->requires_grad(var)) grads.by_name.emplace(name, tape->grad(var));
    }
    tape.reset();
    return grads;
}

ForwardPass forward_training(const SelectorParams& params, const CandidateSet& frames,
                             const PromptEncoding& prompt, const DropoutSpec& spec) {
    ForwardPass pass;
    pass.tape = std::make_unique<ad::Tape>();
    ad::Tape& t = *pass.tape;
    TapedParams tp = load_params_on_tape(t, params, /*with_grads=*/true);
    ForwardVars out = build_forward(t, tp, params, frames, prompt, spec);

    const Matrix& s = t.val(out.scores);
    pass.scores.scores.assign(s.data(), s.data() + s.size());
    const Matrix& kl = t.val(out.k_logits);
    pass.k_logits = kl.row(0).transpose();
    pass.k_distribution = softmax_distribution(kl.row(0));
    pass.scores_var = out.scores;
    pass.k_logits_var = out.k_logits;
    pass.param_vars = tp.vars;

    for (double v : pass.scores.scores)
        if (!std::isfinite(v)) throw ValidationError("forward produced non-finite scores");
    for (double v : pass.k_distribution.probs)
        if (!std::isfinite(v)) throw ValidationError("forward produced non-finite k probs");
    return pass;
}

std::pair<ScoreVector, KDistribution> forward(const SelectorParams& params,
                                              const CandidateSet& frames,
                                              const PromptEncoding& prompt) {
    ad::Tape t;
    TapedParams tp = load_params_on_tape(t, params, /*with_grads=*/false);
    ForwardVars out = build_forward(t, tp, params, frames, prompt, DropoutSpec{});
    const Matrix& s = t.val(out.scores);
    ScoreVector scores;
    scores.scores.assign(s.data(), s.data() + s.size());
    for (double v : scores.scores)
        if (!std::isfinite(v)) throw ValidationError("forward produced non-finite scores");
    return {std::move(scores), softmax_distribution(t.val(out.k_logits).row(0))};
}

bool params_equal(const SelectorParams& a, const SelectorParams& b) {
    if (!(a.config == b.config) || a.trainable != b.trainable) return false;
    bool equal = true;
    std::vector<const Matrix*> ta, tb;
    for_each_tensor(a, [&](ParamGroup, const std::string&, const Matrix& m) { ta.push_back(&m); });
    for_each_tensor(b, [&](ParamGroup, const std::string&, const Matrix& m) { tb.push_back(&m); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols() ||
            std::memcmp(ta[i]->data(), tb[i]->data(),
                        sizeof(double) * static_cast<std::size_t>(ta[i]->size())) != 0) {
            equal = false;
            break;
        }
    }
    return equal;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {
constexpr char kCheckpointMagic[8] = {'F', 'O', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr int kCheckpointVersion = 1;

json config_to_json(const SelectorConfig& c) {
    return json{{"d_model", c.d_model},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"d_v", c.d_v},
                {"d_t", c.d_t},
                {"k_max", c.k_max},
                {"dropout", c.dropout},
                {"max_frames", c.max_frames},
                {"decode_rule", c.decode_rule == KDecodeRule::argmax ? "argmax" : "expectation_round"}};
}

SelectorConfig config_from_json(const json& j) {
    SelectorConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_v = j.at("d_v").get<int>();
    c.d_t = j.at("d_t").get<int>();
    c.k_max = j.at("k_max").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.max_frames = j.at("max_frames").get<int>();
    c.decode_rule = j.at("decode_rule").get<std::string>() == "argmax"
                        ? KDecodeRule::argmax
                        : KDecodeRule::expectation_round;
    return c;
}
}  // namespace

void save_checkpoint(const SelectorParams& params, const std::string& path) {
    json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"] = config_to_json(params.config);
    json flags = json::object();
    for (ParamGroup g : kAllGroups)
        flags[to_string(g)] = params.trainable[static_cast<int>(g)];
    manifest["trainable"] = std::move(flags);
    json tensors = json::array();
    std::uint64_t offset = 0;
    for_each_tensor(params, [&](ParamGroup g, const std::string& name, const Matrix& m) {
        tensors.push_back(json{{"name", name},
                               {"group", to_string(g)},
                               {"rows", m.rows()},
                               {"cols", m.cols()},
                               {"offset", offset}});
        offset += sizeof(double) * static_cast<std::uint64_t>(m.size());
    });
    manifest["tensors"] = std::move(tensors);

    const std::string header = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for_each_tensor(params, [&](ParamGroup, const std::string&, const Matrix& m) {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    });
    if (!out) throw ValidationError("short write while saving checkpoint: " + path);
}

SelectorParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ValidationError("truncated checkpoint header: " + path);
    json manifest = json::parse(header);
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
        throw ValidationError("unsupported checkpoint version in " + path);

    SelectorParams params = init_params(config_from_json(manifest.at("config")), 0);
    for (ParamGroup g : kAllGroups)
        params.trainable[static_cast<int>(g)] =
            manifest.at("trainable").at(to_string(g)).get<bool>();

    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes;
    for (const auto& t : manifest.at("tensors"))
        shapes[t.at("name").get<std::string>()] = {t.at("rows").get<Eigen::Index>(),
                                                   t.at("cols").get<Eigen::Index>()};
    for_each_tensor(params, [&](ParamGroup, const std::string& name, Matrix& m) {
        auto it = shapes.find(name);
        if (it == shapes.end()) throw ValidationError("checkpoint missing tensor: " + name);
        if (it->second.first != m.rows() || it->second.second != m.cols())
            throw ValidationError("checkpoint shape mismatch for tensor: " + name);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    });
    if (!in) throw ValidationError("truncated checkpoint payload: " + path);
    return params;
}

}  // namespace frameoracle::selector

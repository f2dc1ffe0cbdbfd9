#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "frameoracle/autodiff.hpp"
#include "frameoracle/common.hpp"
#include "frameoracle/core_types.hpp"

namespace frameoracle::selector {

enum class ParamGroup : int { projectors = 0, encoder = 1, rank_head = 2, k_head = 3 };
constexpr std::array<ParamGroup, 4> kAllGroups = {ParamGroup::projectors, ParamGroup::encoder,
                                                  ParamGroup::rank_head, ParamGroup::k_head};
std::string to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& s);

enum class KDecodeRule { argmax, expectation_round };

struct SelectorConfig {
    int d_model = 256;
    int n_layers = 4;
    int n_heads = 8;
    int d_v = 32;   // visual embedding width
    int d_t = 32;   // text embedding width
    int k_max = 16;
    double dropout = 0.1;
    int max_frames = 64;  // learned frame-position table size;forward requires N <= max_frames
    KDecodeRule decode_rule = KDecodeRule::argmax;

    void check() const;  // throws ValidationError on bad dimensions

    bool operator==(const SelectorConfig&) const = default;
};

// Variant presets: frames16 keeps k_max = N = 16; frames64 pre-samples 64
// frames and caps the predicted K at 16.
enum class Variant { frames16, frames64 };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
SelectorConfig variant_config(Variant v, const SelectorConfig& base = SelectorConfig{});

struct AttentionParams {
    Matrix wq, wk, wv, wo;  // d_model x d_model
    Matrix bq, bk, bv, bo;  // 1 x d_model
};

struct EncoderLayerParams {
    AttentionParams self_attn;
    AttentionParams cross_attn;  // queries from frames, keys/values from text memory
    Matrix ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;  // 1 x d_model
    Matrix ff_w1, ff_b1, ff_w2, ff_b2;                // d_model x 4d, 1 x 4d, 4d x d_model, 1 x d
};

struct ProjectorParams {
    Matrix w_visual, b_visual;  // d_v x d_model, 1 x d_model
    Matrix w_text, b_text;      // d_t x d_model, 1 x d_model
    Matrix frame_pos;           // max_frames x d_model, added to frame positions
};

struct HeadParams {
    Matrix w1, b1, w2, b2;
};

struct SelectorParams {
    SelectorConfig config;
    ProjectorParams projectors;
    std::vector<EncoderLayerParams> encoder;
    Matrix ln_f_g, ln_f_b;  // final layer norm (encoder group)
    HeadParams rank_head;   // d_model -> d_model -> 1
    HeadParams k_head;      // d_model -> d_model -> k_max
    std::array<bool, 4> trainable = {true, true, true, true};

    bool is_trainable(ParamGroup g) const { return trainable[static_cast<int>(g)]; }
};

// Visits every tensor as (group, fully-qualified name, matrix). Iteration
// order is fixed, so optimizers and checkpoints see a stable layout.
void for_each_tensor(SelectorParams& p,
                     const std::function<void(ParamGroup, const std::string&, Matrix&)>& fn);
void for_each_tensor(const SelectorParams& p,
                     const std::function<void(ParamGroup, const std::string&, const Matrix&)>& fn);

// Gradients keyed by the same fully-qualified tensor names.
struct ParamGrads {
    std::map<std::string, Matrix> by_name;

    void accumulate(const ParamGrads& other);
    void scale(double s);
};

SelectorParams init_params(const SelectorConfig& config, std::uint64_t seed);

// Returns a copy with the given groups' trainable flags updated. Keys must be
// group names; anything else throws ValidationError.
SelectorParams set_trainable(SelectorParams params, const std::map<std::string, bool>& group_flags);

struct DropoutSpec {
    double rate = 0.0;
    Rng* rng = nullptr;  // required when rate > 0
};

// A taped forward pass: outputs plus the handles needed to backpropagate
// per-example loss gradients into the parameters.
struct ForwardPass {
    ScoreVector scores;
    KDistribution k_distribution;
    Vector k_logits;  // pre-softmax, length k_max

    std::unique_ptr<ad::Tape> tape;
    ad::Var scores_var;    // N x 1
    ad::Var k_logits_var;  // 1 x k_max
    std::map<std::string, ad::Var> param_vars;

    // d_scores: length N; d_k_logits: length k_max. Either may be zero-sized
    // to skip that head. Consumes the tape.
    ParamGrads backward(const Vector& d_scores, const Vector& d_k_logits);
};

// Evaluation forward: pure function of (params, inputs), no dropout.
std::pair<ScoreVector, KDistribution> forward(const SelectorParams& params,
                                              const CandidateSet& frames,
                                              const PromptEncoding& prompt);

// Training forward: records the tape; gradients flow into every trainable
// group. Dropout is applied only when spec.rate > 0.
ForwardPass forward_training(const SelectorParams& params, const CandidateSet& frames,
                             const PromptEncoding& prompt, const DropoutSpec& spec = {});

bool params_equal(const SelectorParams& a, const SelectorParams& b);

// Checkpoint file: JSON manifest (format version, config, flags, tensor
// directory) followed by raw little-endian float64 tensor data.
void save_checkpoint(const SelectorParams& params, const std::string& path);
SelectorParams load_checkpoint(const std::string& path);

}  // namespace frameoracle::selector

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "frameoracle/backends.hpp"
#include "frameoracle/core_types.hpp"
#include "frameoracle/selector_network.hpp"

namespace frameoracle::harness {

// Adaptive selection: forward pass, decode K from the K-head distribution
// (clamped to N), take the top-K scored frames, and re-sort them temporally.
SelectionResult select(const selector::SelectorParams& params, const CandidateSet& frames,
                       const PromptEncoding& prompt);

// Fixed-k variant that ignores the K head.
SelectionResult select_topk(const selector::SelectorParams& params, const CandidateSet& frames,
                            const PromptEncoding& prompt, int k);

// n_frames * tokens_per_frame; rejects negative inputs.
double estimate_visual_tokens(double n_frames, double tokens_per_frame);
constexpr double kDefaultTokensPerFrame = 727.75;

struct EvalMode {
    bool adaptive = true;
    int top_k = 0;  // used when !adaptive

    static EvalMode parse(const std::string& text);  // "adaptive" or "topk:<k>"
};

struct EvalReport {
    int n_examples = 0;
    double mean_chosen_k = 0.0;
    double accuracy = 0.0;
    std::optional<double> keyframe_recall;     // only when annotations carry indices
    std::optional<double> keyframe_precision;
    double token_estimate_mean = 0.0;
    double mean_abs_k_error = 0.0;  // |chosen_k - num_selected_frames| where annotated
    int n_backend_failures = 0;
};

json to_json(const EvalReport& r);

struct EvalOptions {
    double tokens_per_frame = kDefaultTokensPerFrame;
    int n_workers = 1;
};

// Runs selection on every example, asks the QA oracle with only the selected
// frames, and aggregates accuracy plus recall/precision against annotated
// keyframes. Backend failures are counted, not fatal.
EvalReport evaluate(const selector::SelectorParams& params,
                    const std::vector<AnnotatedExample>& dataset,
                    const backends::BackendSuite& suite, const EvalMode& mode,
                    const EvalOptions& opts = {});

struct Histogram {
    std::vector<double> bin_edges;  // size bins+1
    std::vector<long> counts;       // size bins

    long total() const;
};

Histogram histogram(const std::vector<double>& values, double bin_width, double origin = 0.0);

struct DatasetStats {
    int n_examples = 0;
    double duration_median = 0.0, duration_mean = 0.0;
    double count_median = 0.0, count_mean = 0.0;
    double count_p25 = 0.0, count_p75 = 0.0, count_p90 = 0.0;
    double fraction_at_most_10 = 0.0;
    Histogram duration_hist;
    Histogram count_hist;
};

// Median/mean/quantiles plus the duration and keyframe-count histograms.
DatasetStats stats(const std::vector<AnnotatedExample>& dataset);

// Emits <name>.csv (bin_start,bin_end,count) and a bar-chart <name>.svg.
void write_histogram_csv(const Histogram& h, const std::string& path);
void write_histogram_svg(const Histogram& h, const std::string& path, const std::string& title);
void write_stats_outputs(const DatasetStats& s, const std::string& out_dir);

// Embedding file: magic "FOEMB001", then u32 n_rows, u32 n_cols, u32 dtype
// (0 = float32, 1 = float64), then row-major payload, all little-endian.
void write_embedding_file(const Matrix& embeddings, const std::string& path);
Matrix read_embedding_file(const std::string& path);

}  // namespace frameoracle::harness

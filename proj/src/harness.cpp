#include "frameoracle/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "frameoracle/objectives.hpp"
#include "frameoracle/pipeline.hpp"

namespace frameoracle::harness {

namespace {

SelectionResult assemble(ScoreVector scores, KDistribution dist, int chosen_k) {
    std::vector<int> selected = objectives::top_k_by_score(scores, chosen_k);
    return make_selection_result(std::move(scores), std::move(dist), chosen_k,
                                 std::move(selected));
}

int decode_k(const KDistribution& dist, selector::KDecodeRule rule, int n) {
    int k;
    if (rule == selector::KDecodeRule::argmax) {
        k = dist.argmax_k();
    } else {
        k = static_cast<int>(std::llround(dist.expectation()));
    }
    return std::clamp(k, 1, std::min(dist.k_max, n));
}

}  // namespace

SelectionResult select(const selector::SelectorParams& params, const CandidateSet& frames,
                       const PromptEncoding& prompt) {
    if (frames.size() < 1) throw ValidationError("select: empty candidate set");
    auto [scores, dist] = selector::forward(params, frames, prompt);
    const int chosen_k = decode_k(dist, params.config.decode_rule, frames.size());
    return assemble(std::move(scores), std::move(dist), chosen_k);
}

SelectionResult select_topk(const selector::SelectorParams& params, const CandidateSet& frames,
                            const PromptEncoding& prompt, int k) {
    if (k < 1 || k > frames.size())
        throw ValidationError("select_topk: k outside [1, N]");
    auto [scores, dist] = selector::forward(params, frames, prompt);
    return assemble(std::move(scores), std::move(dist), k);
}

double estimate_visual_tokens(double n_frames, double tokens_per_frame) {
    if (n_frames < 0.0 || tokens_per_frame < 0.0)
        throw ValidationError("estimate_visual_tokens: negative input");
    return n_frames * tokens_per_frame;
}

EvalMode EvalMode::parse(const std::string& text) {
    if (text == "adaptive") return {true, 0};
    if (text.rfind("topk:", 0) == 0) {
        const int k = std::stoi(text.substr(5));
        if (k < 1) throw ValidationError("eval mode: topk needs k >= 1");
        return {false, k};
    }
    throw ValidationError("eval mode must be 'adaptive' or 'topk:<k>', got: " + text);
}

json to_json(const EvalReport& r) {
    json j{{"n_examples", r.n_examples},
           {"mean_chosen_k", r.mean_chosen_k},
           {"accuracy", r.accuracy},
           {"token_estimate_mean", r.token_estimate_mean},
           {"mean_abs_k_error", r.mean_abs_k_error},
           {"n_backend_failures", r.n_backend_failures}};
    if (r.keyframe_recall) j["keyframe_recall"] = *r.keyframe_recall;
    if (r.keyframe_precision) j["keyframe_precision"] = *r.keyframe_precision;
    return j;
}

EvalReport evaluate(const selector::SelectorParams& params,
                    const std::vector<AnnotatedExample>& dataset,
                    const backends::BackendSuite& suite, const EvalMode& mode,
                    const EvalOptions& opts) {
    if (dataset.empty()) throw ValidationError("evaluate: empty dataset");
    if (!suite.visual_encoder || !suite.text_encoder)
        throw ValidationError("evaluate: visual and text encoders are required");

    struct PerExample {
        bool failed = false;
        bool correct = false;
        int chosen_k = 0;
        double recall = -1.0, precision = -1.0;
        double abs_k_error = -1.0;
    };

    std::vector<PerExample> rows = parallel_map(
        dataset,
        [&](const AnnotatedExample& ex) {
            PerExample row;
            try {
                const CandidateSet frames = suite.visual_encoder->encode(ex.video);
                const PromptEncoding prompt = suite.text_encoder->encode(ex.question);
                const SelectionResult sel =
                    mode.adaptive ? select(params, frames, prompt)
                                  : select_topk(params, frames, prompt, mode.top_k);
                row.chosen_k = sel.chosen_k;
                if (suite.qa_oracle) {
                    const backends::TaskRecord task{ex.video, ex.question, ex.ground_truth_answer};
                    const std::string got = suite.qa_oracle->answer(task, sel.selected_indices);
                    row.correct = mining::normalize_answer(got) ==
                                  mining::normalize_answer(ex.ground_truth_answer);
                }
                if (ex.keyframe_indices && !ex.keyframe_indices->empty()) {
                    const std::set<int> selected(sel.selected_indices.begin(),
                                                 sel.selected_indices.end());
                    int hit = 0;
                    for (int idx : *ex.keyframe_indices)
                        if (selected.count(idx)) ++hit;
                    row.recall = static_cast<double>(hit) /
                                 static_cast<double>(ex.keyframe_indices->size());
                    row.precision = static_cast<double>(hit) /
                                    static_cast<double>(sel.selected_indices.size());
                    row.abs_k_error = std::abs(sel.chosen_k - ex.num_selected_frames);
                }
            } catch (const std::exception&) {
                row.failed = true;
            }
            return row;
        },
        opts.n_workers);

    EvalReport report;
    double k_sum = 0.0, recall_sum = 0.0, prec_sum = 0.0, k_err_sum = 0.0;
    int n_ok = 0, n_correct = 0, n_annotated = 0;
    for (const auto& row : rows) {
        if (row.failed) {
            ++report.n_backend_failures;
            continue;
        }
        ++n_ok;
        k_sum += row.chosen_k;
        if (row.correct) ++n_correct;
        if (row.recall >= 0.0) {
            ++n_annotated;
            recall_sum += row.recall;
            prec_sum += row.precision;
            k_err_sum += row.abs_k_error;
        }
    }
    report.n_examples = n_ok;
    if (n_ok > 0) {
        report.mean_chosen_k = k_sum / n_ok;
        report.accuracy = static_cast<double>(n_correct) / n_ok;
        report.token_estimate_mean =
            estimate_visual_tokens(report.mean_chosen_k, opts.tokens_per_frame);
    }
    if (n_annotated > 0) {
        report.keyframe_recall = recall_sum / n_annotated;
        report.keyframe_precision = prec_sum / n_annotated;
        report.mean_abs_k_error = k_err_sum / n_annotated;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Statistics

long Histogram::total() const {
    long n = 0;
    for (long c : counts) n += c;
    return n;
}

Histogram histogram(const std::vector<double>& values, double bin_width, double origin) {
    if (values.empty()) throw ValidationError("histogram: no values");
    if (!(bin_width > 0.0)) throw ValidationError("histogram: bin width must be positive");
    const double max_v = *std::max_element(values.begin(), values.end());
    const double min_v = *std::min_element(values.begin(), values.end());
    const double start = std::min(origin, std::floor(min_v / bin_width) * bin_width);
    const int bins = std::max(1, static_cast<int>(std::floor((max_v - start) / bin_width)) + 1);
    Histogram h;
    h.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        h.bin_edges[static_cast<std::size_t>(b)] = start + bin_width * b;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        int b = static_cast<int>(std::floor((v - start) / bin_width));
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<std::size_t>(b)] += 1;
    }
    return h;
}

namespace {

double quantile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

DatasetStats stats(const std::vector<AnnotatedExample>& dataset) {
    if (dataset.empty()) throw ValidationError("stats: empty dataset");
    std::vector<double> durations, counts;
    durations.reserve(dataset.size());
    counts.reserve(dataset.size());
    for (const auto& ex : dataset) {
        durations.push_back(ex.duration);
        counts.push_back(static_cast<double>(ex.num_selected_frames));
    }
    std::vector<double> d_sorted = durations, c_sorted = counts;
    std::sort(d_sorted.begin(), d_sorted.end());
    std::sort(c_sorted.begin(), c_sorted.end());

    DatasetStats s;
    s.n_examples = static_cast<int>(dataset.size());
    s.duration_median = quantile(d_sorted, 0.5);
    s.duration_mean = std::accumulate(d_sorted.begin(), d_sorted.end(), 0.0) /
                      static_cast<double>(d_sorted.size());
    s.count_median = quantile(c_sorted, 0.5);
    s.count_mean = std::accumulate(c_sorted.begin(), c_sorted.end(), 0.0) /
                   static_cast<double>(c_sorted.size());
    s.count_p25 = quantile(c_sorted, 0.25);
    s.count_p75 = quantile(c_sorted, 0.75);
    s.count_p90 = quantile(c_sorted, 0.90);
    const auto at_most_10 =
        std::count_if(counts.begin(), counts.end(), [](double c) { return c <= 10.0; });
    s.fraction_at_most_10 =
        static_cast<double>(at_most_10) / static_cast<double>(counts.size());
    s.duration_hist = histogram(durations, 10.0);
    s.count_hist = histogram(counts, 1.0, 1.0);
    return s;
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write histogram csv: " + path);
    out << "bin_start,bin_end,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        out << h.bin_edges[b] << "," << h.bin_edges[b + 1] << "," << h.counts[b] << "\n";
}

void write_histogram_svg(const Histogram& h, const std::string& path, const std::string& title) {
    const int width = 640, height = 400, margin = 48;
    const long max_count = std::max<long>(1, *std::max_element(h.counts.begin(), h.counts.end()));
    const double plot_w = width - 2.0 * margin;
    const double plot_h = height - 2.0 * margin;
    const double bar_w = plot_w / static_cast<double>(h.counts.size());

    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write histogram svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        const double bar_h = plot_h * static_cast<double>(h.counts[b]) /
                             static_cast<double>(max_count);
        const double x = margin + bar_w * static_cast<double>(b);
        const double y = height - margin - bar_h;
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w * 0.9
            << "\" height=\"" << bar_h << "\" fill=\"#4878cf\"/>\n";
    }
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
        << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << margin << "\" y=\"" << height - margin + 20 << "\" font-size=\"12\">"
        << h.bin_edges.front() << "</text>\n";
    out << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 20
        << "\" text-anchor=\"end\" font-size=\"12\">" << h.bin_edges.back() << "</text>\n";
    out << "<text x=\"" << margin - 6 << "\" y=\"" << margin << "\" text-anchor=\"end\" "
        << "font-size=\"12\">" << max_count << "</text>\n";
    out << "</svg>\n";
}

void write_stats_outputs(const DatasetStats& s, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_histogram_csv(s.duration_hist, out_dir + "/duration_hist.csv");
    write_histogram_svg(s.duration_hist, out_dir + "/duration_hist.svg", "Video durations (s)");
    write_histogram_csv(s.count_hist, out_dir + "/keyframe_count_hist.csv");
    write_histogram_svg(s.count_hist, out_dir + "/keyframe_count_hist.svg",
                        "Selected keyframes per example");
    json summary{{"n_examples", s.n_examples},
                 {"duration_median", s.duration_median},
                 {"duration_mean", s.duration_mean},
                 {"count_median", s.count_median},
                 {"count_mean", s.count_mean},
                 {"count_p25", s.count_p25},
                 {"count_p75", s.count_p75},
                 {"count_p90", s.count_p90},
                 {"fraction_at_most_10", s.fraction_at_most_10}};
    std::ofstream out(out_dir + "/stats.json");
    out << summary.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Embedding file I/O

namespace {
constexpr char kEmbeddingMagic[8] = {'F', 'O', 'E', 'M', 'B', '0', '0', '1'};
}

void write_embedding_file(const Matrix& embeddings, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write embedding file: " + path);
    out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
    const std::uint32_t n = static_cast<std::uint32_t>(embeddings.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(embeddings.cols());
    const std::uint32_t dtype = 1;  // float64
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(&dtype), sizeof(dtype));
    // Row-major payload regardless of Eigen's internal layout.
    for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
        for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
            const double v = embeddings(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
}

Matrix read_embedding_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open embedding file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0)
        throw ValidationError("not an embedding file: " + path);
    std::uint32_t n = 0, d = 0, dtype = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    in.read(reinterpret_cast<char*>(&dtype), sizeof(dtype));
    Matrix m(n, d);
    if (dtype == 1) {
        for (std::uint32_t r = 0; r < n; ++r)
            for (std::uint32_t c = 0; c < d; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                m(r, c) = v;
            }
    } else if (dtype == 0) {
        for (std::uint32_t r = 0; r < n; ++r)
            for (std::uint32_t c = 0; c < d; ++c) {
                float v;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                m(r, c) = static_cast<double>(v);
            }
    } else {
        throw ValidationError("embedding file: unknown dtype " + std::to_string(dtype));
    }
    if (!in) throw ValidationError("truncated embedding file: " + path);
    return m;
}

}  // namespace frameoracle::harness

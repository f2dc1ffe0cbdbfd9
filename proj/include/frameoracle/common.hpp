#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace frameoracle {

// Derives an independent stream seed from (base, tag) via splitmix64 mixing.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_str(const std::string& s) {
    // FNV-1a 64-bit
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG wrapper. std::normal_distribution is not portable across
// standard libraries, so gaussians go through an explicit Box-Muller.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() {
        // 53-bit uniform in [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform();  // avoid log(0)
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * M_PI * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Thrown for malformed user-facing inputs (datasets, configs, CLI values).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Typed failure surfaced by a backend adapter.
class BackendError : public std::runtime_error {
public:
    enum class Kind { precondition, transport, protocol };

    BackendError(Kind kind, const std::string& msg, bool retryable = false, int attempts = 1)
        : std::runtime_error(msg), kind(kind), retryable(retryable), attempts(attempts) {}

    Kind kind;
    bool retryable;
    int attempts;
};

// Applies fn to every item, optionally on a bounded worker pool. Results are
// collected by input index, so the output order never depends on scheduling.
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, Fn&& fn, int n_workers = 1)
    -> std::vector<decltype(fn(items[0]))> {
    using Out = decltype(fn(items[0]));
    std::vector<Out> out(items.size());
    if (items.empty()) return out;
    n_workers = std::max(1, std::min<int>(n_workers, static_cast<int>(items.size())));
    if (n_workers == 1) {
        for (std::size_t i = 0; i < items.size(); ++i) out[i] = fn(items[i]);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = static_cast<std::size_t>(w); i < items.size();
                     i += static_cast<std::size_t>(n_workers)) {
                    out[i] = fn(items[i]);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace frameoracle

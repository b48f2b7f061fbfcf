// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mufi {

// ----------------------------- error taxonomy -----------------------------
// CLI exit codes map onto these: ConfigError -> 2, DataError/FormatError/
// InputError -> 3, NumericError -> 4.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

namespace detail {
inline std::string cat(std::initializer_list<std::string_view> parts) {
    std::string out;
    for (auto p : parts) out.append(p);
    return out;
}
}  // namespace detail

// ----------------------------- hashing ------------------------------------

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return fnv1a64(&v, sizeof(v), h);
}

// Named sub-seed derivation: every stage draws its randomness from the run
// seed plus a label, so stages are independently reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(&master, sizeof(master));
    h = fnv1a64(tag.data(), tag.size(), h);
    h = fnv1a64(&index, sizeof(index), h);
    return h;
}

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for hashing: " + path);
    std::uint64_t h = kFnvOffset;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

// ----------------------------- rng ----------------------------------------
// splitmix64 core. Self-contained so streams are bit-identical across
// standard library implementations; std distributions are not pinned by the
// standard.

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1) with 53-bit resolution
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the spare value is cached so draws stay cheap.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(), u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ----------------------------- thread pool --------------------------------
// A fixed pool shared process-wide. parallel_for splits [0,n) into chunks;
// each chunk writes disjoint outputs, so results do not depend on the thread
// count. set_max_threads(1) disables fan-out entirely.

class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    static void set_max_threads(int n) { instance().max_threads_.store(n < 1 ? 1 : n); }
    static int max_threads() { return instance().max_threads_.load(); }

    // fn(begin, end) over disjoint chunks of [0, n).
    void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
        const int threads = max_threads();
        if (n <= 0) return;
        if (threads <= 1 || n < 2) {
            fn(0, n);
            return;
        }
        ensure_workers(threads - 1);
        const int chunks = std::min<std::int64_t>(threads, n);
        const std::int64_t step = (n + chunks - 1) / chunks;
        std::atomic<int> remaining{0};
        {
            std::lock_guard<std::mutex> lock(mu_);
            for (int c = 1; c < chunks; ++c) {
                const std::int64_t b = c * step;
                const std::int64_t e = std::min<std::int64_t>(n, b + step);
                if (b >= e) continue;
                remaining.fetch_add(1);
                jobs_.push_back([&fn, b, e, &remaining] {
                    fn(b, e);
                    remaining.fetch_sub(1);
                });
            }
        }
        cv_.notify_all();
        fn(0, std::min<std::int64_t>(step, n));
        while (remaining.load() != 0) std::this_thread::yield();
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

  private:
    ThreadPool() = default;

    void ensure_workers(int n) {
        std::lock_guard<std::mutex> lock(mu_);
        while (static_cast<int>(workers_.size()) < n) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [this] { return stop_ || !jobs_.empty(); });
                if (stop_ && jobs_.empty()) return;
                job = std::move(jobs_.back());
                jobs_.pop_back();
            }
            job();
        }
    }

    std::atomic<int> max_threads_{1};
    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::thread> workers_;
    std::vector<std::function<void()>> jobs_;
    bool stop_ = false;
};

// ----------------------------- binary io ----------------------------------
// Little-endian host assumed (checked by a magic roundtrip in load paths).

class BinaryWriter {
  public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot open for writing: " + path);
        path_ = path;
    }

    void magic(const char m[8]) { out_.write(m, 8); }
    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
    void i64(std::int64_t v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }

    void i64_vec(const std::vector<std::int64_t>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(std::int64_t));
    }

    void close() {
        out_.close();
        if (!out_) throw DataError("write failed: " + path_);
    }

  private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
  public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("cannot open for reading: " + path);
    }

    void expect_magic(const char m[8]) {
        char got[8];
        raw(got, 8);
        if (std::memcmp(got, m, 8) != 0) {
            throw FormatError("bad file magic in " + path_ + ": expected '" + std::string(m, 8) +
                              "', got '" + std::string(got, 8) + "'");
        }
    }

    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof(v));
        return v;
    }

    std::string str() {
        std::uint64_t n = u64();
        check_len(n);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    std::vector<double> f64_vec() {
        std::uint64_t n = u64();
        check_len(n * sizeof(double));
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }

    std::vector<std::int64_t> i64_vec() {
        std::uint64_t n = u64();
        check_len(n * sizeof(std::int64_t));
        std::vector<std::int64_t> v(n);
        raw(v.data(), n * sizeof(std::int64_t));
        return v;
    }

  private:
    void check_len(std::uint64_t n) {
        if (n > (1ull << 34)) throw FormatError("suspicious block length in " + path_);
    }
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("truncated file: " + path_);
    }
    std::ifstream in_;
    std::string path_;
};

// ----------------------------- formatting ---------------------------------

inline std::string fmt_f(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return std::string(buf);
}

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

}  // namespace mufi

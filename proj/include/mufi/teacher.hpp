// SPDX-License-Identifier: Apache-2.0
//
// Frozen per-facet expert classifiers. A teacher is a linear softmax model on
// globally pooled observation features, trained on its own facet's latent
// labels and never updated afterwards. Teacher predictions feed the
// inter-facet supervision only.
#pragma once

#include <string>
#include <vector>

#include "mufi/common.hpp"
#include "mufi/logreg.hpp"
#include "mufi/synth.hpp"

namespace mufi {

// Global average pool over T,H,W -> one value per channel.
inline std::vector<double> pooled_features(const Tensor& observation, int channels) {
    const Index numel = observation.numel();
    const Index positions = numel / channels;
    std::vector<double> pooled(static_cast<std::size_t>(channels), 0.0);
    auto v = observation.value();
    for (Index p = 0; p < positions; ++p)
        for (int c = 0; c < channels; ++c)
            pooled[static_cast<std::size_t>(c)] += v[static_cast<std::size_t>(p * channels + c)];
    const double inv = 1.0 / static_cast<double>(positions);
    for (double& x : pooled) x *= inv;
    return pooled;
}

struct Teacher {
    int facet_id = 0;
    LogRegModel clf;
    bool frozen = false;

    std::vector<double> predict(const Tensor& observation, int channels) const {
        if (!frozen) throw DataError("teacher " + std::to_string(facet_id) + " is not frozen");
        return clf.predict_proba(pooled_features(observation, channels));
    }
};

struct TeacherTrainResult {
    Teacher teacher;
    bool converged = false;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
};

// Trains facet m's teacher on that facet's train split with privileged latent
// labels (these stand in for classifiers pre-trained on each source dataset).
inline TeacherTrainResult train_teacher(const World& world, const Splits& splits, int facet,
                                        LogRegOptions opt = {}) {
    const auto& ds = world.datasets.at(static_cast<std::size_t>(facet));
    const auto& ids = splits.facet(facet).train;
    if (ids.empty()) throw DataError("teacher training: empty split for facet " +
                                     std::to_string(facet));
    const int C = world.spec.channels;
    const int K = world.spec.classes_per_facet[static_cast<std::size_t>(facet)];
    std::vector<double> X;
    X.reserve(ids.size() * static_cast<std::size_t>(C));
    std::vector<int> y;
    y.reserve(ids.size());
    for (int idx : ids) {
        const FacetSample& s = ds[static_cast<std::size_t>(idx)];
        const auto f = pooled_features(s.observation, C);
        X.insert(X.end(), f.begin(), f.end());
        y.push_back(s.latent_labels[static_cast<std::size_t>(facet)]);
    }
    TeacherTrainResult result;
    result.teacher.facet_id = facet;
    result.teacher.clf = fit_logreg(X, y, static_cast<int>(ids.size()), C, K, opt);
    result.teacher.frozen = true;
    result.converged = result.teacher.clf.converged;
    result.final_loss = result.teacher.clf.final_loss;
    int hits = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::span<const double> x(X.data() + i * static_cast<std::size_t>(C),
                                  static_cast<std::size_t>(C));
        if (result.teacher.clf.predict(x) == y[i]) ++hits;
    }
    result.train_accuracy = static_cast<double>(hits) / static_cast<double>(ids.size());
    return result;
}

inline std::vector<Teacher> train_all_teachers(const World& world, const Splits& splits,
                                               LogRegOptions opt = {}) {
    std::vector<Teacher> teachers;
    teachers.reserve(static_cast<std::size_t>(world.n_facets()));
    for (int n = 0; n < world.n_facets(); ++n)
        teachers.push_back(train_teacher(world, splits, n, opt).teacher);
    return teachers;
}

inline std::uint64_t teachers_hash(const std::vector<Teacher>& teachers) {
    std::uint64_t h = kFnvOffset;
    for (const Teacher& t : teachers) {
        h = hash_combine(h, static_cast<std::uint64_t>(t.facet_id));
        h = fnv1a64(t.clf.weights.data(), t.clf.weights.size() * sizeof(double), h);
        h = fnv1a64(t.clf.bias.data(), t.clf.bias.size() * sizeof(double), h);
    }
    return h;
}

// ----------------------------- prediction cache -----------------------------

// Teachers are frozen, so their per-sample predictions are computed once.
// cache[facet][sample_index][teacher] is a probability vector over the
// teacher's classes, renormalized on construction to absorb any rounding.
class TeacherCache {
  public:
    TeacherCache() = default;

    TeacherCache(const World& world, const std::vector<Teacher>& teachers) {
        const int N = world.n_facets();
        if (static_cast<int>(teachers.size()) != N)
            throw DataError("teacher cache: expected " + std::to_string(N) + " teachers, got " +
                            std::to_string(teachers.size()));
        cache_.resize(static_cast<std::size_t>(N));
        for (int n = 0; n < N; ++n) {
            const auto& ds = world.datasets[static_cast<std::size_t>(n)];
            auto& per_sample = cache_[static_cast<std::size_t>(n)];
            per_sample.resize(ds.size());
            ThreadPool::instance().parallel_for(
                static_cast<std::int64_t>(ds.size()), [&](std::int64_t i0, std::int64_t i1) {
                    for (std::int64_t i = i0; i < i1; ++i) {
                        auto& row = per_sample[static_cast<std::size_t>(i)];
                        row.resize(static_cast<std::size_t>(N));
                        for (int m = 0; m < N; ++m) {
                            auto p = teachers[static_cast<std::size_t>(m)].predict(
                                ds[static_cast<std::size_t>(i)].observation,
                                world.spec.channels);
                            double z = 0.0;
                            for (double v : p) z += v;
                            for (double& v : p) v /= z;
                            row[static_cast<std::size_t>(m)] = std::move(p);
                        }
                    }
                });
        }
    }

    bool empty() const { return cache_.empty(); }

    // p^m(.|v) for sample idx of facet's dataset.
    const std::vector<double>& probs(int facet, int sample_idx, int teacher) const {
        if (cache_.empty()) throw DataError("teacher cache is empty");
        return cache_.at(static_cast<std::size_t>(facet))
            .at(static_cast<std::size_t>(sample_idx))
            .at(static_cast<std::size_t>(teacher));
    }

  private:
    std::vector<std::vector<std::vector<std::vector<double>>>> cache_;
};

// ----------------------------- serialization --------------------------------

constexpr char kTeacherMagic[9] = "MUFITCH1";

inline void save_teachers(const std::vector<Teacher>& teachers, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kTeacherMagic);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(teachers.size()));
    for (const Teacher& t : teachers) {
        w.u32(static_cast<std::uint32_t>(t.facet_id));
        w.u32(static_cast<std::uint32_t>(t.clf.n_features));
        w.u32(static_cast<std::uint32_t>(t.clf.n_classes));
        w.f64_vec(t.clf.weights);
        w.f64_vec(t.clf.bias);
    }
    w.close();
}

inline std::vector<Teacher> load_teachers(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kTeacherMagic);
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw FormatError("teacher file " + path + ": unsupported version " +
                          std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<Teacher> teachers(count);
    for (Teacher& t : teachers) {
        t.facet_id = static_cast<int>(r.u32());
        t.clf.n_features = static_cast<int>(r.u32());
        t.clf.n_classes = static_cast<int>(r.u32());
        t.clf.weights = r.f64_vec();
        t.clf.bias = r.f64_vec();
        t.frozen = true;
        if (t.clf.weights.size() !=
                static_cast<std::size_t>(t.clf.n_features) *
                    static_cast<std::size_t>(t.clf.n_classes) ||
            t.clf.bias.size() != static_cast<std::size_t>(t.clf.n_classes))
            throw FormatError("teacher file " + path + ": inconsistent block sizes");
    }
    return teachers;
}

}  // namespace mufi

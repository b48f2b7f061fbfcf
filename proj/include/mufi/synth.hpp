// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-facet world. Each facet owns a spatial sub-region of the
// observation grid and one channel; a sample plants, for every facet, a
// class-dependent intensity into that facet's region, then adds Gaussian
// noise. Every sample therefore carries latent labels for all facets while
// exposing only its source facet's label, mirroring a multi-dataset corpus
// where each dataset annotates one aspect.
#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "mufi/common.hpp"
#include "mufi/semspace.hpp"
#include "mufi/tensor.hpp"

namespace mufi {

struct WorldSpec {
    int n_facets = 6;
    std::vector<int> classes_per_facet;  // default: 8 each
    std::vector<int> teacher_only;       // 0/1 per facet; default: last 2 are 1
    int grid_t = 4, grid_h = 6, grid_w = 6, channels = 8;
    int region_t = 4, region_h = 2, region_w = 2;
    double noise_sigma = 0.1;
    int samples_per_facet = 500;
    std::uint64_t seed = 1;

    void finalize() {
        if (classes_per_facet.empty())
            classes_per_facet.assign(static_cast<std::size_t>(n_facets), 8);
        if (teacher_only.empty()) {
            teacher_only.assign(static_cast<std::size_t>(n_facets), 0);
            for (int n = std::max(0, n_facets - 2); n < n_facets; ++n)
                teacher_only[static_cast<std::size_t>(n)] = 1;
        }
    }

    void validate() const {
        if (n_facets < 1) throw InputError("world spec: need at least one facet");
        if (static_cast<int>(classes_per_facet.size()) != n_facets ||
            static_cast<int>(teacher_only.size()) != n_facets)
            throw InputError("world spec: per-facet lists must match n_facets");
        for (int k : classes_per_facet)
            if (k < 1) throw InputError("world spec: facet needs at least one class");
        if (grid_t < 1 || grid_h < 1 || grid_w < 1 || channels < 1)
            throw InputError("world spec: grid extents must be positive");
        if (region_t < 1 || region_h < 1 || region_w < 1)
            throw InputError("world spec: region extents must be positive");
        if (region_t > grid_t || region_h > grid_h || region_w > grid_w)
            throw InputError("world spec: region packing infeasible, region " +
                             std::to_string(region_t) + "x" + std::to_string(region_h) + "x" +
                             std::to_string(region_w) + " exceeds grid");
        if (noise_sigma < 0.0) throw InputError("world spec: negative noise sigma");
        if (samples_per_facet < 1) throw InputError("world spec: samples_per_facet must be >= 1");
        bool any_intra = false;
        for (int f : teacher_only) any_intra = any_intra || (f == 0);
        if (!any_intra) throw InputError("world spec: every facet is teacher-only");
    }

    int grid_positions() const { return grid_t * grid_h * grid_w; }
    int grid_numel() const { return grid_positions() * channels; }

    std::vector<int> intra_facets() const {
        std::vector<int> out;
        for (int n = 0; n < n_facets; ++n)
            if (!teacher_only[static_cast<std::size_t>(n)]) out.push_back(n);
        return out;
    }

    std::uint64_t content_hash() const {
        std::uint64_t h = kFnvOffset;
        h = hash_combine(h, static_cast<std::uint64_t>(n_facets));
        for (int k : classes_per_facet) h = hash_combine(h, static_cast<std::uint64_t>(k));
        for (int f : teacher_only) h = hash_combine(h, static_cast<std::uint64_t>(f));
        for (int v : {grid_t, grid_h, grid_w, channels, region_t, region_h, region_w,
                      samples_per_facet})
            h = hash_combine(h, static_cast<std::uint64_t>(v));
        h = fnv1a64(&noise_sigma, sizeof(noise_sigma), h);
        h = hash_combine(h, seed);
        return h;
    }
};

struct Region {
    int t0 = 0, h0 = 0, w0 = 0;
};

struct FacetSample {
    std::uint64_t id = 0;
    int source_facet = 0;
    std::vector<int> latent_labels;  // one per facet
    int observed_label = 0;          // latent_labels[source_facet]
    Tensor observation;              // [T,H,W,C], requires_grad=false
};

// Per-facet class intensity planted into the facet's region/channel. Levels
// are spaced widely enough that pooled features separate cleanly.
inline double class_level(int class_id) { return 0.5 * (class_id + 1); }

inline std::string facet_word(int n) {
    static const char* kNames[] = {"action", "event", "interaction", "sport", "object", "scene"};
    if (n < 6) return kNames[n];
    return "facet" + std::to_string(n);
}

inline std::string class_word(int facet, int class_id) {
    static const char* kVocab[] = {"cake",   "river",  "zebra",  "piano", "storm",
                                   "garden", "rocket", "coral",  "violin", "desert"};
    return kVocab[(3 * facet + class_id) % 10];
}

class World {
  public:
    WorldSpec spec;
    std::vector<LabelText> labels;                   // all facets, class-ordered
    std::vector<Region> regions;                     // per facet
    std::vector<std::vector<FacetSample>> datasets;  // per facet

    int n_facets() const { return spec.n_facets; }

    const FacetSample& sample(int facet, int idx) const {
        return datasets.at(static_cast<std::size_t>(facet)).at(static_cast<std::size_t>(idx));
    }

    int facet_channel(int facet) const { return facet % spec.channels; }

    std::uint64_t content_hash() const {
        std::uint64_t h = spec.content_hash();
        for (const auto& ds : datasets)
            for (const auto& s : ds) {
                h = hash_combine(h, s.id);
                for (int l : s.latent_labels) h = hash_combine(h, static_cast<std::uint64_t>(l));
                h = s.observation.content_hash(h);
            }
        return h;
    }
};

namespace detail {

inline std::vector<Region> pack_regions(const WorldSpec& spec) {
    const int nt = spec.grid_t / spec.region_t;
    const int nh = spec.grid_h / spec.region_h;
    const int nw = spec.grid_w / spec.region_w;
    const int blocks = nt * nh * nw;
    if (blocks < 1) throw InputError("world spec: region packing infeasible");
    std::vector<Region> regions;
    regions.reserve(static_cast<std::size_t>(spec.n_facets));
    // row-major block order; wraps when facets outnumber blocks (regions stay
    // disjoint whenever enough blocks exist)
    for (int n = 0; n < spec.n_facets; ++n) {
        const int b = n % blocks;
        const int bt = b / (nh * nw);
        const int bh = (b / nw) % nh;
        const int bw = b % nw;
        regions.push_back({bt * spec.region_t, bh * spec.region_h, bw * spec.region_w});
    }
    return regions;
}

}  // namespace detail

inline std::vector<LabelText> world_labels(const WorldSpec& spec) {
    std::vector<LabelText> labels;
    for (int n = 0; n < spec.n_facets; ++n)
        for (int c = 0; c < spec.classes_per_facet[static_cast<std::size_t>(n)]; ++c)
            labels.push_back({n, c, facet_word(n) + " " + class_word(n, c)});
    return labels;
}

inline World generate_world(WorldSpec spec) {
    spec.finalize();
    spec.validate();

    World world;
    world.spec = spec;
    world.labels = world_labels(spec);
    world.regions = detail::pack_regions(spec);

    const int T = spec.grid_t, H = spec.grid_h, W = spec.grid_w, C = spec.channels;
    world.datasets.resize(static_cast<std::size_t>(spec.n_facets));
    for (int n = 0; n < spec.n_facets; ++n) {
        auto& ds = world.datasets[static_cast<std::size_t>(n)];
        ds.resize(static_cast<std::size_t>(spec.samples_per_facet));
        // samples are independent given their derived seed, so generation can
        // fan out without changing results
        ThreadPool::instance().parallel_for(
            spec.samples_per_facet, [&](std::int64_t i0, std::int64_t i1) {
                for (std::int64_t i = i0; i < i1; ++i) {
                    const std::uint64_t global_index =
                        static_cast<std::uint64_t>(n) *
                            static_cast<std::uint64_t>(spec.samples_per_facet) +
                        static_cast<std::uint64_t>(i);
                    Rng rng(derive_seed(spec.seed, "sample", global_index));
                    FacetSample& s = ds[static_cast<std::size_t>(i)];
                    s.id = global_index;
                    s.source_facet = n;
                    s.latent_labels.resize(static_cast<std::size_t>(spec.n_facets));
                    for (int m = 0; m < spec.n_facets; ++m)
                        s.latent_labels[static_cast<std::size_t>(m)] = static_cast<int>(
                            rng.uniform_int(static_cast<std::uint64_t>(
                                spec.classes_per_facet[static_cast<std::size_t>(m)])));
                    s.observed_label = s.latent_labels[static_cast<std::size_t>(n)];

                    std::vector<double> obs(static_cast<std::size_t>(spec.grid_numel()), 0.0);
                    for (int m = 0; m < spec.n_facets; ++m) {
                        const Region& r = world.regions[static_cast<std::size_t>(m)];
                        const int ch = m % C;
                        const double level =
                            class_level(s.latent_labels[static_cast<std::size_t>(m)]);
                        for (int t = r.t0; t < r.t0 + spec.region_t; ++t)
                            for (int h = r.h0; h < r.h0 + spec.region_h; ++h)
                                for (int w = r.w0; w < r.w0 + spec.region_w; ++w)
                                    obs[static_cast<std::size_t>(((t * H + h) * W + w) * C + ch)] +=
                                        level;
                    }
                    if (spec.noise_sigma > 0.0)
                        for (double& v : obs) v += rng.normal(0.0, spec.noise_sigma);
                    s.observation = Tensor(Shape{T, H, W, C}, std::move(obs));
                }
            });
    }
    return world;
}

// ----------------------------- splits ---------------------------------------

// Disjoint-by-id splits within each facet's dataset: 60% student training,
// 20% probe training, 20% probe validation.
struct ProbeSplit {
    std::vector<int> train, probe_train, probe_val;  // indices into the facet dataset
};

struct Splits {
    std::vector<ProbeSplit> per_facet;

    const ProbeSplit& facet(int n) const { return per_facet.at(static_cast<std::size_t>(n)); }
};

inline Splits make_splits(const World& world) {
    Splits splits;
    for (int n = 0; n < world.n_facets(); ++n) {
        const int count = static_cast<int>(world.datasets[static_cast<std::size_t>(n)].size());
        ProbeSplit ps;
        const int train_end = count * 6 / 10;
        const int ptrain_end = count * 8 / 10;
        for (int i = 0; i < count; ++i) {
            if (i < train_end)
                ps.train.push_back(i);
            else if (i < ptrain_end)
                ps.probe_train.push_back(i);
            else
                ps.probe_val.push_back(i);
        }
        splits.per_facet.push_back(std::move(ps));
    }
    return splits;
}

// ----------------------------- serialization --------------------------------

constexpr char kDatasetMagic[9] = "MUFIDAT1";

inline void save_world(const World& world, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kDatasetMagic);
    w.u32(1);
    const WorldSpec& s = world.spec;
    w.u32(static_cast<std::uint32_t>(s.n_facets));
    for (int k : s.classes_per_facet) w.u32(static_cast<std::uint32_t>(k));
    for (int f : s.teacher_only) w.u32(static_cast<std::uint32_t>(f));
    w.u32(static_cast<std::uint32_t>(s.grid_t));
    w.u32(static_cast<std::uint32_t>(s.grid_h));
    w.u32(static_cast<std::uint32_t>(s.grid_w));
    w.u32(static_cast<std::uint32_t>(s.channels));
    w.u32(static_cast<std::uint32_t>(s.region_t));
    w.u32(static_cast<std::uint32_t>(s.region_h));
    w.u32(static_cast<std::uint32_t>(s.region_w));
    w.f64(s.noise_sigma);
    w.u32(static_cast<std::uint32_t>(s.samples_per_facet));
    w.u64(s.seed);
    for (const Region& r : world.regions) {
        w.u32(static_cast<std::uint32_t>(r.t0));
        w.u32(static_cast<std::uint32_t>(r.h0));
        w.u32(static_cast<std::uint32_t>(r.w0));
    }
    for (const auto& ds : world.datasets) {
        w.u64(ds.size());
        for (const FacetSample& smp : ds) {
            w.u64(smp.id);
            w.u32(static_cast<std::uint32_t>(smp.source_facet));
            for (int l : smp.latent_labels) w.u32(static_cast<std::uint32_t>(l));
            w.f64_vec(std::vector<double>(smp.observation.value().begin(),
                                          smp.observation.value().end()));
        }
    }
    w.close();
}

inline World load_world(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw FormatError("dataset file " + path + ": unsupported version " +
                          std::to_string(version));
    World world;
    WorldSpec& s = world.spec;
    s.n_facets = static_cast<int>(r.u32());
    s.classes_per_facet.resize(static_cast<std::size_t>(s.n_facets));
    for (int& k : s.classes_per_facet) k = static_cast<int>(r.u32());
    s.teacher_only.resize(static_cast<std::size_t>(s.n_facets));
    for (int& f : s.teacher_only) f = static_cast<int>(r.u32());
    s.grid_t = static_cast<int>(r.u32());
    s.grid_h = static_cast<int>(r.u32());
    s.grid_w = static_cast<int>(r.u32());
    s.channels = static_cast<int>(r.u32());
    s.region_t = static_cast<int>(r.u32());
    s.region_h = static_cast<int>(r.u32());
    s.region_w = static_cast<int>(r.u32());
    s.noise_sigma = r.f64();
    s.samples_per_facet = static_cast<int>(r.u32());
    s.seed = r.u64();
    s.validate();
    world.labels = world_labels(s);
    world.regions.resize(static_cast<std::size_t>(s.n_facets));
    for (Region& reg : world.regions) {
        reg.t0 = static_cast<int>(r.u32());
        reg.h0 = static_cast<int>(r.u32());
        reg.w0 = static_cast<int>(r.u32());
    }
    world.datasets.resize(static_cast<std::size_t>(s.n_facets));
    for (int n = 0; n < s.n_facets; ++n) {
        const std::uint64_t count = r.u64();
        auto& ds = world.datasets[static_cast<std::size_t>(n)];
        ds.resize(count);
        for (FacetSample& smp : ds) {
            smp.id = r.u64();
            smp.source_facet = static_cast<int>(r.u32());
            smp.latent_labels.resize(static_cast<std::size_t>(s.n_facets));
            for (int& l : smp.latent_labels) l = static_cast<int>(r.u32());
            smp.observed_label = smp.latent_labels[static_cast<std::size_t>(smp.source_facet)];
            auto data = r.f64_vec();
            if (static_cast<int>(data.size()) != s.grid_numel())
                throw FormatError("dataset file " + path + ": observation size mismatch");
            smp.observation =
                Tensor(Shape{s.grid_t, s.grid_h, s.grid_w, s.channels}, std::move(data));
        }
    }
    return world;
}

// Audit manifest: one row per sample with the full latent label vector.
inline void write_world_manifest(const World& world, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << "sample_id,source_facet";
    for (int n = 0; n < world.n_facets(); ++n) out << ",latent_" << n;
    out << "\n";
    for (const auto& ds : world.datasets)
        for (const FacetSample& s : ds) {
            out << s.id << "," << s.source_facet;
            for (int l : s.latent_labels) out << "," << l;
            out << "\n";
        }
}

}  // namespace mufi

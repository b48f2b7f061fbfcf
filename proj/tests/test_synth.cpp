// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>

#include "mufi/teacher.hpp"

using namespace mufi;

namespace {

WorldSpec small_spec() {
    WorldSpec spec;
    spec.n_facets = 4;
    spec.classes_per_facet = {4, 4, 4, 4};
    spec.teacher_only = {0, 0, 0, 1};
    spec.samples_per_facet = 120;
    spec.noise_sigma = 0.1;
    spec.seed = 42;
    return spec;
}

}  // namespace

TEST_CASE("same seed yields a bit-identical world") {
    WorldSpec spec = small_spec();
    World a = generate_world(spec);
    World b = generate_world(spec);
    CHECK(a.content_hash() == b.content_hash());
    spec.seed = 43;
    World c = generate_world(spec);
    CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("world generation is thread-count invariant") {
    WorldSpec spec = small_spec();
    ThreadPool::set_max_threads(1);
    World a = generate_world(spec);
    ThreadPool::set_max_threads(4);
    World b = generate_world(spec);
    ThreadPool::set_max_threads(1);
    CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("noise-free samples with identical latents are identical") {
    WorldSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    World world = generate_world(spec);
    // find two samples in facet 0 with the same latent vector
    const auto& ds = world.datasets[0];
    bool found = false;
    for (std::size_t i = 0; i < ds.size() && !found; ++i)
        for (std::size_t j = i + 1; j < ds.size() && !found; ++j)
            if (ds[i].latent_labels == ds[j].latent_labels) {
                found = true;
                auto a = ds[i].observation.value();
                auto b = ds[j].observation.value();
                for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a[k] == b[k]);
            }
    CHECK(found);
}

TEST_CASE("observed label matches the source facet's latent label") {
    World world = generate_world(small_spec());
    for (int n = 0; n < world.n_facets(); ++n)
        for (const auto& s : world.datasets[static_cast<std::size_t>(n)]) {
            CHECK(s.source_facet == n);
            CHECK(s.observed_label == s.latent_labels[static_cast<std::size_t>(n)]);
        }
}

TEST_CASE("default-shaped regions are pairwise disjoint") {
    WorldSpec spec;  // defaults: 6 facets, 4x6x6 grid, 4x2x2 regions -> 9 blocks
    spec.finalize();
    spec.validate();
    World world = generate_world(spec);
    std::set<std::tuple<int, int, int>> seen;
    for (const Region& r : world.regions) {
        for (int t = r.t0; t < r.t0 + spec.region_t; ++t)
            for (int h = r.h0; h < r.h0 + spec.region_h; ++h)
                for (int w = r.w0; w < r.w0 + spec.region_w; ++w) {
                    CHECK(seen.insert({t, h, w}).second);
                }
    }
}

TEST_CASE("oversized regions are rejected") {
    WorldSpec spec = small_spec();
    spec.region_h = 7;
    CHECK_THROWS_AS(generate_world(spec), InputError);
}

TEST_CASE("splits are disjoint by sample id") {
    World world = generate_world(small_spec());
    Splits splits = make_splits(world);
    for (int n = 0; n < world.n_facets(); ++n) {
        const auto& ps = splits.facet(n);
        std::set<int> all;
        for (int i : ps.train) all.insert(i);
        for (int i : ps.probe_train) REQUIRE(all.insert(i).second);
        for (int i : ps.probe_val) REQUIRE(all.insert(i).second);
        CHECK(static_cast<int>(all.size()) ==
              static_cast<int>(world.datasets[static_cast<std::size_t>(n)].size()));
    }
}

TEST_CASE("teachers separate noise-free two-class facets perfectly") {
    WorldSpec spec;
    spec.n_facets = 2;
    spec.classes_per_facet = {2, 2};
    spec.teacher_only = {0, 0};
    spec.samples_per_facet = 60;
    spec.noise_sigma = 0.0;
    spec.seed = 5;
    World world = generate_world(spec);
    Splits splits = make_splits(world);
    auto result = train_teacher(world, splits, 0);
    CHECK(result.train_accuracy == 1.0);
}

TEST_CASE("teacher predictions are normalized, deterministic, and frozen-only") {
    World world = generate_world(small_spec());
    Splits splits = make_splits(world);
    auto result = train_teacher(world, splits, 1);
    const Tensor& obs = world.sample(1, 3).observation;
    auto p1 = result.teacher.predict(obs, world.spec.channels);
    auto p2 = result.teacher.predict(obs, world.spec.channels);
    CHECK(p1 == p2);
    double z = 0.0;
    for (double v : p1) {
        CHECK(v >= 0.0);
        z += v;
    }
    CHECK(z == Catch::Approx(1.0).margin(1e-12));

    Teacher raw;
    raw.facet_id = 1;
    CHECK_THROWS_AS(raw.predict(obs, world.spec.channels), DataError);
}

TEST_CASE("zero-weight teacher on uniform observation predicts uniformly") {
    Teacher t;
    t.facet_id = 0;
    t.frozen = true;
    t.clf.n_features = 3;
    t.clf.n_classes = 4;
    t.clf.weights.assign(12, 0.0);
    t.clf.bias.assign(4, 0.0);
    Tensor obs = Tensor::zeros({2, 2, 2, 3});
    auto p = t.predict(obs, 3);
    for (double v : p) CHECK(v == Catch::Approx(0.25));
}

TEST_CASE("teachers on the default-style world exceed 80% held-out accuracy") {
    WorldSpec spec = small_spec();
    spec.samples_per_facet = 300;
    World world = generate_world(spec);
    Splits splits = make_splits(world);
    for (int n = 0; n < world.n_facets(); ++n) {
        auto result = train_teacher(world, splits, n);
        CHECK(result.train_accuracy > 0.9);
        int hits = 0;
        const auto& val = splits.facet(n).probe_val;
        for (int idx : val) {
            const auto& s = world.sample(n, idx);
            auto p = result.teacher.predict(s.observation, world.spec.channels);
            int arg = 0;
            for (int k = 1; k < static_cast<int>(p.size()); ++k)
                if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(arg)]) arg = k;
            if (arg == s.latent_labels[static_cast<std::size_t>(n)]) ++hits;
        }
        CHECK(static_cast<double>(hits) / static_cast<double>(val.size()) > 0.8);
    }
}

TEST_CASE("prototype-pure observations are classified as the planted class") {
    WorldSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    World world = generate_world(spec);
    Splits splits = make_splits(world);
    auto teacher = train_teacher(world, splits, 2).teacher;
    for (int idx : splits.facet(2).probe_val) {
        const auto& s = world.sample(2, idx);
        auto p = teacher.predict(s.observation, world.spec.channels);
        int arg = 0;
        for (int k = 1; k < static_cast<int>(p.size()); ++k)
            if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(arg)]) arg = k;
        CHECK(arg == s.latent_labels[2]);
    }
}

TEST_CASE("teacher cache matches direct prediction") {
    World world = generate_world(small_spec());
    Splits splits = make_splits(world);
    auto teachers = train_all_teachers(world, splits);
    TeacherCache cache(world, teachers);
    const auto direct = teachers[3].predict(world.sample(1, 7).observation, world.spec.channels);
    const auto& cached = cache.probs(1, 7, 3);
    REQUIRE(cached.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i)
        CHECK(cached[i] == Catch::Approx(direct[i]).margin(1e-12));
}

TEST_CASE("world and teachers roundtrip through their file formats") {
    WorldSpec spec = small_spec();
    spec.samples_per_facet = 20;
    World world = generate_world(spec);
    save_world(world, "test_world.bin");
    World loaded = load_world("test_world.bin");
    CHECK(loaded.content_hash() == world.content_hash());
    std::remove("test_world.bin");

    Splits splits = make_splits(world);
    auto teachers = train_all_teachers(world, splits);
    save_teachers(teachers, "test_teachers.bin");
    auto loaded_teachers = load_teachers("test_teachers.bin");
    CHECK(teachers_hash(loaded_teachers) == teachers_hash(teachers));
    std::remove("test_teachers.bin");

    write_world_manifest(world, "test_manifest.csv");
    std::ifstream in("test_manifest.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "sample_id,source_facet,latent_0,latent_1,latent_2,latent_3");
    in.close();
    std::remove("test_manifest.csv");
}

// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "mufi/semspace.hpp"

using namespace mufi;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("embed_word is deterministic and rejects empty tokens") {
    auto a = embed_word("cake");
    auto b = embed_word("cake");
    CHECK(a == b);
    CHECK(a.size() == static_cast<std::size_t>(kDefaultWordDim));
    CHECK_THROWS_AS(embed_word(""), InputError);
}

TEST_CASE("shared trigrams pull words together") {
    auto cake = embed_word("cake");
    auto cakes = embed_word("cakes");
    auto zebra = embed_word("zebra");
    CHECK(cosine(cake, cakes) > cosine(cake, zebra));
}

TEST_CASE("embed_word honors configurable dimension") {
    auto v = embed_word("storm", 32);
    CHECK(v.size() == 32);
}

TEST_CASE("single-word labels pool to the word vector in both halves") {
    auto label = embed_label("piano");
    auto word = embed_word("piano");
    REQUIRE(label.size() == 2 * word.size());
    for (std::size_t i = 0; i < word.size(); ++i) {
        CHECK(label[i] == word[i]);
        CHECK(label[word.size() + i] == word[i]);
    }
}

TEST_CASE("pooling is idempotent over repeated words") {
    CHECK(embed_label("river river") == embed_label("river"));
}

TEST_CASE("paper configuration produces 2048-d raw label vectors") {
    auto v = embed_label("making a cake", 1024);
    CHECK(v.size() == 2048);
}

TEST_CASE("embed_label lowercases and splits on whitespace") {
    CHECK(embed_label("Piano  Storm") == embed_label("piano storm"));
    CHECK_THROWS_AS(embed_label("   "), InputError);
}

TEST_CASE("pca on the y=2x line recovers (1,2)/sqrt(5)") {
    std::vector<std::vector<double>> pts;
    for (int i = -5; i <= 5; ++i)
        pts.push_back({static_cast<double>(i), 2.0 * i});
    PcaTransform pca = fit_pca(pts, 2);
    const double inv_r5 = 1.0 / std::sqrt(5.0);
    CHECK(pca.components[0 * 2 + 0] == Catch::Approx(inv_r5).margin(1e-6));
    CHECK(pca.components[1 * 2 + 0] == Catch::Approx(2.0 * inv_r5).margin(1e-6));
    CHECK(pca.variances[1] == Catch::Approx(0.0).margin(1e-10));
    CHECK(pca.variances[0] >= pca.variances[1]);
}

TEST_CASE("pca components are orthonormal") {
    Rng rng(99);
    std::vector<std::vector<double>> pts(40, std::vector<double>(12));
    for (auto& row : pts)
        for (double& v : row) v = rng.normal();
    PcaTransform pca = fit_pca(pts, 7);
    for (int a = 0; a < 7; ++a)
        for (int b = 0; b < 7; ++b) {
            double acc = 0;
            for (int i = 0; i < 12; ++i)
                acc += pca.components[static_cast<std::size_t>(i) * 7 + a] *
                       pca.components[static_cast<std::size_t>(i) * 7 + b];
            CHECK(std::abs(acc - (a == b ? 1.0 : 0.0)) < 1e-8);
        }
    for (int j = 1; j < 7; ++j) CHECK(pca.variances[j - 1] >= pca.variances[j]);
}

TEST_CASE("full-dimension pca preserves pairwise squared distances") {
    Rng rng(7);
    std::vector<std::vector<double>> pts(20, std::vector<double>(6));
    for (auto& row : pts)
        for (double& v : row) v = rng.uniform(-2, 2);
    PcaTransform pca = fit_pca(pts, 6);
    for (int a = 0; a < 20; ++a)
        for (int b = a + 1; b < 20; ++b) {
            const double orig = sqdist(pts[a], pts[b]);
            const double proj = sqdist(pca.project(pts[a]), pca.project(pts[b]));
            CHECK(std::abs(orig - proj) < 1e-8);
        }
}

TEST_CASE("pca reconstruction error is non-increasing in d") {
    Rng rng(21);
    std::vector<std::vector<double>> pts(30, std::vector<double>(10));
    for (auto& row : pts)
        for (double& v : row) v = rng.normal();
    double prev = 1e300;
    for (int d = 1; d <= 10; d += 3) {
        PcaTransform pca = fit_pca(pts, d);
        // residual variance = total variance - captured variance
        double total = 0.0;
        for (const auto& row : pts) {
            for (int i = 0; i < 10; ++i) {
                const double c = row[static_cast<std::size_t>(i)] - pca.mean[static_cast<std::size_t>(i)];
                total += c * c;
            }
        }
        total /= 29.0;
        double captured = 0.0;
        for (double v : pca.variances) captured += v;
        const double residual = total - captured;
        CHECK(residual <= prev + 1e-9);
        prev = residual;
    }
}

TEST_CASE("projection is affine") {
    Rng rng(31);
    std::vector<std::vector<double>> pts(15, std::vector<double>(5));
    for (auto& row : pts)
        for (double& v : row) v = rng.normal();
    PcaTransform pca = fit_pca(pts, 3);
    std::vector<double> a(5), b(5);
    for (int i = 0; i < 5; ++i) {
        a[static_cast<std::size_t>(i)] = rng.normal();
        b[static_cast<std::size_t>(i)] = rng.normal();
    }
    auto pa = pca.project(a), pb = pca.project(b);
    // project(a) - project(b) must equal Q^T (a - b) with the mean cancelled
    std::vector<double> diff(5);
    for (int i = 0; i < 5; ++i) diff[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
    for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int i = 0; i < 5; ++i)
            acc += pca.components[static_cast<std::size_t>(i) * 3 + j] * diff[static_cast<std::size_t>(i)];
        CHECK(pa[static_cast<std::size_t>(j)] - pb[static_cast<std::size_t>(j)] == Catch::Approx(acc).margin(1e-12));
    }
}

TEST_CASE("fit_pca rejects infeasible reduced dimensions") {
    std::vector<std::vector<double>> pts(3, std::vector<double>(4, 0.0));
    pts[1][0] = 1.0;
    pts[2][1] = 1.0;
    CHECK_THROWS_AS(fit_pca(pts, 3), InputError);  // count-1 = 2 < 3
    CHECK_THROWS_AS(fit_pca(pts, 0), InputError);
    CHECK_NOTHROW(fit_pca(pts, 2));
}

TEST_CASE("build_space with one facet and one label") {
    // d must satisfy d <= count-1, so a single label needs a companion facet
    std::vector<LabelText> labels{{0, 0, "solo label"}, {1, 0, "another one"}};
    SemanticSpace space = SemanticSpace::build(labels, 1);
    CHECK(space.n_facets() == 2);
    CHECK(space.n_labels(0) == 1);
    CHECK(space.matrix(0).shape() == Shape{1, 1});
}

TEST_CASE("build_space is deterministic") {
    std::vector<LabelText> labels;
    const char* words[] = {"cake", "river", "zebra", "piano"};
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 4; ++c)
            labels.push_back({n, c, std::string(n == 0 ? "action " : "scene ") + words[c]});
    SemanticSpace a = SemanticSpace::build(labels, 3);
    SemanticSpace b = SemanticSpace::build(labels, 3);
    CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("labels sharing a word sit closer than the median cross-facet pair") {
    std::vector<LabelText> labels;
    const char* words0[] = {"cake", "river", "zebra", "piano", "storm", "garden"};
    const char* words1[] = {"cake", "rocket", "coral", "violin", "desert", "meadow"};
    for (int c = 0; c < 6; ++c) {
        labels.push_back({0, c, std::string("action ") + words0[c]});
        labels.push_back({1, c, std::string("scene ") + words1[c]});
    }
    SemanticSpace space = SemanticSpace::build(labels, 8);
    std::vector<double> cross;
    for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b)
            cross.push_back(cosine(space.label_row(0, a), space.label_row(1, b)));
    std::vector<double> sorted = cross;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    // "action cake" vs "scene cake" share a token
    CHECK(cross[0] > median);
}

TEST_CASE("build_space validates facet coverage and class contiguity") {
    std::vector<LabelText> gap{{0, 0, "a b"}, {0, 2, "c d"}};
    CHECK_THROWS_AS(SemanticSpace::build(gap, 1), InputError);
    std::vector<LabelText> missing{{0, 0, "a b"}, {2, 0, "c d"}};
    CHECK_THROWS_AS(SemanticSpace::build(missing, 1), InputError);
}

TEST_CASE("space roundtrips through the binary format") {
    std::vector<LabelText> labels;
    const char* words[] = {"cake", "river", "zebra", "piano", "storm"};
    for (int n = 0; n < 3; ++n)
        for (int c = 0; c < 5; ++c)
            labels.push_back({n, c, "facet" + std::to_string(n) + " " + words[c]});
    SemanticSpace space = SemanticSpace::build(labels, 4);
    const std::string path = "test_space.bin";
    space.save(path);
    SemanticSpace loaded = SemanticSpace::load(path);
    CHECK(loaded.content_hash() == space.content_hash());
    CHECK(loaded.dim() == 4);
    CHECK(loaded.label_text(2, 3) == "facet2 piano");
    std::remove(path.c_str());

    // corrupt magic is rejected
    {
        std::ofstream bad("test_space_bad.bin", std::ios::binary);
        bad << "NOTMAGIC junk";
    }
    CHECK_THROWS_AS(SemanticSpace::load("test_space_bad.bin"), FormatError);
    std::remove("test_space_bad.bin");
}

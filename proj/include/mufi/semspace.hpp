// SPDX-License-Identifier: Apache-2.0
//
// Shared semantic label space. Label texts are embedded by a deterministic
// hashed-ngram word model, pooled (max + average) into a raw vector, then
// reduced by PCA fit across all labels of all facets. The space is frozen
// after construction; training only reads it.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mufi/common.hpp"
#include "mufi/tensor.hpp"

namespace mufi {

struct LabelText {
    int facet_id = 0;
    int class_id = 0;
    std::string text;
};

// ----------------------------- word embedding -------------------------------

constexpr int kDefaultWordDim = 64;

namespace detail {
constexpr std::uint64_t kNgramSeed = 0x6d756669776f7264ull;  // fixed across all worlds
}

inline std::vector<std::string> tokenize_label(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) tokens.push_back(cur), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

// Deterministic word vector: each character trigram hashes to a seed that
// generates a unit-variance pattern; patterns sum and are rescaled by the
// square root of the trigram count. Words shorter than the ngram width use
// the whole word as a single gram.
inline std::vector<double> embed_word(const std::string& word, int word_dim = kDefaultWordDim) {
    if (word.empty()) throw InputError("embed_word: empty token");
    if (word_dim < 1) throw InputError("embed_word: word_dim must be positive");
    std::vector<std::string> grams;
    if (word.size() < 3) {
        grams.push_back(word);
    } else {
        for (std::size_t i = 0; i + 3 <= word.size(); ++i) grams.push_back(word.substr(i, 3));
    }
    std::vector<double> v(static_cast<std::size_t>(word_dim), 0.0);
    for (const std::string& g : grams) {
        Rng rng(fnv1a64(g, detail::kNgramSeed));
        for (int i = 0; i < word_dim; ++i) v[static_cast<std::size_t>(i)] += rng.normal();
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(grams.size()));
    for (double& x : v) x *= scale;
    return v;
}

// concat(elementwise max over words, elementwise mean over words) -> 2*D_word
inline std::vector<double> embed_label(const std::string& text, int word_dim = kDefaultWordDim) {
    const auto tokens = tokenize_label(text);
    if (tokens.empty()) throw InputError("embed_label: empty label text");
    const std::size_t d = static_cast<std::size_t>(word_dim);
    std::vector<double> mx(d, -std::numeric_limits<double>::infinity());
    std::vector<double> avg(d, 0.0);
    for (const std::string& w : tokens) {
        const auto wv = embed_word(w, word_dim);
        for (std::size_t i = 0; i < d; ++i) {
            mx[i] = std::max(mx[i], wv[i]);
            avg[i] += wv[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    std::vector<double> out(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
        out[i] = mx[i];
        out[d + i] = avg[i] * inv;
    }
    return out;
}

// ----------------------------- PCA ------------------------------------------

struct PcaTransform {
    std::vector<double> mean;        // [D_raw]
    std::vector<double> components;  // [D_raw x d], column j = j-th component
    std::vector<double> variances;   // [d], non-increasing
    int raw_dim = 0;
    int dim = 0;

    std::vector<double> project(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != raw_dim)
            throw ShapeError("pca project: vector length " + std::to_string(x.size()) +
                             " != raw dim " + std::to_string(raw_dim));
        std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
        for (int j = 0; j < dim; ++j) {
            double acc = 0.0;
            for (int i = 0; i < raw_dim; ++i)
                acc += components[static_cast<std::size_t>(i) * dim + j] *
                       (x[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]);
            out[static_cast<std::size_t>(j)] = acc;
        }
        return out;
    }
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a dense symmetric matrix. Returns
// eigenvalues (unsorted) and eigenvectors as columns of V.
inline void jacobi_eigen_symmetric(std::vector<double>& a, int n, std::vector<double>& eigvals,
                                   std::vector<double>& v) {
    v.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    auto V = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
        if (off < 1e-26 * static_cast<double>(n) * n) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (apq == 0.0) continue;
                const double app = A(p, p), aqq = A(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<std::size_t>(i)] = A(i, i);
}

}  // namespace detail

// Fits PCA on the rows of `data` (count x raw_dim). Components are the top-d
// covariance eigenvectors ordered by eigenvalue, each signed so its
// largest-magnitude entry is positive.
inline PcaTransform fit_pca(const std::vector<std::vector<double>>& data, int d) {
    const int count = static_cast<int>(data.size());
    if (count == 0) throw InputError("fit_pca: no data rows");
    const int raw_dim = static_cast<int>(data[0].size());
    for (const auto& row : data)
        if (static_cast<int>(row.size()) != raw_dim)
            throw ShapeError("fit_pca: ragged input rows");
    if (d < 1 || d > std::min(raw_dim, count - 1))
        throw InputError("fit_pca: d=" + std::to_string(d) + " outside [1, min(raw_dim=" +
                         std::to_string(raw_dim) + ", count-1=" + std::to_string(count - 1) +
                         ")]");

    PcaTransform pca;
    pca.raw_dim = raw_dim;
    pca.dim = d;
    pca.mean.assign(static_cast<std::size_t>(raw_dim), 0.0);
    for (const auto& row : data)
        for (int i = 0; i < raw_dim; ++i) pca.mean[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)];
    for (double& m : pca.mean) m /= static_cast<double>(count);

    // sample covariance, 1/(count-1)
    std::vector<double> cov(static_cast<std::size_t>(raw_dim) * raw_dim, 0.0);
    std::vector<double> centered(static_cast<std::size_t>(raw_dim));
    for (const auto& row : data) {
        for (int i = 0; i < raw_dim; ++i)
            centered[static_cast<std::size_t>(i)] =
                row[static_cast<std::size_t>(i)] - pca.mean[static_cast<std::size_t>(i)];
        for (int i = 0; i < raw_dim; ++i) {
            const double ci = centered[static_cast<std::size_t>(i)];
            if (ci == 0.0) continue;
            for (int j = i; j < raw_dim; ++j)
                cov[static_cast<std::size_t>(i) * raw_dim + j] +=
                    ci * centered[static_cast<std::size_t>(j)];
        }
    }
    const double inv = 1.0 / static_cast<double>(count - 1);
    for (int i = 0; i < raw_dim; ++i)
        for (int j = i; j < raw_dim; ++j) {
            const double v = cov[static_cast<std::size_t>(i) * raw_dim + j] * inv;
            cov[static_cast<std::size_t>(i) * raw_dim + j] = v;
            cov[static_cast<std::size_t>(j) * raw_dim + i] = v;
        }

    std::vector<double> eigvals, eigvecs;
    detail::jacobi_eigen_symmetric(cov, raw_dim, eigvals, eigvecs);

    std::vector<int> order(static_cast<std::size_t>(raw_dim));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return eigvals[static_cast<std::size_t>(x)] > eigvals[static_cast<std::size_t>(y)];
    });

    pca.components.assign(static_cast<std::size_t>(raw_dim) * d, 0.0);
    pca.variances.assign(static_cast<std::size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        // sign convention: largest-magnitude entry positive
        int arg = 0;
        double best = 0.0;
        for (int i = 0; i < raw_dim; ++i) {
            const double mag = std::abs(eigvecs[static_cast<std::size_t>(i) * raw_dim + src]);
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        const double sign =
            eigvecs[static_cast<std::size_t>(arg) * raw_dim + src] >= 0.0 ? 1.0 : -1.0;
        for (int i = 0; i < raw_dim; ++i)
            pca.components[static_cast<std::size_t>(i) * d + j] =
                sign * eigvecs[static_cast<std::size_t>(i) * raw_dim + src];
        pca.variances[static_cast<std::size_t>(j)] =
            std::max(0.0, eigvals[static_cast<std::size_t>(src)]);
    }
    return pca;
}

// ----------------------------- semantic space --------------------------------

constexpr int kDefaultSpaceDim = 16;

class SemanticSpace {
  public:
    SemanticSpace() = default;

    // Builds the frozen space over every label of every facet.
    static SemanticSpace build(const std::vector<LabelText>& labels, int d,
                               int word_dim = kDefaultWordDim) {
        if (labels.empty()) throw InputError("build_space: no labels");
        SemanticSpace space;
        space.word_dim_ = word_dim;
        int n_facets = 0;
        for (const auto& l : labels) n_facets = std::max(n_facets, l.facet_id + 1);
        std::vector<std::vector<const LabelText*>> by_facet(static_cast<std::size_t>(n_facets));
        for (const auto& l : labels) {
            if (l.facet_id < 0) throw InputError("build_space: negative facet id");
            by_facet[static_cast<std::size_t>(l.facet_id)].push_back(&l);
        }
        for (int n = 0; n < n_facets; ++n) {
            auto& fl = by_facet[static_cast<std::size_t>(n)];
            if (fl.empty())
                throw InputError("build_space: facet " + std::to_string(n) + " has no labels");
            std::sort(fl.begin(), fl.end(), [](const LabelText* a, const LabelText* b) {
                return a->class_id < b->class_id;
            });
            for (std::size_t k = 0; k < fl.size(); ++k) {
                if (fl[k]->class_id != static_cast<int>(k))
                    throw InputError("build_space: facet " + std::to_string(n) +
                                     " class ids must be contiguous from 0");
            }
        }

        // deduplicated union of all (facet, label) rows, in facet/class order
        std::vector<std::vector<double>> raw;
        for (int n = 0; n < n_facets; ++n)
            for (const LabelText* l : by_facet[static_cast<std::size_t>(n)])
                raw.push_back(embed_label(l->text, word_dim));

        space.pca_ = fit_pca(raw, d);
        std::size_t row = 0;
        for (int n = 0; n < n_facets; ++n) {
            const auto& fl = by_facet[static_cast<std::size_t>(n)];
            const Index k = static_cast<Index>(fl.size());
            std::vector<double> m(static_cast<std::size_t>(k * d));
            std::vector<std::string> texts;
            for (Index c = 0; c < k; ++c) {
                const auto proj = space.pca_.project(raw[row++]);
                std::copy(proj.begin(), proj.end(),
                          m.begin() + static_cast<std::size_t>(c * d));
                texts.push_back(fl[static_cast<std::size_t>(c)]->text);
            }
            space.matrices_.emplace_back(Shape{k, d}, std::move(m));
            space.texts_.push_back(std::move(texts));
        }
        return space;
    }

    int dim() const { return pca_.dim; }
    int word_dim() const { return word_dim_; }
    int n_facets() const { return static_cast<int>(matrices_.size()); }
    int n_labels(int facet) const {
        return static_cast<int>(matrix(facet).dim(0));
    }

    // Frozen label matrix S^n, [|L^n| x d]; never requires grad.
    const Tensor& matrix(int facet) const {
        if (facet < 0 || facet >= n_facets())
            throw InputError("semantic space: facet " + std::to_string(facet) + " out of range");
        return matrices_[static_cast<std::size_t>(facet)];
    }

    // Row of S^n as a plain vector.
    std::vector<double> label_row(int facet, int class_id) const {
        const Tensor& m = matrix(facet);
        if (class_id < 0 || class_id >= m.dim(0))
            throw InputError("semantic space: class " + std::to_string(class_id) +
                             " out of range for facet " + std::to_string(facet));
        const Index d = m.dim(1);
        auto v = m.value();
        return std::vector<double>(v.begin() + class_id * d, v.begin() + (class_id + 1) * d);
    }

    const std::string& label_text(int facet, int class_id) const {
        return texts_.at(static_cast<std::size_t>(facet)).at(static_cast<std::size_t>(class_id));
    }

    const PcaTransform& pca() const { return pca_; }

    std::uint64_t content_hash() const {
        std::uint64_t h = kFnvOffset;
        h = hash_combine(h, static_cast<std::uint64_t>(word_dim_));
        h = fnv1a64(pca_.mean.data(), pca_.mean.size() * sizeof(double), h);
        h = fnv1a64(pca_.components.data(), pca_.components.size() * sizeof(double), h);
        for (const Tensor& m : matrices_) h = m.content_hash(h);
        return h;
    }

    // ------------------------- serialization -------------------------------

    static constexpr char kMagic[9] = "MUFISPC1";

    void save(const std::string& path) const {
        BinaryWriter w(path);
        w.magic(kMagic);
        w.u32(1);
        w.u32(static_cast<std::uint32_t>(word_dim_));
        w.u32(static_cast<std::uint32_t>(pca_.raw_dim));
        w.u32(static_cast<std::uint32_t>(pca_.dim));
        w.f64_vec(pca_.mean);
        w.f64_vec(pca_.components);
        w.f64_vec(pca_.variances);
        w.u32(static_cast<std::uint32_t>(n_facets()));
        for (int n = 0; n < n_facets(); ++n) {
            const Tensor& m = matrix(n);
            w.u32(static_cast<std::uint32_t>(m.dim(0)));
            for (int c = 0; c < m.dim(0); ++c) w.str(label_text(n, c));
            w.f64_vec(std::vector<double>(m.value().begin(), m.value().end()));
        }
        w.close();
    }

    static SemanticSpace load(const std::string& path) {
        BinaryReader r(path);
        r.expect_magic(kMagic);
        const std::uint32_t version = r.u32();
        if (version != 1)
            throw FormatError("space file " + path + ": unsupported version " +
                              std::to_string(version));
        SemanticSpace s;
        s.word_dim_ = static_cast<int>(r.u32());
        s.pca_.raw_dim = static_cast<int>(r.u32());
        s.pca_.dim = static_cast<int>(r.u32());
        s.pca_.mean = r.f64_vec();
        s.pca_.components = r.f64_vec();
        s.pca_.variances = r.f64_vec();
        const int n_facets = static_cast<int>(r.u32());
        for (int n = 0; n < n_facets; ++n) {
            const Index k = static_cast<Index>(r.u32());
            std::vector<std::string> texts;
            for (Index c = 0; c < k; ++c) texts.push_back(r.str());
            auto data = r.f64_vec();
            s.matrices_.emplace_back(Shape{k, static_cast<Index>(s.pca_.dim)}, std::move(data));
            s.texts_.push_back(std::move(texts));
        }
        return s;
    }

    void dump_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write csv: " + path);
        out << "facet_id,class_id,text";
        for (int j = 0; j < dim(); ++j) out << ",s" << j;
        out << "\n";
        for (int n = 0; n < n_facets(); ++n) {
            const Tensor& m = matrix(n);
            for (int c = 0; c < m.dim(0); ++c) {
                out << n << "," << c << "," << label_text(n, c);
                for (int j = 0; j < dim(); ++j) out << "," << fmt_g(m.at(c * dim() + j));
                out << "\n";
            }
        }
    }

  private:
    int word_dim_ = kDefaultWordDim;
    PcaTransform pca_;
    std::vector<Tensor> matrices_;
    std::vector<std::vector<std::string>> texts_;
};

}  // namespace mufi

// SPDX-License-Identifier: Apache-2.0
//
// Multinomial logistic regression by full-batch gradient descent, shared by
// the frozen facet teachers and the linear probes. Features are standardized
// internally; the returned weights absorb the standardization so the model is
// plain linear in the raw features.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mufi/common.hpp"

namespace mufi {

struct LogRegOptions {
    double lambda = 0.0;  // L2 penalty on weights
    double tol = 1e-6;    // convergence tolerance on loss change
    int max_iters = 4000;
};

struct LogRegModel {
    int n_features = 0;
    int n_classes = 0;
    std::vector<double> weights;  // [n_features x n_classes]
    std::vector<double> bias;     // [n_classes]
    bool converged = false;
    double final_loss = 0.0;
    int iters = 0;

    std::vector<double> logits(std::span<const double> x) const {
        std::vector<double> z(bias);
        for (int i = 0; i < n_features; ++i) {
            const double xi = x[static_cast<std::size_t>(i)];
            if (xi == 0.0) continue;
            const double* wrow = weights.data() + static_cast<std::size_t>(i) * n_classes;
            for (int k = 0; k < n_classes; ++k) z[static_cast<std::size_t>(k)] += xi * wrow[k];
        }
        return z;
    }

    std::vector<double> predict_proba(std::span<const double> x) const {
        std::vector<double> z = logits(x);
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : z) v /= sum;
        return z;
    }

    int predict(std::span<const double> x) const {
        const auto z = logits(x);
        int arg = 0;
        for (int k = 1; k < n_classes; ++k)
            if (z[static_cast<std::size_t>(k)] > z[static_cast<std::size_t>(arg)]) arg = k;
        return arg;
    }
};

// features: row-major [n x d]; labels in [0, n_classes).
inline LogRegModel fit_logreg(const std::vector<double>& features, const std::vector<int>& labels,
                              int n, int d, int n_classes, const LogRegOptions& opt = {}) {
    if (n <= 0 || d <= 0 || n_classes <= 0)
        throw InputError("fit_logreg: empty problem");
    if (static_cast<int>(labels.size()) != n ||
        static_cast<int>(features.size()) != n * d)
        throw ShapeError("fit_logreg: feature/label sizes disagree");
    for (int lab : labels)
        if (lab < 0 || lab >= n_classes)
            throw InputError("fit_logreg: label " + std::to_string(lab) + " outside [0," +
                             std::to_string(n_classes) + ")");

    // standardize features for conditioning
    std::vector<double> mu(static_cast<std::size_t>(d), 0.0), sd(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += features[static_cast<std::size_t>(i) * d + j];
    for (double& m : mu) m /= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            const double c = features[static_cast<std::size_t>(i) * d + j] - mu[static_cast<std::size_t>(j)];
            sd[static_cast<std::size_t>(j)] += c * c;
        }
    for (double& s : sd) s = std::sqrt(s / n) + 1e-12;

    std::vector<double> X(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            X[static_cast<std::size_t>(i) * d + j] =
                (features[static_cast<std::size_t>(i) * d + j] - mu[static_cast<std::size_t>(j)]) /
                sd[static_cast<std::size_t>(j)];

    // GD step size bounded by the softmax curvature of standardized features
    double mean_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = X[static_cast<std::size_t>(i) * d + j];
            s += v * v;
        }
        mean_sq += s;
    }
    mean_sq /= n;
    const double lr = 2.0 / (0.5 * mean_sq + 1.0 + opt.lambda);

    std::vector<double> W(static_cast<std::size_t>(d) * n_classes, 0.0);
    std::vector<double> B(static_cast<std::size_t>(n_classes), 0.0);
    std::vector<double> gW(W.size()), gB(B.size());
    std::vector<double> probs(static_cast<std::size_t>(n_classes));

    double prev_loss = std::numeric_limits<double>::infinity();
    LogRegModel model;
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        std::fill(gW.begin(), gW.end(), 0.0);
        std::fill(gB.begin(), gB.end(), 0.0);
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* x = X.data() + static_cast<std::size_t>(i) * d;
            for (int k = 0; k < n_classes; ++k) probs[static_cast<std::size_t>(k)] = B[static_cast<std::size_t>(k)];
            for (int j = 0; j < d; ++j) {
                const double xj = x[j];
                const double* wrow = W.data() + static_cast<std::size_t>(j) * n_classes;
                for (int k = 0; k < n_classes; ++k) probs[static_cast<std::size_t>(k)] += xj * wrow[k];
            }
            double mx = probs[0];
            for (double v : probs) mx = std::max(mx, v);
            double z = 0.0;
            for (double& v : probs) {
                v = std::exp(v - mx);
                z += v;
            }
            for (double& v : probs) v /= z;
            loss -= std::log(std::max(probs[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])], 1e-300));
            probs[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] -= 1.0;
            for (int j = 0; j < d; ++j) {
                const double xj = x[j];
                if (xj == 0.0) continue;
                double* grow = gW.data() + static_cast<std::size_t>(j) * n_classes;
                for (int k = 0; k < n_classes; ++k) grow[k] += xj * probs[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < n_classes; ++k) gB[static_cast<std::size_t>(k)] += probs[static_cast<std::size_t>(k)];
        }
        loss /= n;
        for (std::size_t i = 0; i < W.size(); ++i) loss += 0.5 * opt.lambda * W[i] * W[i];

        if (std::abs(prev_loss - loss) < opt.tol) {
            model.converged = true;
            prev_loss = loss;
            break;
        }
        prev_loss = loss;
        const double inv_n = 1.0 / n;
        for (std::size_t i = 0; i < W.size(); ++i)
            W[i] -= lr * (gW[i] * inv_n + opt.lambda * W[i]);
        for (std::size_t i = 0; i < B.size(); ++i) B[i] -= lr * gB[i] * inv_n;
    }

    model.n_features = d;
    model.n_classes = n_classes;
    model.final_loss = prev_loss;
    model.iters = it;
    // fold standardization into the returned linear model
    model.weights.assign(static_cast<std::size_t>(d) * n_classes, 0.0);
    model.bias = B;
    for (int j = 0; j < d; ++j) {
        const double inv_sd = 1.0 / sd[static_cast<std::size_t>(j)];
        for (int k = 0; k < n_classes; ++k) {
            const double w = W[static_cast<std::size_t>(j) * n_classes + k] * inv_sd;
            model.weights[static_cast<std::size_t>(j) * n_classes + k] = w;
            model.bias[static_cast<std::size_t>(k)] -= w * mu[static_cast<std::size_t>(j)];
        }
    }
    return model;
}

}  // namespace mufi

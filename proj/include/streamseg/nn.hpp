#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/rng.hpp"

namespace streamseg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) {
    // log(1 + e^x), overflow-safe
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

// Fully-connected layer, weight is out_dim x in_dim, rows of the input are samples.
struct Linear {
    MatrixXd weight;
    VectorXd bias;

    Linear() = default;
    Linear(int out_dim, int in_dim)
        : weight(MatrixXd::Zero(out_dim, in_dim)), bias(VectorXd::Zero(out_dim)) {}

    int in_dim() const { return static_cast<int>(weight.cols()); }
    int out_dim() const { return static_cast<int>(weight.rows()); }

    MatrixXd apply(const MatrixXd& x) const {
        if (x.cols() != weight.cols())
            throw ConfigError("linear layer expects " + std::to_string(weight.cols()) +
                              " inputs, got " + std::to_string(x.cols()));
        return (x * weight.transpose()).rowwise() + bias.transpose();
    }

    static Linear random(int out_dim, int in_dim, Rng& rng, double scale = 0.5) {
        Linear l(out_dim, in_dim);
        for (int i = 0; i < out_dim; ++i) {
            for (int j = 0; j < in_dim; ++j) l.weight(i, j) = rng.uniform(-scale, scale);
            l.bias(i) = rng.uniform(-scale, scale);
        }
        return l;
    }
};

// Stack of Linear layers with ReLU between them; no activation after the last.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    explicit Mlp(std::vector<Linear> ls) : layers(std::move(ls)) {}

    // dims = {in, hidden..., out}, zero-initialized
    static Mlp zeros(const std::vector<int>& dims) {
        Mlp m;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            m.layers.emplace_back(dims[i + 1], dims[i]);
        return m;
    }

    static Mlp random(const std::vector<int>& dims, Rng& rng, double scale = 0.5) {
        Mlp m;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            m.layers.push_back(Linear::random(dims[i + 1], dims[i], rng, scale));
        return m;
    }

    bool empty() const { return layers.empty(); }
    int in_dim() const { return layers.front().in_dim(); }
    int out_dim() const { return layers.back().out_dim(); }

    MatrixXd apply(const MatrixXd& x) const {
        if (layers.empty()) throw ConfigError("mlp has no layers");
        MatrixXd h = layers.front().apply(x);
        for (std::size_t i = 1; i < layers.size(); ++i) {
            h = h.cwiseMax(0.0);  // ReLU
            h = layers[i].apply(h);
        }
        return h;
    }
};

// Row-wise layer normalization over channels.
struct LayerNorm {
    VectorXd gamma;
    VectorXd beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int dim) : gamma(VectorXd::Ones(dim)), beta(VectorXd::Zero(dim)) {}

    MatrixXd apply(const MatrixXd& x) const {
        if (x.cols() != gamma.size())
            throw ConfigError("layer norm expects " + std::to_string(gamma.size()) +
                              " channels, got " + std::to_string(x.cols()));
        MatrixXd out(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i) {
            double mean = x.row(i).mean();
            double var = (x.row(i).array() - mean).square().mean();
            out.row(i) = (((x.row(i).array() - mean) / std::sqrt(var + eps)) *
                          gamma.transpose().array() +
                          beta.transpose().array())
                             .matrix();
        }
        return out;
    }
};

// Row-wise softmax; -inf entries get weight exactly 0. Rows that are entirely
// -inf would be 0/0, callers must mask them out beforehand.
inline MatrixXd softmax_rows(const MatrixXd& logits) {
    MatrixXd out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        double m = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return out;
}

}  // namespace streamseg

#include "prunekit/tensor.hpp"

#include "prunekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace prunekit {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Tensor2D: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, lhs is " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + ", rhs is " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
    }
    Tensor2D out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < a.cols(); ++t) {
                acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gamma, float eps) {
    if (x.size() != gamma.size() || x.empty()) {
        throw ShapeError("rmsnorm: x has length " + std::to_string(x.size()) + ", gamma has length " +
                         std::to_string(gamma.size()));
    }
    double sum_sq = 0.0;
    for (float v : x) {
        sum_sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + static_cast<double>(eps));
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(gamma[i]) * static_cast<double>(x[i]) * inv);
    }
    return out;
}

Tensor2D rmsnorm_rows(const Tensor2D& x, std::span<const float> gamma, float eps) {
    Tensor2D out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto normed = rmsnorm(x.row(r), gamma, eps);
        std::copy(normed.begin(), normed.end(), out.row(r).begin());
    }
    return out;
}

Tensor2D softmax_rows(const Tensor2D& a) {
    Tensor2D out(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double maxv = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < a.cols(); ++c) {
            maxv = std::max(maxv, static_cast<double>(a.at(r, c)));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            denom += std::exp(static_cast<double>(a.at(r, c)) - maxv);
        }
        for (std::size_t c = 0; c < a.cols(); ++c) {
            out.at(r, c) = static_cast<float>(std::exp(static_cast<double>(a.at(r, c)) - maxv) / denom);
        }
    }
    return out;
}

float swish(float x) {
    const double xd = static_cast<double>(x);
    return static_cast<float>(xd / (1.0 + std::exp(-xd)));
}

double l2_norm(std::span<const float> x) {
    double sum_sq = 0.0;
    for (float v : x) {
        sum_sq += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sum_sq);
}

} // namespace prunekit

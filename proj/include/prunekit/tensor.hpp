#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prunekit {

/// Dense row-major float32 matrix. The only matrix type in the toolkit;
/// 1-D parameters (gamma vectors) are plain std::vector<float>.
class Tensor2D {
public:
    Tensor2D() = default;
    Tensor2D(std::size_t rows, std::size_t cols);
    Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    bool operator==(const Tensor2D&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// a · b. The inner sum is accumulated in ascending index order so results
/// are reproducible across runs. Throws ShapeError on a.cols != b.rows.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);

/// gamma ⊙ x / sqrt(mean(x²) + eps), elementwise over one token vector.
std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gamma, float eps);

/// rmsnorm applied independently to every row of x.
Tensor2D rmsnorm_rows(const Tensor2D& x, std::span<const float> gamma, float eps);

/// Row-wise softmax with max-subtraction for stability.
Tensor2D softmax_rows(const Tensor2D& a);

/// x · sigmoid(x)
float swish(float x);

/// L2 norm, accumulated in double.
double l2_norm(std::span<const float> x);

} // namespace prunekit

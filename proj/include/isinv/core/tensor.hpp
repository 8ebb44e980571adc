#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace isinv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Rank 0 is a scalar, rank 2 is the workhorse (rows x cols). Rank-1 tensors
/// are accepted by row-broadcast ops and behave as a single row.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double item() const;

    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

MatrixMap as_matrix(Tensor& t);
ConstMatrixMap as_matrix(const Tensor& t);
Tensor from_matrix(const RowMatrix& m);

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);

/// Rounds every entry to the nearest IEEE binary32 value.
void round_to_float(Tensor& t);

}  // namespace isinv

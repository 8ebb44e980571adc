#include "isinv/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "isinv/core/errors.hpp"

namespace isinv {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor(Shape{rows, cols}, fill);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t = matrix(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged row initializer");
        for (double v : row) t.data[i++] = v;
    }
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    switch (shape.size()) {
        case 0:
        case 1:
            return 1;
        case 2:
            return shape[0];
        default:
            throw DimensionError("rows() on tensor of rank " + std::to_string(shape.size()));
    }
}

std::size_t Tensor::cols() const {
    switch (shape.size()) {
        case 0:
            return 1;
        case 1:
            return shape[0];
        case 2:
            return shape[1];
        default:
            throw DimensionError("cols() on tensor of rank " + std::to_string(shape.size()));
    }
}

double Tensor::item() const {
    if (data.size() != 1) throw DimensionError("item() on tensor with " + std::to_string(data.size()) + " values");
    return data[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

MatrixMap as_matrix(Tensor& t) {
    return MatrixMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatrixMap as_matrix(const Tensor& t) {
    return ConstMatrixMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tensor from_matrix(const RowMatrix& m) {
    Tensor t = Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    as_matrix(t) = m;
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw DimensionError("max_abs_diff on tensors of different size");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

void round_to_float(Tensor& t) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace isinv

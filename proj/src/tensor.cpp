#include "crdt/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace crdt {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(shape_numel(t.shape), 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad.assign(t.data.size(), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data) v = value;
    return t;
}

Tensor Tensor::row(std::vector<double> values) {
    Tensor t;
    t.shape = {values.size()};
    t.data = std::move(values);
    return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
        throw std::invalid_argument("Tensor::matrix: " + std::to_string(values.size()) +
                                    " values for shape (" + std::to_string(rows) + ", " +
                                    std::to_string(cols) + ")");
    }
    Tensor t;
    t.shape = {rows, cols};
    t.data = std::move(values);
    return t;
}

std::size_t Tensor::rows() const {
    return shape.empty() ? 0 : shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() == 1) return 1;
    return shape.size() >= 2 ? shape[1] : 0;
}

double& Tensor::at(std::size_t r, std::size_t c) {
    return data[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return data[r * cols() + c];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

}  // namespace crdt

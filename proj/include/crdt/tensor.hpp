#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

namespace crdt {

// Dense row-major tensor of doubles. Rank 1 or 2 covers everything the
// sequence models need. Gradient storage lives next to the data so
// parameters can be updated in place by the optimizer.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor row(std::vector<double> values);  // shape (n)
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    void ensure_grad();   // allocates zero grad buffer matching data
    void zero_grad();

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Named parameter collection. std::map keeps iteration order deterministic,
// which the optimizer and checkpoint writer rely on.
using ParamStore = std::map<std::string, Tensor>;

}  // namespace crdt

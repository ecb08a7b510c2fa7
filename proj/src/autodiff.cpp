#include "crdt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crdt/kernels.hpp"

namespace crdt {
namespace {

constexpr double kProbFloor = 1e-12;
const double kLogProbFloor = std::log(kProbFloor);
constexpr double kLayerNormEps = 1e-5;
const double kLog2Pi = std::log(2.0 * M_PI);

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
    throw std::invalid_argument(std::string("autodiff: ") + op + ": " + detail);
}

}  // namespace

int Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("autodiff: invalid Var handle");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("autodiff: invalid Var handle");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.owned;
}

double* Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(val(id).size(), 0.0);
    return n.grad.data();
}

const Tensor& Tape::value(Var v) const {
    node(v);  // validates the handle
    return val(v.id);
}

const std::vector<double>& Tape::grad(Var v) const {
    static const std::vector<double> empty;
    const Node& n = node(v);
    return n.grad.empty() ? empty : n.grad;
}

void Tape::check_same_shape(const char* op, Var a, Var b) const {
    if (!val(a.id).same_shape(val(b.id))) {
        shape_error(op, "shape mismatch " + shape_str(val(a.id).shape) + " vs " +
                            shape_str(val(b.id).shape));
    }
}

Var Tape::param(Tensor* p) {
    Node n;
    n.external = p;
    n.op = "param";
    n.needs_grad = p->requires_grad;
    return {push(std::move(n))};
}

Var Tape::variable(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.op = "variable";
    n.needs_grad = true;
    return {push(std::move(n))};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.op = "constant";
    return {push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = val(a.id);
    const Tensor& tb = val(b.id);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
        shape_error("matmul", shape_str(ta.shape) + " x " + shape_str(tb.shape));
    }
    const std::size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
    Node n;
    n.owned = Tensor::zeros({m, nn});
    kernels::active().matmul(ta.data.data(), tb.data.data(), n.owned.data.data(), m, k, nn, false);
    n.inputs = {a.id, b.id};
    n.op = "matmul";
    n.needs_grad = needs(a.id) || needs(b.id);
    n.back = [a = a.id, b = b.id, m, k, nn](Tape& t, int self) {
        const double* gout = t.nodes_[static_cast<std::size_t>(self)].grad.data();
        const auto& ops = kernels::active();
        if (t.needs(a)) {
            // dA += dC * B^T
            std::vector<double> bt(k * nn);
            kernels::transpose(t.val(b).data.data(), bt.data(), k, nn);
            ops.matmul(gout, bt.data(), t.grad_buf(a), m, nn, k, true);
        }
        if (t.needs(b)) {
            // dB += A^T * dC
            std::vector<double> at(m * k);
            kernels::transpose(t.val(a).data.data(), at.data(), m, k);
            ops.matmul(at.data(), gout, t.grad_buf(b), k, m, nn, true);
        }
    };
    return {push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& ta = val(a.id);
    const Tensor& tb = val(b.id);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols()) {
        shape_error("matmul_nt", shape_str(ta.shape) + " x " + shape_str(tb.shape) + "^T");
    }
    const std::size_t m = ta.rows(), k = ta.cols(), nn = tb.rows();
    Node n;
    n.owned = Tensor::zeros({m, nn});
    {
        std::vector<double> bt(k * nn);
        kernels::transpose(tb.data.data(), bt.data(), nn, k);
        kernels::active().matmul(ta.data.data(), bt.data(), n.owned.data.data(), m, k, nn, false);
    }
    n.inputs = {a.id, b.id};
    n.op = "matmul_nt";
    n.needs_grad = needs(a.id) || needs(b.id);
    n.back = [a = a.id, b = b.id, m, k, nn](Tape& t, int self) {
        const double* gout = t.nodes_[static_cast<std::size_t>(self)].grad.data();
        const auto& ops = kernels::active();
        if (t.needs(a)) {
            // dA += dC * B
            ops.matmul(gout, t.val(b).data.data(), t.grad_buf(a), m, nn, k, true);
        }
        if (t.needs(b)) {
            // dB += dC^T * A
            std::vector<double> gt(m * nn);
            kernels::transpose(gout, gt.data(), m, nn);
            ops.matmul(gt.data(), t.val(a).data.data(), t.grad_buf(b), nn, m, k, true);
        }
    };
    return {push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
    check_same_shape("add", a, b);
    const Tensor& ta = val(a.id);
    Node n;
    n.owned = Tensor::zeros(ta.shape);
    kernels::active().add(ta.data.data(), val(b.id).data.data(), n.owned.data.data(), ta.size());
    n.inputs = {a.id, b.id};
    n.op = "add";
    n.needs_grad = needs(a.id) || needs(b.id);
    n.back = [a = a.id, b = b.id](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        if (t.needs(a)) kernels::active().axpy(1.0, g.data(), t.grad_buf(a), g.size());
        if (t.needs(b)) kernels::active().axpy(1.0, g.data(), t.grad_buf(b), g.size());
    };
    return {push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    check_same_shape("sub", a, b);
    const Tensor& ta = val(a.id);
    Node n;
    n.owned = Tensor::zeros(ta.shape);
    kernels::active().sub(ta.data.data(), val(b.id).data.data(), n.owned.data.data(), ta.size());
    n.inputs = {a.id, b.id};
    n.op = "sub";
    n.needs_grad = needs(a.id) || needs(b.id);
    n.back = [a = a.id, b = b.id](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        if (t.needs(a)) kernels::active().axpy(1.0, g.data(), t.grad_buf(a), g.size());
        if (t.needs(b)) kernels::active().axpy(-1.0, g.data(), t.grad_buf(b), g.size());
    };
    return {push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    const Tensor& ta = val(a.id);
    Node n;
    n.owned = Tensor::zeros(ta.shape);
    kernels::active().mul(ta.data.data(), val(b.id).data.data(), n.owned.data.data(), ta.size());
    n.inputs = {a.id, b.id};
    n.op = "mul";
    n.needs_grad = needs(a.id) || needs(b.id);
    n.back = [a = a.id, b = b.id](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const std::size_t sz = g.size();
        if (t.needs(a)) {
            double* ga = t.grad_buf(a);
            const double* vb = t.val(b).data.data();
            for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * vb[i];
        }
        if (t.needs(b)) {
            double* gb = t.grad_buf(b);
            const double* va = t.val(a).data.data();
            for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * va[i];
        }
    };
    return {push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
    const Tensor& ta = val(a.id);
    Node n;
    n.owned = Tensor::zeros(ta.shape);
    kernels::active().scale(ta.data.data(), s, n.owned.data.data(), ta.size());
    n.inputs = {a.id};
    n.op = "scale";
    n.needs_grad = needs(a.id);
    n.back = [a = a.id, s](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        if (t.needs(a)) kernels::active().axpy(s, g.data(), t.grad_buf(a), g.size());
    };
    return {push(std::move(n))};
}

Var Tape::add_bias(Var x, Var bias) {
    const Tensor& tx = val(x.id);
    const Tensor& tb = val(bias.id);
    if (tx.rank() != 2 || tb.rank() != 1 || tb.shape[0] != tx.cols()) {
        shape_error("add_bias", shape_str(tx.shape) + " + " + shape_str(tb.shape));
    }
    const std::size_t r = tx.rows(), c = tx.cols();
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    for (std::size_t i = 0; i < r; ++i) {
        kernels::active().add(tx.data.data() + i * c, tb.data.data(),
                              n.owned.data.data() + i * c, c);
    }
    n.inputs = {x.id, bias.id};
    n.op = "add_bias";
    n.needs_grad = needs(x.id) || needs(bias.id);
    n.back = [x = x.id, b = bias.id, r, c](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        if (t.needs(x)) kernels::active().axpy(1.0, g.data(), t.grad_buf(x), g.size());
        if (t.needs(b)) {
            double* gb = t.grad_buf(b);
            for (std::size_t i = 0; i < r; ++i) {
                kernels::active().axpy(1.0, g.data() + i * c, gb, c);
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::gelu(Var x) {
    const Tensor& tx = val(x.id);
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < tx.size(); ++i) {
        const double v = tx.data[i];
        n.owned.data[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    n.inputs = {x.id};
    n.op = "gelu";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, inv_sqrt2](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const double* vx = t.val(x).data.data();
        double* gx = t.grad_buf(x);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = vx[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    };
    return {push(std::move(n))};
}

Var Tape::clip(Var x, double lo, double hi) {
    const Tensor& tx = val(x.id);
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    for (std::size_t i = 0; i < tx.size(); ++i) {
        n.owned.data[i] = std::clamp(tx.data[i], lo, hi);
    }
    n.inputs = {x.id};
    n.op = "clip";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, lo, hi](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const double* vx = t.val(x).data.data();
        double* gx = t.grad_buf(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (vx[i] > lo && vx[i] < hi) gx[i] += g[i];
        }
    };
    return {push(std::move(n))};
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
    const Tensor& tx = val(x.id);
    const Tensor& tg = val(gain.id);
    const Tensor& tb = val(bias.id);
    if (tx.rank() != 2 || tg.shape != std::vector<std::size_t>{tx.cols()} ||
        tb.shape != std::vector<std::size_t>{tx.cols()}) {
        shape_error("layer_norm", shape_str(tx.shape) + " with gain " + shape_str(tg.shape));
    }
    const std::size_t r = tx.rows(), c = tx.cols();
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    std::vector<double> xhat(r * c);
    std::vector<double> rstd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = tx.data.data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd[i] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (row[j] - mean) * rs;
            xhat[i * c + j] = xh;
            n.owned.data[i * c + j] = xh * tg.data[j] + tb.data[j];
        }
    }
    n.inputs = {x.id, gain.id, bias.id};
    n.op = "layer_norm";
    n.needs_grad = needs(x.id) || needs(gain.id) || needs(bias.id);
    n.back = [x = x.id, gv = gain.id, bv = bias.id, r, c,
              xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const double* gain = t.val(gv).data.data();
        if (t.needs(gv)) {
            double* gg = t.grad_buf(gv);
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    gg[j] += g[i * c + j] * xhat[i * c + j];
                }
            }
        }
        if (t.needs(bv)) {
            double* gb = t.grad_buf(bv);
            for (std::size_t i = 0; i < r; ++i) {
                kernels::active().axpy(1.0, g.data() + i * c, gb, c);
            }
        }
        if (t.needs(x)) {
            double* gx = t.grad_buf(x);
            for (std::size_t i = 0; i < r; ++i) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g[i * c + j] * gain[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[i * c + j];
                }
                const double inv_c = 1.0 / static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g[i * c + j] * gain[j];
                    gx[i * c + j] += rstd[i] * (dxh - inv_c * sum_dxhat -
                                                xhat[i * c + j] * inv_c * sum_dxhat_xhat);
                }
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::softmax_rows_masked(Var x, const std::vector<std::uint8_t>& allowed) {
    const Tensor& tx = val(x.id);
    if (tx.rank() != 2 || allowed.size() != tx.size()) {
        shape_error("softmax_rows_masked", "mask size " + std::to_string(allowed.size()) +
                                               " for " + shape_str(tx.shape));
    }
    const std::size_t r = tx.rows(), c = tx.cols();
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = tx.data.data() + i * c;
        const std::uint8_t* arow = allowed.data() + i * c;
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < c; ++j) {
            if (arow[j] && row[j] > mx) mx = row[j];
        }
        if (mx == -HUGE_VAL) continue;  // fully masked row stays zero
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (arow[j]) denom += std::exp(row[j] - mx);
        }
        for (std::size_t j = 0; j < c; ++j) {
            if (arow[j]) n.owned.data[i * c + j] = std::exp(row[j] - mx) / denom;
        }
    }
    n.inputs = {x.id};
    n.op = "softmax_rows_masked";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, r, c, allowed](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const double* p = t.val(self).data.data();
        double* gx = t.grad_buf(x);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dot += g[i * c + j] * p[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
                if (allowed[i * c + j]) {
                    gx[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
                }
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::dropout(Var x, double rate, bool active, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("autodiff: dropout rate must be in [0, 1), got " +
                                    std::to_string(rate));
    }
    if (!active || rate == 0.0) {
        return x;  // exact identity
    }
    const Tensor& tx = val(x.id);
    Node n;
    n.owned = Tensor::zeros(tx.shape);
    std::vector<double> mask(tx.size());
    const double keep = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < tx.size(); ++i) {
        mask[i] = rng.bernoulli(rate) ? 0.0 : keep;
        n.owned.data[i] = tx.data[i] * mask[i];
    }
    n.inputs = {x.id};
    n.op = "dropout";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, mask = std::move(mask)](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        double* gx = t.grad_buf(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    };
    return {push(std::move(n))};
}

Var Tape::embedding_rows(Var table, const std::vector<std::size_t>& ids) {
    const Tensor& tt = val(table.id);
    if (tt.rank() != 2) shape_error("embedding_rows", "table must be rank 2");
    const std::size_t d = tt.cols();
    for (auto id : ids) {
        if (id >= tt.rows()) {
            shape_error("embedding_rows", "index " + std::to_string(id) + " out of " +
                                              std::to_string(tt.rows()) + " rows");
        }
    }
    Node n;
    n.owned = Tensor::zeros({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tt.data.data() + ids[i] * d, d, n.owned.data.data() + i * d);
    }
    n.inputs = {table.id};
    n.op = "embedding_rows";
    n.needs_grad = needs(table.id);
    n.back = [tab = table.id, ids, d](Tape& t, int self) {
        if (!t.needs(tab)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        double* gt = t.grad_buf(tab);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            kernels::active().axpy(1.0, g.data() + i * d, gt + ids[i] * d, d);
        }
    };
    return {push(std::move(n))};
}

Var Tape::select_rows(Var x, const std::vector<std::size_t>& rows) {
    const Tensor& tx = val(x.id);
    if (tx.rank() != 2) shape_error("select_rows", "input must be rank 2");
    const std::size_t c = tx.cols();
    for (auto rr : rows) {
        if (rr >= tx.rows()) {
            shape_error("select_rows", "row " + std::to_string(rr) + " out of " +
                                           std::to_string(tx.rows()));
        }
    }
    Node n;
    n.owned = Tensor::zeros({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(tx.data.data() + rows[i] * c, c, n.owned.data.data() + i * c);
    }
    n.inputs = {x.id};
    n.op = "select_rows";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, rows, c](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        double* gx = t.grad_buf(x);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            kernels::active().axpy(1.0, g.data() + i * c, gx + rows[i] * c, c);
        }
    };
    return {push(std::move(n))};
}

Var Tape::interleave3(Var a, Var b, Var c) {
    check_same_shape("interleave3", a, b);
    check_same_shape("interleave3", b, c);
    const Tensor& ta = val(a.id);
    if (ta.rank() != 2) shape_error("interleave3", "inputs must be rank 2");
    const std::size_t t_steps = ta.rows(), d = ta.cols();
    Node n;
    n.owned = Tensor::zeros({3 * t_steps, d});
    const Tensor& tb = val(b.id);
    const Tensor& tc = val(c.id);
    for (std::size_t i = 0; i < t_steps; ++i) {
        std::copy_n(ta.data.data() + i * d, d, n.owned.data.data() + (3 * i + 0) * d);
        std::copy_n(tb.data.data() + i * d, d, n.owned.data.data() + (3 * i + 1) * d);
        std::copy_n(tc.data.data() + i * d, d, n.owned.data.data() + (3 * i + 2) * d);
    }
    n.inputs = {a.id, b.id, c.id};
    n.op = "interleave3";
    n.needs_grad = needs(a.id) || needs(b.id) || needs(c.id);
    n.back = [a = a.id, b = b.id, c = c.id, t_steps, d](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        const int srcs[3] = {a, b, c};
        for (int s = 0; s < 3; ++s) {
            if (!t.needs(srcs[s])) continue;
            double* gs = t.grad_buf(srcs[s]);
            for (std::size_t i = 0; i < t_steps; ++i) {
                kernels::active().axpy(1.0, g.data() + (3 * i + static_cast<std::size_t>(s)) * d,
                                       gs + i * d, d);
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor& tx = val(x.id);
    if (tx.rank() != 2 || start + count > tx.cols()) {
        shape_error("slice_cols", "[" + std::to_string(start) + ", " +
                                      std::to_string(start + count) + ") of " +
                                      shape_str(tx.shape));
    }
    const std::size_t r = tx.rows(), c = tx.cols();
    Node n;
    n.owned = Tensor::zeros({r, count});
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(tx.data.data() + i * c + start, count, n.owned.data.data() + i * count);
    }
    n.inputs = {x.id};
    n.op = "slice_cols";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id, start, count, r, c](Tape& t, int self) {
        if (!t.needs(x)) return;
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        double* gx = t.grad_buf(x);
        for (std::size_t i = 0; i < r; ++i) {
            kernels::active().axpy(1.0, g.data() + i * count, gx + i * c + start, count);
        }
    };
    return {push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
    const std::size_t r = val(parts[0].id).rows();
    std::size_t total = 0;
    for (Var p : parts) {
        const Tensor& tp = val(p.id);
        if (tp.rank() != 2 || tp.rows() != r) {
            shape_error("concat_cols", "row mismatch " + shape_str(tp.shape));
        }
        total += tp.cols();
    }
    Node n;
    n.owned = Tensor::zeros({r, total});
    std::vector<int> input_ids;
    std::vector<std::size_t> widths;
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& tp = val(p.id);
        const std::size_t w = tp.cols();
        for (std::size_t i = 0; i < r; ++i) {
            std::copy_n(tp.data.data() + i * w, w, n.owned.data.data() + i * total + off);
        }
        input_ids.push_back(p.id);
        widths.push_back(w);
        off += w;
    }
    n.inputs = input_ids;
    n.op = "concat_cols";
    for (int id : input_ids) n.needs_grad = n.needs_grad || needs(id);
    n.back = [input_ids, widths, r, total](Tape& t, int self) {
        const auto& g = t.nodes_[static_cast<std::size_t>(self)].grad;
        std::size_t off = 0;
        for (std::size_t p = 0; p < input_ids.size(); ++p) {
            const std::size_t w = widths[p];
            if (t.needs(input_ids[p])) {
                double* gp = t.grad_buf(input_ids[p]);
                for (std::size_t i = 0; i < r; ++i) {
                    kernels::active().axpy(1.0, g.data() + i * total + off, gp + i * w, w);
                }
            }
            off += w;
        }
    };
    return {push(std::move(n))};
}

Var Tape::sum_all(Var x) {
    const Tensor& tx = val(x.id);
    Node n;
    n.owned = Tensor::zeros({1});
    double s = 0.0;
    for (double v : tx.data) s += v;
    n.owned.data[0] = s;
    n.inputs = {x.id};
    n.op = "sum_all";
    n.needs_grad = needs(x.id);
    n.back = [x = x.id](Tape& t, int self) {
        if (!t.needs(x)) return;
        const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0];
        double* gx = t.grad_buf(x);
        const std::size_t sz = t.val(x).size();
        for (std::size_t i = 0; i < sz; ++i) gx[i] += g;
    };
    return {push(std::move(n))};
}

Var Tape::cross_entropy_logits(Var logits, const std::vector<std::size_t>& labels,
                               const std::vector<std::uint8_t>& valid) {
    const Tensor& tl = val(logits.id);
    if (tl.rank() != 2 || labels.size() != tl.rows() || valid.size() != tl.rows()) {
        shape_error("cross_entropy_logits",
                    "labels/valid length vs logits " + shape_str(tl.shape));
    }
    const std::size_t r = tl.rows(), c = tl.cols();
    double vcount = 0.0;
    for (auto v : valid) vcount += v ? 1.0 : 0.0;
    Node n;
    n.owned = Tensor::zeros({1});
    std::vector<double> lse(r, 0.0);
    std::vector<std::uint8_t> active(r, 0);  // valid and above the prob floor
    if (vcount > 0.0) {
        double loss = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            if (!valid[i]) continue;
            if (labels[i] >= c) {
                shape_error("cross_entropy_logits", "label " + std::to_string(labels[i]) +
                                                        " out of " + std::to_string(c));
            }
            const double* row = tl.data.data() + i * c;
            double mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
            lse[i] = mx + std::log(denom);
            const double logp = row[labels[i]] - lse[i];
            if (logp > kLogProbFloor) {
                active[i] = 1;
                loss -= logp;
            } else {
                loss -= kLogProbFloor;
            }
        }
        n.owned.data[0] = loss / vcount;
    }
    n.inputs = {logits.id};
    n.op = "cross_entropy_logits";
    n.needs_grad = needs(logits.id);
    n.back = [lg = logits.id, labels, lse = std::move(lse), active = std::move(active), r, c,
              vcount](Tape& t, int self) {
        if (!t.needs(lg) || vcount == 0.0) return;
        const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0] / vcount;
        const double* x = t.val(lg).data.data();
        double* gx = t.grad_buf(lg);
        for (std::size_t i = 0; i < r; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(x[i * c + j] - lse[i]);
                gx[i * c + j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::mse_rows(Var pred, const Tensor& target, const std::vector<std::uint8_t>& valid) {
    const Tensor& tp = val(pred.id);
    if (!tp.same_shape(target) || valid.size() != tp.rows()) {
        shape_error("mse_rows", shape_str(tp.shape) + " vs target " + shape_str(target.shape));
    }
    const std::size_t r = tp.rows(), c = tp.cols();
    double vcount = 0.0;
    for (auto v : valid) vcount += v ? 1.0 : 0.0;
    Node n;
    n.owned = Tensor::zeros({1});
    if (vcount > 0.0) {
        double loss = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            if (!valid[i]) continue;
            for (std::size_t j = 0; j < c; ++j) {
                const double d = tp.data[i * c + j] - target.data[i * c + j];
                loss += d * d;
            }
        }
        n.owned.data[0] = loss / vcount;
    }
    n.inputs = {pred.id};
    n.op = "mse_rows";
    n.needs_grad = needs(pred.id);
    n.back = [p = pred.id, target, valid, r, c, vcount](Tape& t, int self) {
        if (!t.needs(p) || vcount == 0.0) return;
        const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0] / vcount;
        const double* vp = t.val(p).data.data();
        double* gp = t.grad_buf(p);
        for (std::size_t i = 0; i < r; ++i) {
            if (!valid[i]) continue;
            for (std::size_t j = 0; j < c; ++j) {
                gp[i * c + j] += g * 2.0 * (vp[i * c + j] - target.data[i * c + j]);
            }
        }
    };
    return {push(std::move(n))};
}

Var Tape::gaussian_nll_rows(Var mu, Var logvar, const Tensor& target,
                            const std::vector<std::uint8_t>& valid) {
    check_same_shape("gaussian_nll_rows", mu, logvar);
    const Tensor& tm = val(mu.id);
    if (!tm.same_shape(target) || valid.size() != tm.rows()) {
        shape_error("gaussian_nll_rows", shape_str(tm.shape) + " vs target " +
                                             shape_str(target.shape));
    }
    const std::size_t r = tm.rows(), c = tm.cols();
    double vcount = 0.0;
    for (auto v : valid) vcount += v ? 1.0 : 0.0;
    Node n;
    n.owned = Tensor::zeros({1});
    const Tensor& tv = val(logvar.id);
    if (vcount > 0.0) {
        double loss = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            if (!valid[i]) continue;
            for (std::size_t j = 0; j < c; ++j) {
                const double d = target.data[i * c + j] - tm.data[i * c + j];
                const double lv = tv.data[i * c + j];
                loss += d * d * 0.5 * std::exp(-lv) + 0.5 * (lv + kLog2Pi);
            }
        }
        n.owned.data[0] = loss / vcount;
    }
    n.inputs = {mu.id, logvar.id};
    n.op = "gaussian_nll_rows";
    n.needs_grad = needs(mu.id) || needs(logvar.id);
    n.back = [m = mu.id, lvid = logvar.id, target, valid, r, c, vcount](Tape& t, int self) {
        if (vcount == 0.0) return;
        const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0] / vcount;
        const double* vm = t.val(m).data.data();
        const double* vlv = t.val(lvid).data.data();
        const bool nm = t.needs(m), nlv = t.needs(lvid);
        double* gm = nm ? t.grad_buf(m) : nullptr;
        double* glv = nlv ? t.grad_buf(lvid) : nullptr;
        for (std::size_t i = 0; i < r; ++i) {
            if (!valid[i]) continue;
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t idx = i * c + j;
                const double d = target.data[idx] - vm[idx];
                const double inv_var = std::exp(-vlv[idx]);
                if (nm) gm[idx] += g * (-d * inv_var);
                if (nlv) glv[idx] += g * (-0.5 * d * d * inv_var + 0.5);
            }
        }
    };
    return {push(std::move(n))};
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) {
        throw std::logic_error("autodiff: backward before any forward op was recorded");
    }
    Node& ln = node(loss);
    const Tensor& lv = ln.external ? *ln.external : ln.owned;
    if (lv.size() != 1) {
        throw std::invalid_argument("autodiff: backward requires a scalar loss, got " +
                                    shape_str(lv.shape));
    }
    if (backward_done_) {
        throw std::logic_error("autodiff: backward already ran on this tape");
    }
    backward_done_ = true;
    grad_buf(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty() || !n.back || !n.needs_grad) continue;
        n.back(*this, id);
    }
    for (int id = 0; id <= loss.id; ++id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.external && n.external->requires_grad && !n.grad.empty()) {
            n.external->ensure_grad();
            kernels::active().axpy(1.0, n.grad.data(), n.external->grad.data(), n.grad.size());
        }
    }
}

}  // namespace crdt

#include "isinv/core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "isinv/core/errors.hpp"

namespace isinv::ad {

namespace {

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const Var& a, const char* op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

bool is_row_of(const Tensor& row, const Tensor& m) {
    return (row.rank() == 1 || (row.rank() == 2 && row.shape[0] == 1)) && row.cols() == m.cols() && m.rank() == 2;
}

template <typename Fwd, typename Deriv>
Var unary_elementwise(const Var& x, const char* name, Fwd fwd, Deriv deriv) {
    const Tensor& xv = x.value();
    require_finite(xv, name);
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = fwd(xv.data[i]);
    return x.tape().record(std::move(out), {x}, [x, deriv](Tape& t, const Tensor& y, const Tensor& g) {
        Tensor& gx = t.grad_of(x);
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * deriv(xv.data[i], y.data[i]);
    });
}

}  // namespace

const Tensor& Var::value() const { return tape_->value_of(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::variable(Tensor value) {
    Node n;
    n.requires_grad = value.requires_grad;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(const Tensor& value) {
    Node n;
    n.borrowed = &value;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Tensor& value) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value_of(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    for (const Var& p : parents) {
        if (p.tape_ != this) throw Error("autodiff: operands recorded on different tapes");
        n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_of(const Var& v) {
    Node& n = nodes_[v.id_];
    if (!n.has_grad) {
        n.grad = Tensor(value_of(v.id_).shape, 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

GradResult Tape::grad(const Var& loss, std::span<const Var> wrt) {
    if (loss.tape_ != this) throw Error("grad: loss recorded on a different tape");
    if (loss.value().numel() != 1) throw DimensionError("grad: loss must be scalar, got " + shape_str(loss.shape()));

    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    if (nodes_[loss.id_].requires_grad) {
        grad_of(loss).data[0] = 1.0;
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, value_of(i), n.grad);
        }
    }

    GradResult result;
    result.grads.reserve(wrt.size());
    for (const Var& w : wrt) {
        const Node& n = nodes_[w.id_];
        const bool connected = n.requires_grad && n.has_grad;
        result.disconnected.push_back(!connected);
        result.warning = result.warning || !connected;
        result.grads.push_back(connected ? n.grad : Tensor(value_of(w.id_).shape, 0.0));
    }
    return result;
}

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) as_matrix(t.grad_of(a)).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
        if (b.requires_grad()) as_matrix(t.grad_of(b)).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " . " + shape_str(b.shape()) + "^T");
    }
    Tensor out = Tensor::matrix(a.rows(), b.rows());
    as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value()).transpose();
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) as_matrix(t.grad_of(a)).noalias() += as_matrix(g) * as_matrix(b.value());
        if (b.requires_grad()) as_matrix(t.grad_of(b)).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
    });
}

Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape == bv.shape) {
        Tensor out = av;
        out.requires_grad = false;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
        return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
            if (a.requires_grad()) {
                Tensor& ga = t.grad_of(a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
            }
            if (b.requires_grad()) {
                Tensor& gb = t.grad_of(b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
            }
        });
    }
    if (!is_row_of(bv, av)) {
        throw DimensionError("add: cannot broadcast " + shape_str(bv.shape) + " onto " + shape_str(av.shape));
    }
    Tensor out = av;
    out.requires_grad = false;
    as_matrix(out).rowwise() += as_matrix(bv).row(0);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) as_matrix(t.grad_of(a)) += as_matrix(g);
        if (b.requires_grad()) {
            Tensor& gb = t.grad_of(b);
            MatrixMap(gb.data.data(), 1, static_cast<Eigen::Index>(gb.numel())) += as_matrix(g).colwise().sum();
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    out.requires_grad = false;
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) {
            Tensor& ga = t.grad_of(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (b.requires_grad()) {
            Tensor& gb = t.grad_of(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    out.requires_grad = false;
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) {
            Tensor& ga = t.grad_of(a);
            const Tensor& bv = b.value();
            for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * bv.data[i];
        }
        if (b.requires_grad()) {
            Tensor& gb = t.grad_of(b);
            const Tensor& av = a.value();
            for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * av.data[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.requires_grad = false;
    for (double& v : out.data) v *= s;
    return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& ga = t.grad_of(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
    });
}

Var silu(const Var& x) {
    return unary_elementwise(
        x, "silu",
        [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Var arctan(const Var& x) {
    return unary_elementwise(
        x, "arctan", [](double v) { return std::atan(v); }, [](double v, double) { return 1.0 / (1.0 + v * v); });
}

Var tanh(const Var& x) {
    return unary_elementwise(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softmax_row(const Var& x) {
    require_finite(x.value(), "softmax_row");
    Tensor out = x.value();
    out.requires_grad = false;
    const std::size_t r = out.rows(), c = out.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) row[j] /= z;
    }
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& y, const Tensor& g) {
        Tensor& gx = t.grad_of(x);
        const std::size_t r = y.rows(), c = y.cols();
        for (std::size_t i = 0; i < r; ++i) {
            const double* yr = y.data.data() + i * c;
            const double* gr = g.data.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
            double* out = gx.data.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) out[j] += yr[j] * (gr[j] - dot);
        }
    });
}

Var rmsnorm_row(const Var& x, const Var& gain, double eps) {
    require_rank2(x, "rmsnorm_row");
    const Tensor& xv = x.value();
    const Tensor& gv = gain.value();
    require_finite(xv, "rmsnorm_row");
    if (gv.numel() != xv.cols()) {
        throw DimensionError("rmsnorm_row: gain " + shape_str(gv.shape) + " for input " + shape_str(xv.shape));
    }
    const std::size_t r = xv.rows(), c = xv.cols();
    std::vector<double> inv_rms(r);
    Tensor out = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xr = xv.data.data() + i * c;
        double ms = 0.0;
        for (std::size_t j = 0; j < c; ++j) ms += xr[j] * xr[j];
        inv_rms[i] = 1.0 / std::sqrt(ms / static_cast<double>(c) + eps);
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = xr[j] * inv_rms[i] * gv.data[j];
    }
    return x.tape().record(
        std::move(out), {x, gain}, [x, gain, inv_rms = std::move(inv_rms)](Tape& t, const Tensor&, const Tensor& g) {
            const Tensor& xv = x.value();
            const Tensor& gv = gain.value();
            const std::size_t r = xv.rows(), c = xv.cols();
            Tensor* ggain = gain.requires_grad() ? &t.grad_of(gain) : nullptr;
            Tensor* gx = x.requires_grad() ? &t.grad_of(x) : nullptr;
            std::vector<double> gxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = xv.data.data() + i * c;
                const double* gr = g.data.data() + i * c;
                const double s = inv_rms[i];
                double proj = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = xr[j] * s;
                    if (ggain) ggain->data[j] += gr[j] * xhat;
                    gxhat[j] = gr[j] * gv.data[j];
                    proj += gxhat[j] * xhat;
                }
                if (!gx) continue;
                proj /= static_cast<double>(c);
                double* out = gx->data.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) out[j] += s * (gxhat[j] - xr[j] * s * proj);
            }
        });
}

Var mean_rows(const Var& x) {
    require_rank2(x, "mean_rows");
    Tensor out = Tensor::matrix(1, x.cols());
    as_matrix(out) = as_matrix(x.value()).colwise().mean();
    return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        const double inv = 1.0 / static_cast<double>(x.rows());
        as_matrix(t.grad_of(x)).rowwise() += as_matrix(g).row(0) * inv;
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data) s += v;
    return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& gx = t.grad_of(x);
        for (double& v : gx.data) v += g.data[0];
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().numel());
    double s = 0.0;
    for (double v : x.value().data) s += v;
    return x.tape().record(Tensor::scalar(s / n), {x}, [x, n](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& gx = t.grad_of(x);
        for (double& v : gx.data) v += g.data[0] / n;
    });
}

Var l2norm(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data) s += v * v;
    return x.tape().record(Tensor::scalar(std::sqrt(s)), {x}, [x](Tape& t, const Tensor& y, const Tensor& g) {
        const double norm = y.data[0];
        if (norm == 0.0) return;
        Tensor& gx = t.grad_of(x);
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < xv.numel(); ++i) gx.data[i] += g.data[0] * xv.data[i] / norm;
    });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a, b, "mse");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const double n = static_cast<double>(av.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
        const double d = av.data[i] - bv.data[i];
        s += d * d;
    }
    return a.tape().record(Tensor::scalar(s / n), {a, b}, [a, b, n](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const double k = 2.0 * g.data[0] / n;
        if (a.requires_grad()) {
            Tensor& ga = t.grad_of(a);
            for (std::size_t i = 0; i < av.numel(); ++i) ga.data[i] += k * (av.data[i] - bv.data[i]);
        }
        if (b.requires_grad()) {
            Tensor& gb = t.grad_of(b);
            for (std::size_t i = 0; i < av.numel(); ++i) gb.data[i] -= k * (av.data[i] - bv.data[i]);
        }
    });
}

Var cosine_distance_rows(const Var& a, const Var& b) {
    require_same_shape(a, b, "cosine_distance_rows");
    constexpr double kDenomEps = 1e-12;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t r = av.rows(), c = av.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double x = av.data[i * c + j], y = bv.data[i * c + j];
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        total += dot / (std::sqrt(na) * std::sqrt(nb) + kDenomEps);
    }
    const double n = static_cast<double>(r);
    return a.tape().record(Tensor::scalar(1.0 - total / n), {a, b}, [a, b, n](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const std::size_t r = av.rows(), c = av.cols();
        Tensor* ga = a.requires_grad() ? &t.grad_of(a) : nullptr;
        Tensor* gb = b.requires_grad() ? &t.grad_of(b) : nullptr;
        const double k = -g.data[0] / n;
        for (std::size_t i = 0; i < r; ++i) {
            const double* x = av.data.data() + i * c;
            const double* y = bv.data.data() + i * c;
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dot += x[j] * y[j];
                na += x[j] * x[j];
                nb += y[j] * y[j];
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            const double denom = na * nb + kDenomEps;
            // d cos / dx = y/D - dot * nb * x / (na * D^2), and symmetrically for y.
            const double cx = na > 0.0 ? dot * nb / (na * denom * denom) : 0.0;
            const double cy = nb > 0.0 ? dot * na / (nb * denom * denom) : 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                if (ga) ga->data[i * c + j] += k * (y[j] / denom - cx * x[j]);
                if (gb) gb->data[i * c + j] += k * (x[j] / denom - cy * y[j]);
            }
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
    require_rank2(logits, "cross_entropy");
    const Tensor& lv = logits.value();
    require_finite(lv, "cross_entropy");
    const std::size_t r = lv.rows(), c = lv.cols();
    if (targets.size() != r) throw DimensionError("cross_entropy: target count does not match logit rows");
    Tensor probs = lv;
    probs.requires_grad = false;
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const int tgt = targets[i];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= c) throw DimensionError("cross_entropy: target out of range");
        double* row = probs.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        loss += std::log(z) + mx - row[tgt];
        for (std::size_t j = 0; j < c; ++j) row[j] = std::exp(row[j] - mx) / z;
    }
    std::vector<int> tg(targets.begin(), targets.end());
    const double n = static_cast<double>(r);
    return logits.tape().record(
        Tensor::scalar(loss / n), {logits},
        [logits, probs = std::move(probs), tg = std::move(tg), n](Tape& t, const Tensor&, const Tensor& g) {
            Tensor& gl = t.grad_of(logits);
            const std::size_t c = probs.cols();
            const double k = g.data[0] / n;
            for (std::size_t i = 0; i < tg.size(); ++i) {
                for (std::size_t j = 0; j < c; ++j) gl.data[i * c + j] += k * probs.data[i * c + j];
                gl.data[i * c + static_cast<std::size_t>(tg[i])] -= k;
            }
        });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    require_rank2(table, "gather_rows");
    const Tensor& tv = table.value();
    const std::size_t c = tv.cols();
    Tensor out = Tensor::matrix(ids.size(), c);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
            throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
        }
        std::copy_n(tv.data.data() + static_cast<std::size_t>(ids[i]) * c, c, out.data.data() + i * c);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return table.tape().record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& gt = t.grad_of(table);
        const std::size_t c = gt.cols();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = gt.data.data() + static_cast<std::size_t>(idx[i]) * c;
            const double* src = g.data.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
    require_rank2(x, "slice_rows");
    const Tensor& xv = x.value();
    if (begin + count > xv.rows()) throw DimensionError("slice_rows: range past end of " + shape_str(xv.shape));
    const std::size_t c = xv.cols();
    Tensor out = Tensor::matrix(count, c);
    std::copy_n(xv.data.data() + begin * c, count * c, out.data.data());
    return x.tape().record(std::move(out), {x}, [x, begin](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& gx = t.grad_of(x);
        double* dst = gx.data.data() + begin * gx.cols();
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g.data[i];
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.cols() != c) throw DimensionError("concat_rows: width mismatch");
        rows += p.rows();
    }
    Tensor out = Tensor::matrix(rows, c);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.value().numel();
    }
    std::vector<Var> held(parts.begin(), parts.end());
    return parts[0].tape().record(std::move(out), parts, [held](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : held) {
            const std::size_t n = p.value().numel();
            if (p.requires_grad()) {
                Tensor& gp = t.grad_of(p);
                for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[offset + i];
            }
            offset += n;
        }
    });
}

namespace {

struct RopeTable {
    std::vector<double> cos, sin;  // [rows x half_head]
    std::size_t half = 0;
};

RopeTable make_rope_table(std::size_t rows, std::size_t head_dim, double base, std::size_t offset) {
    RopeTable tab;
    tab.half = head_dim / 2;
    tab.cos.resize(rows * tab.half);
    tab.sin.resize(rows * tab.half);
    for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t i = 0; i < tab.half; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(p + offset) * freq;
            tab.cos[p * tab.half + i] = std::cos(angle);
            tab.sin[p * tab.half + i] = std::sin(angle);
        }
    }
    return tab;
}

// Rotates each (even, odd) pair; `sign` = -1 applies the inverse rotation.
void apply_rope(const Tensor& in, Tensor& out, const RopeTable& tab, std::size_t heads, double sign, bool accumulate) {
    const std::size_t r = in.rows(), c = in.cols();
    const std::size_t hd = c / heads;
    for (std::size_t p = 0; p < r; ++p) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < tab.half; ++i) {
                const std::size_t j = p * c + h * hd + 2 * i;
                const double cs = tab.cos[p * tab.half + i];
                const double sn = sign * tab.sin[p * tab.half + i];
                const double x0 = in.data[j], x1 = in.data[j + 1];
                const double y0 = x0 * cs - x1 * sn;
                const double y1 = x0 * sn + x1 * cs;
                if (accumulate) {
                    out.data[j] += y0;
                    out.data[j + 1] += y1;
                } else {
                    out.data[j] = y0;
                    out.data[j + 1] = y1;
                }
            }
        }
    }
}

}  // namespace

Var rope(const Var& x, std::size_t heads, double base, std::size_t position_offset) {
    require_rank2(x, "rope");
    if (heads == 0 || x.cols() % heads != 0 || (x.cols() / heads) % 2 != 0) {
        throw DimensionError("rope: width " + std::to_string(x.cols()) + " not splittable into even heads");
    }
    auto tab = make_rope_table(x.rows(), x.cols() / heads, base, position_offset);
    Tensor out = Tensor::matrix(x.rows(), x.cols());
    apply_rope(x.value(), out, tab, heads, 1.0, false);
    return x.tape().record(std::move(out), {x}, [x, heads, tab = std::move(tab)](Tape& t, const Tensor&, const Tensor& g) {
        apply_rope(g, t.grad_of(x), tab, heads, -1.0, true);
    });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal) {
    require_rank2(q, "attention");
    require_rank2(k, "attention");
    require_rank2(v, "attention");
    const std::size_t m = q.rows(), n = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != n) throw DimensionError("attention: q/k/v shapes disagree");
    if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
    if (causal && m != n) throw DimensionError("attention: causal mask needs square scores");
    const std::size_t hd = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto Q = as_matrix(q.value());
    const auto K = as_matrix(k.value());
    const auto V = as_matrix(v.value());

    // Row-major probabilities per head, kept for the backward pass.
    std::vector<RowMatrix> probs(heads);
    Tensor out = Tensor::matrix(m, d);
    auto O = as_matrix(out);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h * hd);
        const auto hdi = static_cast<Eigen::Index>(hd);
        RowMatrix s = (Q.middleCols(off, hdi) * K.middleCols(off, hdi).transpose()) * scl;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t visible = causal ? i + 1 : n;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, s(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < visible; ++j) z += (s(i, j) = std::exp(s(i, j) - mx));
            for (std::size_t j = 0; j < visible; ++j) s(i, j) /= z;
            for (std::size_t j = visible; j < n; ++j) s(i, j) = 0.0;
        }
        O.middleCols(off, hdi).noalias() = s * V.middleCols(off, hdi);
        probs[h] = std::move(s);
    }
    return q.tape().record(
        std::move(out), {q, k, v}, [q, k, v, heads, hd, scl, probs = std::move(probs)](Tape& t, const Tensor&, const Tensor& g) {
            const auto G = as_matrix(g);
            const auto Q = as_matrix(q.value());
            const auto K = as_matrix(k.value());
            const auto V = as_matrix(v.value());
            Tensor* gq = q.requires_grad() ? &t.grad_of(q) : nullptr;
            Tensor* gk = k.requires_grad() ? &t.grad_of(k) : nullptr;
            Tensor* gv = v.requires_grad() ? &t.grad_of(v) : nullptr;
            for (std::size_t h = 0; h < heads; ++h) {
                const auto off = static_cast<Eigen::Index>(h * hd);
                const auto hdi = static_cast<Eigen::Index>(hd);
                const RowMatrix& p = probs[h];
                const auto gOut = G.middleCols(off, hdi);
                if (gv) as_matrix(*gv).middleCols(off, hdi).noalias() += p.transpose() * gOut;
                if (!gq && !gk) continue;
                RowMatrix dp = gOut * V.middleCols(off, hdi).transpose();
                // dS = P o (dP - rowsum(dP o P))
                const Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
                RowMatrix ds = (p.array() * (dp.colwise() - rs).array()).matrix() * scl;
                if (gq) as_matrix(*gq).middleCols(off, hdi).noalias() += ds * K.middleCols(off, hdi);
                if (gk) as_matrix(*gk).middleCols(off, hdi).noalias() += ds.transpose() * Q.middleCols(off, hdi);
            }
        });
}

}  // namespace isinv::ad

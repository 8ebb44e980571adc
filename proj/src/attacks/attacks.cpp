#include "isinv/attacks/attacks.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <numeric>

#include "isinv/core/adamw.hpp"
#include "isinv/core/errors.hpp"

namespace isinv {

Distance parse_distance(const std::string& name) {
    if (name == "mse" || name == "MSE") return Distance::mse;
    if (name == "cos" || name == "COS") return Distance::cos;
    throw ConfigError("unknown distance '" + name + "'");
}

const char* distance_name(Distance d) { return d == Distance::mse ? "mse" : "cos"; }

BasisKind parse_basis_kind(const std::string& name) {
    if (name == "singular") return BasisKind::singular;
    if (name == "unbiased") return BasisKind::unbiased;
    throw ConfigError("unknown basis '" + name + "'");
}

const char* basis_kind_name(BasisKind k) { return k == BasisKind::singular ? "singular" : "unbiased"; }

void AttackConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("attack lr must be positive");
    if (steps < 1) throw ConfigError("attack steps must be at least 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be positive");
    if (lambda > 0.0 && (dm_features == 0 || dm_batch == 0)) throw ConfigError("dm penalty needs features and batch");
}

BasisSet compute_basis(const Tensor& E, BasisKind kind) {
    if (E.rank() != 2 || E.cols() > E.rows()) throw DimensionError("compute_basis: need E with d <= N_t");
    if (!E.all_finite()) throw NumericError("compute_basis: non-finite embedding");
    Eigen::JacobiSVD<RowMatrix> svd(as_matrix(E), Eigen::ComputeThinU | Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success) throw NumericError("SVD did not converge");
    const RowMatrix V = svd.matrixV();
    BasisSet out;
    out.kind = kind;
    out.B = from_matrix(kind == BasisKind::singular ? RowMatrix(V.transpose()) : V);
    return out;
}

DmFeatures DmFeatures::make(std::size_t d, std::size_t n_features, std::size_t hidden, std::size_t batch,
                            std::uint64_t seed) {
    DmFeatures f;
    f.batch = batch;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](std::size_t r, std::size_t c) {
        Tensor t = Tensor::matrix(r, c);
        const double sd = 1.0 / std::sqrt(static_cast<double>(r));
        for (double& v : t.data) v = sd * normal(rng);
        return t;
    };
    for (std::size_t k = 0; k < n_features; ++k) {
        f.w1.push_back(gaussian(d, hidden));
        f.w2.push_back(gaussian(hidden, hidden));
    }
    return f;
}

namespace {

std::vector<int> draw_batch(std::size_t population, std::size_t k, std::mt19937_64& rng) {
    std::vector<int> idx(population);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, population - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace

ad::Var dm_penalty(const ad::Var& w_hat, const ad::Var& E, const DmFeatures& features, std::mt19937_64& rng) {
    if (features.w1.empty()) throw ConfigError("dm_penalty: no feature maps");
    const std::size_t batch = std::min({features.batch, w_hat.rows(), E.rows()});
    if (batch == 0) throw ConfigError("dm_penalty: empty batch");
    const auto wi = draw_batch(w_hat.rows(), batch, rng);
    const auto ei = draw_batch(E.rows(), batch, rng);
    ad::Tape& tape = w_hat.tape();
    ad::Var wb = ad::gather_rows(w_hat, wi);
    ad::Var eb = ad::gather_rows(E, ei);
    ad::Var total;
    for (std::size_t k = 0; k < features.w1.size(); ++k) {
        ad::Var w1 = tape.constant(features.w1[k]);
        ad::Var w2 = tape.constant(features.w2[k]);
        auto phi = [&](const ad::Var& x) { return ad::mean_rows(ad::matmul(ad::silu(ad::matmul(x, w1)), w2)); };
        ad::Var term = ad::l2norm(ad::sub(phi(wb), phi(eb)));
        total = total.valid() ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(features.w1.size()));
}

ad::Var inversion_loss(const BoundModel& m, const ad::Var& w_hat, const Tensor& target, std::size_t layer,
                       const AttackConfig& cfg, const ad::Var& E, const DmFeatures* features, std::mt19937_64* rng) {
    if (w_hat.rows() != target.rows() || w_hat.cols() != target.cols()) {
        throw DimensionError("inversion_loss: w_hat " + shape_str(w_hat.shape()) + " vs target " +
                             shape_str(target.shape));
    }
    ad::Tape& tape = w_hat.tape();
    ad::Var h = forward_layers(m, w_hat, 0, layer);
    ad::Var t = tape.constant(target);
    ad::Var loss = cfg.distance == Distance::mse ? ad::mse(h, t) : ad::cosine_distance_rows(h, t);
    if (cfg.lambda > 0.0) {
        if (features == nullptr || rng == nullptr) throw ConfigError("inversion_loss: lambda > 0 needs dm features");
        loss = ad::add(loss, ad::scale(dm_penalty(w_hat, E, *features, *rng), cfg.lambda));
    }
    return loss;
}

RecoveredTokens recover_tokens(const Tensor& w_hat, const Tensor& E) {
    if (w_hat.rank() != 2 || E.rank() != 2 || w_hat.cols() != E.cols()) {
        throw DimensionError("recover_tokens: width mismatch");
    }
    if (!w_hat.all_finite()) throw NumericError("recover_tokens: non-finite w_hat");
    const std::size_t n = w_hat.rows(), v = E.rows();
    std::vector<double> enorm(v);
    for (std::size_t j = 0; j < v; ++j) {
        double s = 0.0;
        for (double x : E.row(j)) s += x * x;
        enorm[j] = std::sqrt(s);
    }
    const RowMatrix dots = as_matrix(w_hat) * as_matrix(E).transpose();
    RecoveredTokens out;
    out.ids.resize(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double x : w_hat.row(i)) s += x * x;
        const double wn = std::sqrt(s);
        if (wn == 0.0) {
            out.zero_row = true;
            continue;
        }
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) {
            const double c = enorm[j] == 0.0 ? 0.0 : dots(i, j) / (wn * enorm[j]);
            if (c > best) {
                best = c;
                out.ids[i] = static_cast<int>(j);
            }
        }
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

/// Maps the optimization variable to w_hat on the tape.
using Param = std::function<ad::Var(ad::Tape&, const ad::Var& var)>;

/// Reads token ids off the best optimization variable; empty means recover_tokens on w_hat.
using Decode = std::function<TokenSequence(const Tensor& var)>;

/// Per row, the column of the largest entry; ties go to the smallest column.
TokenSequence row_argmax(const Tensor& z) {
    TokenSequence ids(z.rows(), 0);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto row = z.row(i);
        ids[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return ids;
}

BoundModel bind_prefix(ad::Tape& tape, const TransformerWeights& w, std::size_t layer) {
    BindOptions opts;
    opts.max_layer = layer;
    opts.with_head = false;
    return bind(tape, w, opts);
}

void check_target(const InternalStates& target, const TransformerWeights& w) {
    if (target.layer > w.config.n_layers) {
        throw ConfigError("target layer " + std::to_string(target.layer) + " outside model depth");
    }
    if (target.h.rank() != 2 || target.h.cols() != w.config.d_model || target.h.rows() == 0) {
        throw DimensionError("target states must be [n x " + std::to_string(w.config.d_model) + "] with n > 0");
    }
    if (!target.h.all_finite()) throw NumericError("target states are not finite");
}

InversionResult run_attack(const char* name, const InternalStates& target, const TransformerWeights& w,
                           const Tokenizer& tok, const AttackConfig& cfg, Tensor var, const Param& param,
                           const Decode& decode = {}) {
    cfg.validate();
    check_target(target, w);
    const auto t0 = Clock::now();

    InversionResult res;
    res.attack = name;
    InversionTrace& tr = res.trace;
    AdamW optim(AdamWParams{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    std::mt19937_64 rng(cfg.seed);
    DmFeatures features;
    if (cfg.lambda > 0.0) {
        features = DmFeatures::make(w.config.d_model, cfg.dm_features, cfg.dm_hidden, cfg.dm_batch, cfg.seed ^ 0x5eedULL);
    }

    Tensor best = var;
    double best_loss = std::numeric_limits<double>::infinity();
    var.requires_grad = true;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ad::Tape tape;
        BoundModel m = bind_prefix(tape, w, target.layer);
        ad::Var v = tape.variable(var);
        double loss_value = 0.0;
        Tensor grad;
        try {
            ad::Var w_hat = param(tape, v);
            ad::Var loss = inversion_loss(m, w_hat, target.h, target.layer, cfg, m.embed, &features, &rng);
            loss_value = loss.value().item();
            if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
            grad = std::move(tape.grad(loss, {v}).grads[0]);
        } catch (const NumericError& e) {
            tr.aborted = true;
            tr.abort_reason = "step " + std::to_string(step) + ": " + e.what();
            break;
        }
        const double gnorm = frobenius_norm(grad);
        tr.loss.push_back(loss_value);
        tr.grad_norm.push_back(gnorm);
        if (!(gnorm <= cfg.explode_threshold)) tr.exploded = true;
        if (step % cfg.checkpoint_interval == 0) {
            tr.checkpoint_steps.push_back(step);
            tr.checkpoints.push_back(var);
        }
        if (loss_value < best_loss) {
            best_loss = loss_value;
            best = var;
            tr.best_index = step;
        }
        if (loss_value <= cfg.stop_loss) break;
        if (!grad.all_finite()) {
            tr.aborted = true;
            tr.abort_reason = "step " + std::to_string(step) + ": non-finite gradient";
            break;
        }
        optim.step(var, grad);
    }

    {
        ad::Tape tape;
        best.requires_grad = false;
        res.w_hat = param(tape, tape.variable(best)).value();
        res.w_hat.requires_grad = false;
    }
    if (decode) {
        res.inverted_ids = decode(best);
    } else {
        RecoveredTokens rec = recover_tokens(res.w_hat, w.embed);
        res.inverted_ids = std::move(rec.ids);
        res.zero_row = rec.zero_row;
    }
    std::vector<int> valid;
    valid.reserve(res.inverted_ids.size());
    for (int id : res.inverted_ids) {
        if (static_cast<std::size_t>(id) < tok.vocab_size()) valid.push_back(id);
    }
    res.inverted_text = tok.decode(valid);
    res.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
}

Param identity_param() {
    return [](ad::Tape&, const ad::Var& v) { return v; };
}

Param tbs_param(const BasisSet& basis, double alpha) {
    return [&basis, alpha](ad::Tape& tape, const ad::Var& z) {
        return ad::scale(ad::arctan(ad::matmul(z, tape.constant(basis.B))), alpha);
    };
}

double objective(const Tensor& x, const InternalStates& target, const TransformerWeights& w, const AttackConfig& cfg,
                 const Param& param, Tensor* grad) {
    check_target(target, w);
    ad::Tape tape;
    BoundModel m = bind_prefix(tape, w, target.layer);
    Tensor xv = x;
    xv.requires_grad = true;
    ad::Var v = tape.variable(std::move(xv));
    ad::Var w_hat = param(tape, v);
    AttackConfig plain = cfg;
    plain.lambda = 0.0;
    ad::Var loss = inversion_loss(m, w_hat, target.h, target.layer, plain, m.embed, nullptr, nullptr);
    if (grad != nullptr) *grad = tape.grad(loss, {v}).grads[0];
    return loss.value().item();
}

}  // namespace

InversionResult attack_ts(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                          const AttackConfig& cfg) {
    const std::size_t n = target.h.rows(), vocab = w.config.vocab_size;
    Tensor z = Tensor::matrix(n, vocab, 1.0 / static_cast<double>(w.config.d_model));
    const double inv_t = 1.0 / cfg.temperature;
    Param p = [&w, inv_t](ad::Tape& tape, const ad::Var& Z) {
        return ad::matmul(ad::softmax_row(ad::scale(Z, inv_t)), tape.constant(w.embed));
    };
    return run_attack("ts", target, w, tok, cfg, std::move(z), p, row_argmax);
}

InversionResult attack_er(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                          const AttackConfig& cfg) {
    return attack_er_from(target, w, tok, cfg, Tensor::matrix(target.h.rows(), w.config.d_model));
}

InversionResult attack_er_from(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                               const AttackConfig& cfg, Tensor init) {
    if (init.rank() != 2 || init.rows() != target.h.rows() || init.cols() != w.config.d_model) {
        throw DimensionError("attack_er: initial w_hat has shape " + shape_str(init.shape));
    }
    return run_attack("er", target, w, tok, cfg, std::move(init), identity_param());
}

InversionResult attack_tbs(const InternalStates& target, const TransformerWeights& w, const Tokenizer& tok,
                           const AttackConfig& cfg) {
    const BasisSet basis = compute_basis(w.embed, cfg.basis);
    const double d = static_cast<double>(w.config.d_model);
    Tensor z = Tensor::matrix(target.h.rows(), w.config.d_model, 1.0 / d);
    return run_attack("tbs", target, w, tok, cfg, std::move(z), tbs_param(basis, cfg.alpha));
}

double er_objective(const Tensor& w_hat, const InternalStates& target, const TransformerWeights& w,
                    const AttackConfig& cfg, Tensor* grad) {
    return objective(w_hat, target, w, cfg, identity_param(), grad);
}

double tbs_objective(const Tensor& z, const InternalStates& target, const TransformerWeights& w, const BasisSet& basis,
                     const AttackConfig& cfg, Tensor* grad) {
    return objective(z, target, w, cfg, tbs_param(basis, cfg.alpha), grad);
}

}  // namespace isinv

#include "isinv/blackbox/detector.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "isinv/core/adamw.hpp"
#include "isinv/core/autodiff.hpp"
#include "isinv/core/errors.hpp"
#include "isinv/lm/weight_file.hpp"

namespace isinv {

Tensor pool_states(const Tensor& h) {
    if (h.rank() != 2 || h.rows() == 0) throw DimensionError("pool_states: need a non-empty [n x d] matrix");
    Tensor out = from_matrix(as_matrix(h).colwise().mean());
    return out;
}

Tensor pool_dataset(std::span<const Tensor> states) {
    if (states.empty()) return Tensor::matrix(0, 0);
    const std::size_t d = states[0].cols();
    Tensor out = Tensor::matrix(states.size(), d);
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i].cols() != d) throw DimensionError("pool_dataset: width mismatch");
        Tensor p = pool_states(states[i]);
        std::copy(p.data.begin(), p.data.end(), out.row(i).begin());
    }
    return out;
}

namespace {

struct AeVars {
    ad::Var w1, b1, w2, b2, w3, b3;
};

ad::Var ae_forward(const AeVars& v, const ad::Var& x) {
    ad::Var h = ad::tanh(ad::add(ad::matmul(x, v.w1), v.b1));
    h = ad::tanh(ad::add(ad::matmul(h, v.w2), v.b2));
    return ad::add(ad::matmul(h, v.w3), v.b3);
}

AeVars bind_constants(ad::Tape& tape, const Autoencoder& ae) {
    return {tape.constant(ae.w1), tape.constant(ae.b1), tape.constant(ae.w2),
            tape.constant(ae.b2), tape.constant(ae.w3), tape.constant(ae.b3)};
}

void require_width(const Autoencoder& ae, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != ae.input_dim()) {
        throw DimensionError("autoencoder expects [m x " + std::to_string(ae.input_dim()) + "], got " +
                             shape_str(x.shape));
    }
}

}  // namespace

Tensor Autoencoder::standardize(const Tensor& x) const {
    require_width(*this, x);
    Tensor out = x;
    out.requires_grad = false;
    auto m = as_matrix(out);
    m.rowwise() -= as_matrix(mean).row(0);
    m.array().rowwise() /= as_matrix(scale).row(0).array();
    return out;
}

Tensor Autoencoder::reconstruct(const Tensor& x) const {
    ad::Tape tape;
    return ae_forward(bind_constants(tape, *this), tape.variable(standardize(x))).value();
}

std::vector<double> Autoencoder::row_rmse(const Tensor& x) const {
    const Tensor s = standardize(x);
    const Tensor r = reconstruct(x);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double d = r.at(i, j) - s.at(i, j);
            acc += d * d;
        }
        out[i] = std::sqrt(acc / static_cast<double>(x.cols()));
    }
    return out;
}

double Autoencoder::rmse(const Tensor& x) const {
    if (x.rows() == 0) throw ConfigError("rmse: empty input");
    const Tensor s = standardize(x);
    const Tensor r = reconstruct(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const double d = r.data[i] - s.data[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(s.numel()));
}

Autoencoder init_autoencoder(std::size_t d, const AutoencoderConfig& cfg) {
    if (d == 0 || cfg.hidden == 0 || cfg.bottleneck == 0) throw ConfigError("autoencoder widths must be positive");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto dense = [&](std::size_t in, std::size_t out) {
        Tensor t = Tensor::matrix(in, out);
        const double sd = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : t.data) v = sd * normal(rng);
        round_to_float(t);
        return t;
    };
    Autoencoder ae;
    ae.mean = Tensor::matrix(1, d, 0.0);
    ae.scale = Tensor::matrix(1, d, 1.0);
    ae.w1 = dense(d, cfg.hidden);
    ae.b1 = Tensor::matrix(1, cfg.hidden);
    ae.w2 = dense(cfg.hidden, cfg.bottleneck);
    ae.b2 = Tensor::matrix(1, cfg.bottleneck);
    ae.w3 = dense(cfg.bottleneck, d);
    ae.b3 = Tensor::matrix(1, d);
    return ae;
}

AutoencoderTraining train_autoencoder(const Tensor& data, const AutoencoderConfig& cfg) {
    if (data.rank() != 2 || data.rows() == 0) throw ConfigError("train_autoencoder: empty dataset");
    if (cfg.batch == 0) throw ConfigError("train_autoencoder: batch must be positive");
    const std::size_t n = data.rows(), d = data.cols();

    AutoencoderTraining out;
    Autoencoder& ae = out.model;
    ae = init_autoencoder(d, cfg);
    const auto X = as_matrix(data);
    const RowMatrix mu = X.colwise().mean();
    RowMatrix sd = ((X.rowwise() - mu.row(0)).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    sd = sd.cwiseMax(1e-8);
    ae.mean = from_matrix(mu);
    ae.scale = from_matrix(sd);
    round_to_float(ae.mean);
    round_to_float(ae.scale);

    const Tensor xs = ae.standardize(data);
    auto full_mse = [&] {
        const double r = ae.rmse(data);
        return r * r;
    };
    out.initial_mse = full_mse();

    AdamW optim(AdamWParams{.lr = cfg.lr});
    std::mt19937_64 rng(cfg.seed ^ 0xae5eedULL);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t len = std::min(cfg.batch, n - start);
            ad::Tape tape;
            ad::Var x = ad::gather_rows(tape.constant(xs), std::span<const int>(order).subspan(start, len));
            AeVars v{tape.parameter(ae.w1), tape.parameter(ae.b1), tape.parameter(ae.w2),
                     tape.parameter(ae.b2), tape.parameter(ae.w3), tape.parameter(ae.b3)};
            ad::Var loss = ad::mse(ae_forward(v, x), x);
            if (!std::isfinite(loss.value().item())) throw NumericError("autoencoder training diverged");
            auto g = tape.grad(loss, {v.w1, v.b1, v.w2, v.b2, v.w3, v.b3});
            Tensor* vars[] = {&ae.w1, &ae.b1, &ae.w2, &ae.b2, &ae.w3, &ae.b3};
            optim.step(vars, g.grads);
            epoch_loss += loss.value().item();
            ++batches;
        }
        out.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    }
    for (Tensor* t : {&ae.w1, &ae.b1, &ae.w2, &ae.b2, &ae.w3, &ae.b3}) round_to_float(*t);
    out.final_mse = full_mse();
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ConfigError("percentile of empty set");
    if (q < 0.0 || q > 100.0) throw ConfigError("percentile must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void EnsembleDetector::add(std::string label, Autoencoder model, double tau) {
    if (label.empty() || label == kIndependent) throw ConfigError("invalid detector label '" + label + "'");
    for (const auto& e : entries_) {
        if (e.label == label) throw ConfigError("duplicate detector label '" + label + "'");
        if (e.model.input_dim() != model.input_dim()) throw DimensionError("detector autoencoders disagree on width");
    }
    entries_.push_back({std::move(label), std::move(model), tau});
}

double EnsembleDetector::calibrate(const Autoencoder& model, const Tensor& heldout, double q) {
    return percentile(model.row_rmse(heldout), q);
}

void EnsembleDetector::set_threshold(double tau) {
    for (auto& e : entries_) e.tau = tau;
}

Detection detect_model_type(const Tensor& probe, const EnsembleDetector& detector) {
    if (probe.rank() != 2 || probe.rows() == 0) throw ConfigError("detect_model_type: empty probe");
    Detection out;
    out.label = kIndependent;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : detector.entries()) {
        const double r = e.model.rmse(probe);
        out.rmse.push_back(r);
        if (r <= e.tau && r < best) {
            best = r;
            out.label = e.label;
        }
    }
    return out;
}

double roc_auc(std::span<const double> positive, std::span<const double> negative) {
    if (positive.empty() || negative.empty()) throw ConfigError("roc_auc needs both classes");
    double wins = 0.0;
    for (double p : positive) {
        for (double n : negative) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    }
    return wins / (static_cast<double>(positive.size()) * static_cast<double>(negative.size()));
}

void save_detector(const std::string& path, const EnsembleDetector& detector) {
    WeightFile file;
    file.magic = kDetectorMagic;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : detector.entries()) {
        entries.push_back({{"label", e.label}, {"tau", e.tau}});
        const std::string p = e.label + ".";
        file.add(p + "mean", e.model.mean);
        file.add(p + "scale", e.model.scale);
        file.add(p + "w1", e.model.w1);
        file.add(p + "b1", e.model.b1);
        file.add(p + "w2", e.model.w2);
        file.add(p + "b2", e.model.b2);
        file.add(p + "w3", e.model.w3);
        file.add(p + "b3", e.model.b3);
    }
    file.config_json = nlohmann::json{{"entries", entries}}.dump();
    save_weight_file(path, file);
}

EnsembleDetector load_detector(const std::string& path) {
    const WeightFile file = load_weight_file(path, kDetectorMagic);
    EnsembleDetector det;
    try {
        const auto cfg = nlohmann::json::parse(file.config_json);
        for (const auto& e : cfg.at("entries")) {
            const std::string label = e.at("label").get<std::string>();
            const std::string p = label + ".";
            Autoencoder ae;
            ae.mean = file.get(p + "mean");
            ae.scale = file.get(p + "scale");
            ae.w1 = file.get(p + "w1");
            ae.b1 = file.get(p + "b1");
            ae.w2 = file.get(p + "w2");
            ae.b2 = file.get(p + "b2");
            ae.w3 = file.get(p + "w3");
            ae.b3 = file.get(p + "b3");
            det.add(label, std::move(ae), e.at("tau").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("detector config: ") + e.what());
    }
    return det;
}

}  // namespace isinv

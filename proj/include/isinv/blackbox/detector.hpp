#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isinv/core/tensor.hpp"
#include "isinv/lm/model.hpp"

namespace isinv {

/// Mean over token rows: [n x d] -> [1 x d].
Tensor pool_states(const Tensor& h);
/// Stacks pooled states of many inputs into [N x d].
Tensor pool_dataset(std::span<const Tensor> states);

struct AutoencoderConfig {
    std::size_t hidden = 32;
    std::size_t bottleneck = 8;
    std::size_t epochs = 10;
    std::size_t batch = 16;
    double lr = 5e-3;
    std::uint64_t seed = 0;
};

/// Three dense layers d -> hidden -> bottleneck -> d with tanh between them,
/// operating on inputs standardized with the training set's statistics.
struct Autoencoder {
    Tensor mean, scale;  // [1 x d]
    Tensor w1, b1, w2, b2, w3, b3;

    std::size_t input_dim() const { return mean.cols(); }
    Tensor standardize(const Tensor& x) const;
    /// Reconstruction of standardize(x).
    Tensor reconstruct(const Tensor& x) const;
    /// Root mean squared reconstruction error of each row of x.
    std::vector<double> row_rmse(const Tensor& x) const;
    /// Root mean squared error over all rows of x.
    double rmse(const Tensor& x) const;
};

Autoencoder init_autoencoder(std::size_t d, const AutoencoderConfig& cfg);

struct AutoencoderTraining {
    Autoencoder model;
    std::vector<double> epoch_loss;
    double initial_mse = 0.0;
    double final_mse = 0.0;
};

/// Trains on rows of `data` [N x d], typically pooled IS vectors.
AutoencoderTraining train_autoencoder(const Tensor& data, const AutoencoderConfig& cfg);

/// Linear-interpolated percentile (q in [0, 100]) of `values`.
double percentile(std::vector<double> values, double q);

struct DetectorEntry {
    std::string label;
    Autoencoder model;
    double tau = 0.0;
};

class EnsembleDetector {
public:
    /// Registers a model family; labels must be unique.
    void add(std::string label, Autoencoder model, double tau);
    /// Sets tau to the given percentile of the model's RMSE over held-out rows.
    static double calibrate(const Autoencoder& model, const Tensor& heldout, double q = 99.0);
    void set_threshold(double tau);

    const std::vector<DetectorEntry>& entries() const { return entries_; }

private:
    std::vector<DetectorEntry> entries_;
};

inline constexpr const char* kIndependent = "independent";

struct Detection {
    std::string label;
    std::vector<double> rmse;  // per entry, registration order
};

/// Label of the minimal-RMSE autoencoder among those with RMSE <= tau, or
/// "independent". Ties keep the earlier registration.
Detection detect_model_type(const Tensor& probe, const EnsembleDetector& detector);

/// Area under the ROC curve for scores where larger means positive; ties
/// count one half.
double roc_auc(std::span<const double> positive, std::span<const double> negative);

inline constexpr const char* kDetectorMagic = "AEDT";
void save_detector(const std::string& path, const EnsembleDetector& detector);
EnsembleDetector load_detector(const std::string& path);

}  // namespace isinv

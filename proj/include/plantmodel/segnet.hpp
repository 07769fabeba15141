#pragma once

#include "plantmodel/blocks.hpp"
#include "plantmodel/point_cloud.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace plantmodel {

enum class NetMode { frequentist, bayesian };

std::string_view mode_name(NetMode m);
NetMode parse_mode(std::string_view s);

/**
 * Shape of the point-wise segmentation network.
 *
 * Per-point dense layers (`encoder_widths`, ReLU) produce a local feature; a
 * further dense layer of width `global_width` followed by a max-pool over the
 * block yields the global feature. Local and global features are concatenated
 * per point and passed through `decoder_widths` (ReLU) and a final linear
 * layer with `num_classes` outputs. `encoder_widths` and `decoder_widths` may
 * be empty; the smallest network has two layers.
 */
struct NetworkConfig {
    NetMode mode = NetMode::bayesian;
    int num_classes = 9;
    int feature_width = 6;
    std::vector<int> encoder_widths{32, 64};
    int global_width = 128;
    std::vector<int> decoder_widths{64, 32};
    int block_size = 4096;

    void validate() const;
    int num_layers() const { return static_cast<int>(encoder_widths.size() + decoder_widths.size()) + 2; }
    int global_layer() const { return static_cast<int>(encoder_widths.size()); }
    int local_width() const { return encoder_widths.empty() ? feature_width : encoder_widths.back(); }
};

/// One layer's variational parameters. Weights are W = mu_w (1 + tau_w eps),
/// tau_w = softplus(delta_w); biases likewise with one spread per layer.
struct VariationalLayer {
    Eigen::MatrixXd mu_w;  // out x in
    double delta_w = -4.0;
    Eigen::VectorXd mu_b;  // out
    double delta_b = -4.0;

    double tau_w() const;
    double tau_b() const;
};

struct VariationalParams {
    std::vector<VariationalLayer> layers;

    std::size_t num_scalars() const;
};

struct LayerNoise {
    Eigen::MatrixXd eps_w;
    Eigen::VectorXd eps_b;
};
using Noise = std::vector<LayerNoise>;

struct LayerWeights {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
};
using Weights = std::vector<LayerWeights>;

/// Gradient with the same layout as VariationalParams.
struct ParamGradient {
    struct Layer {
        Eigen::MatrixXd mu_w;
        double delta_w = 0.0;
        Eigen::VectorXd mu_b;
        double delta_b = 0.0;
    };
    std::vector<Layer> layers;
};

double softplus(double x);
double sigmoid(double x);

/// Fan-in scaled uniform means, all spreads set to `initial_delta`.
VariationalParams init_params(const NetworkConfig& cfg, std::uint64_t seed, double initial_delta = -4.0);

Noise zero_noise(const VariationalParams& params);
Noise draw_noise(const VariationalParams& params, std::uint64_t seed);

/// Concrete weights for given noise. Throws ValidationError on shape mismatch.
Weights realize(const VariationalParams& params, const Noise& noise);
Weights mean_weights(const VariationalParams& params);
Weights sample_weights(const VariationalParams& params, std::uint64_t seed);

/// Logits (num_classes x query points). The global feature is pooled over
/// `context`; every `query` column is classified against it. Features are
/// column-per-point.
Eigen::MatrixXd forward(const NetworkConfig& cfg, const Weights& w, const Eigen::MatrixXd& context,
                        const Eigen::MatrixXd& query);
Eigen::MatrixXd forward(const NetworkConfig& cfg, const Weights& w, const Eigen::MatrixXd& features);

Eigen::MatrixXd variational_forward(const NetworkConfig& cfg, const VariationalParams& params,
                                    const Eigen::MatrixXd& features, const Noise& noise);

/// Column-wise softmax.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// KL(q || N(0, 1)) of one scalar whose induced marginal is
/// N(mu, tau^2 mu^2 + kKlVarianceFloor).
double kl_scalar(double mu, double tau);
inline constexpr double kKlVarianceFloor = 1e-8;

/// Sum of kl_scalar over every weight and bias.
double kl_divergence(const VariationalParams& params);

struct TrainBlock {
    Eigen::MatrixXd features;  // feature_width x n
    std::vector<int> labels;   // n
};

struct LossTerms {
    double loss = 0.0;
    double cross_entropy = 0.0;
    double kl = 0.0;
    std::size_t correct = 0;
    std::size_t points = 0;
};

/**
 * Negative ELBO for one weight sample:
 *   mean cross-entropy over all points in `batch`
 *   + kl_weight * KL(q || prior) / dataset_size.
 * In frequentist mode the KL term is dropped and the mean weights are used.
 * When `grad` is non-null it receives d(loss)/d(mu, delta).
 */
LossTerms elbo_loss(const NetworkConfig& cfg, const VariationalParams& params, std::span<const TrainBlock> batch,
                    const Noise& noise, double kl_weight, double dataset_size, ParamGradient* grad = nullptr);

struct TrainConfig {
    int batch_size = 16;
    double momentum = 0.9;
    double lr_init = 0.01;
    int lr_decay_every = 10;
    double lr_decay_factor = 0.9;
    int epochs = 30;
    std::uint64_t seed = 0;
    double kl_weight = -1.0;  // < 0: 1 / number of training blocks

    /// Defaults for the given mode: 0.001/0.7 frequentist, 0.01/0.9 Bayesian.
    static TrainConfig defaults_for(NetMode mode);
    void validate() const;
    double learning_rate(int epoch) const;  // 0-based epoch
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    VariationalParams params;
    std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch SGD with momentum, deterministic for a given seed. Throws
/// TrainingError naming the epoch when the loss becomes non-finite.
TrainResult train(const TrainConfig& tc, const NetworkConfig& cfg, std::span<const TrainBlock> blocks,
                  const EpochCallback& on_epoch = {});

/// K x points x classes softmax outputs of K Monte Carlo forward passes.
class PredictiveSamples {
public:
    PredictiveSamples() = default;
    PredictiveSamples(int k, std::size_t points, int classes);

    int samples() const { return k_; }
    std::size_t points() const { return n_; }
    int classes() const { return m_; }

    double& at(int k, std::size_t i, int c) { return data_[index(k, i, c)]; }
    double at(int k, std::size_t i, int c) const { return data_[index(k, i, c)]; }
    std::span<const double> row(int k, std::size_t i) const { return {data_.data() + index(k, i, 0), std::size_t(m_)}; }
    std::span<double> row(int k, std::size_t i) { return {data_.data() + index(k, i, 0), std::size_t(m_)}; }

    /// Mean over samples for point i.
    std::vector<double> mean(std::size_t i) const;

    /// Throws ValidationError unless entries are in [0,1] and rows sum to 1 within tol.
    void validate(double tol = 1e-6) const;

    void save(const std::filesystem::path& path) const;
    static PredictiveSamples load(const std::filesystem::path& path);

private:
    std::size_t index(int k, std::size_t i, int c) const {
        return (static_cast<std::size_t>(k) * n_ + i) * static_cast<std::size_t>(m_) + static_cast<std::size_t>(c);
    }
    int k_ = 0;
    std::size_t n_ = 0;
    int m_ = 0;
    std::vector<double> data_;
};

/// Seed of the k-th Monte Carlo sample's noise stream.
std::uint64_t sample_seed(std::uint64_t seed, int k);

/// K forward passes, each with weights from sample_weights(params, sample_seed(seed, k)).
PredictiveSamples predict_mc(const NetworkConfig& cfg, const VariationalParams& params, const Eigen::MatrixXd& context,
                             const Eigen::MatrixXd& query, int k, std::uint64_t seed);

/// Argmax of the Monte Carlo mean; ties resolve to the lower class index.
std::vector<int> predict_class(const PredictiveSamples& samples);

// ---------------------------------------------------------------------------
// Cloud-level helpers

/// Per-point input features: coordinates relative to the block center (z
/// relative to the room floor) followed by coordinates normalized to the room.
Eigen::MatrixXd point_features(const PointCloud& cloud, const Bounds& room, const Block& block,
                               std::span<const std::size_t> indices);

struct BlockingParams {
    double block_edge = 4.0;
    std::uint64_t seed = 0;
};

/// Cuts a labeled cloud into resampled training blocks.
std::vector<TrainBlock> make_training_blocks(const PointCloud& cloud, const NetworkConfig& cfg,
                                             const BlockingParams& bp);

/// Monte Carlo prediction for every point of a cloud: each block's global
/// feature comes from its resampled points, every original point is classified.
PredictiveSamples predict_cloud(const NetworkConfig& cfg, const VariationalParams& params, const PointCloud& cloud,
                                int k, std::uint64_t seed, const BlockingParams& bp);

// ---------------------------------------------------------------------------
// Checkpoints: flat text, layer shapes followed by mu/delta arrays. Floats use
// the shortest representation that parses back to the same double.

void save_checkpoint(const NetworkConfig& cfg, const VariationalParams& params, const std::filesystem::path& path);

struct Checkpoint {
    NetworkConfig config;
    VariationalParams params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `epoch,loss,accuracy,lr` CSV.
void write_metrics_csv(std::span<const EpochMetrics> history, const std::filesystem::path& path);

}  // namespace plantmodel

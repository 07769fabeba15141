#pragma once

#include "plantmodel/point_cloud.hpp"
#include "plantmodel/segnet.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace plantmodel {

// All entropies are in nats.

/// Entropy of the Monte Carlo mean distribution per point.
std::vector<double> predictive_uncertainty(const PredictiveSamples& s);

/// Mean per-sample entropy per point.
std::vector<double> aleatoric_uncertainty(const PredictiveSamples& s);

/// Predictive minus aleatoric, clamped at zero.
std::vector<double> epistemic_uncertainty(const PredictiveSamples& s);

/// Sample variance (divisor K-1) of the predicted class's probability.
/// Requires K >= 2.
std::vector<double> predictive_variance(const PredictiveSamples& s);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Per point and class, the central `level` interval of the K probabilities
/// (linear-interpolation percentiles). Row-major: [i * classes + c].
std::vector<Interval> credible_intervals(const PredictiveSamples& s, double level = 0.95);

/// Linear-interpolation percentile of unsorted values, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// True where the predicted class's interval is disjoint from every other class's.
std::vector<bool> interval_certain(const PredictiveSamples& s, std::span<const Interval> intervals);

/// Uncertain iff value > mean + k_sigma * std (std with divisor n-1).
std::vector<bool> flag_uncertain(std::span<const double> values, double k_sigma = 2.0);

enum class UncertaintyMethod { predictive, aleatoric, epistemic, variance, credible };
inline constexpr std::array kAllMethods{UncertaintyMethod::predictive, UncertaintyMethod::aleatoric,
                                        UncertaintyMethod::epistemic, UncertaintyMethod::variance,
                                        UncertaintyMethod::credible};
std::string_view method_name(UncertaintyMethod m);
UncertaintyMethod parse_method(std::string_view s);

struct UncertaintyReport {
    int classes = 0;
    std::vector<int> predicted;
    std::vector<double> u_pred, u_alea, u_ep, variance;
    std::vector<Interval> intervals;  // [i * classes + c]
    std::vector<bool> ci_certain;
    std::vector<bool> flag_pred, flag_alea, flag_ep, flag_var;

    std::size_t size() const { return predicted.size(); }
    /// Per-point "uncertain" flags of one method.
    std::vector<bool> uncertain(UncertaintyMethod m) const;
};

/// Runs every estimator. The variance method needs K >= 2.
UncertaintyReport assess_uncertainty(const PredictiveSamples& s, double k_sigma = 2.0, double level = 0.95);

/// `point_id,u_pred,u_alea,u_ep,var,ci_certain,flag_pred,flag_alea,flag_ep,flag_var`
void write_uncertainty_csv(const UncertaintyReport& r, const std::filesystem::path& path);

struct FilterResult {
    PointCloud cloud;
    std::vector<std::size_t> kept;  // indices into the input
    double drop_fraction = 0.0;
};

/// Keeps the points whose flag is false (certain).
FilterResult filter_certain(const PointCloud& cloud, const std::vector<bool>& uncertain);

}  // namespace plantmodel

#include "plantmodel/uncertainty.hpp"

#include "plantmodel/error.hpp"
#include "plantmodel/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plantmodel {

namespace {

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

void require_samples(const PredictiveSamples& s) {
    if (s.samples() < 1) throw ValidationError("need at least one Monte Carlo sample");
}

}  // namespace

std::vector<double> predictive_uncertainty(const PredictiveSamples& s) {
    require_samples(s);
    std::vector<double> u(s.points());
    for (std::size_t i = 0; i < s.points(); ++i) u[i] = entropy(s.mean(i));
    return u;
}

std::vector<double> aleatoric_uncertainty(const PredictiveSamples& s) {
    require_samples(s);
    std::vector<double> u(s.points(), 0.0);
    for (std::size_t i = 0; i < s.points(); ++i) {
        for (int k = 0; k < s.samples(); ++k) u[i] += entropy(s.row(k, i));
        u[i] /= s.samples();
    }
    return u;
}

std::vector<double> epistemic_uncertainty(const PredictiveSamples& s) {
    auto u = predictive_uncertainty(s);
    const auto a = aleatoric_uncertainty(s);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::max(0.0, u[i] - a[i]);
    return u;
}

std::vector<double> predictive_variance(const PredictiveSamples& s) {
    if (s.samples() < 2) throw ValidationError("predictive variance needs K >= 2");
    const auto cls = predict_class(s);
    const int k = s.samples();
    std::vector<double> v(s.points());
    for (std::size_t i = 0; i < s.points(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < k; ++j) mean += s.at(j, i, cls[i]);
        mean /= k;
        double ss = 0.0;
        for (int j = 0; j < k; ++j) ss += (s.at(j, i, cls[i]) - mean) * (s.at(j, i, cls[i]) - mean);
        v[i] = ss / (k - 1);
    }
    return v;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("percentile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("percentile rank must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<Interval> credible_intervals(const PredictiveSamples& s, double level) {
    require_samples(s);
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("credible level must be in (0, 1)");
    const double tail = (1.0 - level) / 2.0;
    const int m = s.classes();
    std::vector<Interval> out(s.points() * static_cast<std::size_t>(m));
    std::vector<double> vals(static_cast<std::size_t>(s.samples()));
    for (std::size_t i = 0; i < s.points(); ++i) {
        for (int c = 0; c < m; ++c) {
            for (int k = 0; k < s.samples(); ++k) vals[static_cast<std::size_t>(k)] = s.at(k, i, c);
            out[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] = {percentile(vals, tail),
                                                                                   percentile(vals, 1.0 - tail)};
        }
    }
    return out;
}

std::vector<bool> interval_certain(const PredictiveSamples& s, std::span<const Interval> intervals) {
    const auto m = static_cast<std::size_t>(s.classes());
    if (intervals.size() != s.points() * m) throw ValidationError("interval table does not match the samples");
    const auto cls = predict_class(s);
    std::vector<bool> out(s.points());
    for (std::size_t i = 0; i < s.points(); ++i) {
        const Interval p = intervals[i * m + static_cast<std::size_t>(cls[i])];
        bool disjoint = true;
        for (std::size_t c = 0; c < m && disjoint; ++c) {
            if (c == static_cast<std::size_t>(cls[i])) continue;
            const Interval o = intervals[i * m + c];
            disjoint = p.lo > o.hi || p.hi < o.lo;
        }
        out[i] = disjoint;
    }
    return out;
}

std::vector<bool> flag_uncertain(std::span<const double> values, double k_sigma) {
    if (values.size() < 2) throw ValidationError("flagging needs at least two values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double threshold = mean + k_sigma * std::sqrt(ss / (n - 1.0));
    std::vector<bool> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] > threshold;
    return out;
}

std::string_view method_name(UncertaintyMethod m) {
    switch (m) {
        case UncertaintyMethod::predictive: return "predictive";
        case UncertaintyMethod::aleatoric: return "aleatoric";
        case UncertaintyMethod::epistemic: return "epistemic";
        case UncertaintyMethod::variance: return "variance";
        case UncertaintyMethod::credible: return "credible";
    }
    return "?";
}

UncertaintyMethod parse_method(std::string_view s) {
    for (auto m : kAllMethods)
        if (method_name(m) == s) return m;
    throw ValidationError("unknown uncertainty method '" + std::string(s) + "'");
}

std::vector<bool> UncertaintyReport::uncertain(UncertaintyMethod m) const {
    switch (m) {
        case UncertaintyMethod::predictive: return flag_pred;
        case UncertaintyMethod::aleatoric: return flag_alea;
        case UncertaintyMethod::epistemic: return flag_ep;
        case UncertaintyMethod::variance: return flag_var;
        case UncertaintyMethod::credible: {
            std::vector<bool> out(ci_certain.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = !ci_certain[i];
            return out;
        }
    }
    return {};
}

UncertaintyReport assess_uncertainty(const PredictiveSamples& s, double k_sigma, double level) {
    UncertaintyReport r;
    r.classes = s.classes();
    r.predicted = predict_class(s);
    r.u_pred = predictive_uncertainty(s);
    r.u_alea = aleatoric_uncertainty(s);
    r.u_ep.resize(r.u_pred.size());
    for (std::size_t i = 0; i < r.u_ep.size(); ++i) r.u_ep[i] = std::max(0.0, r.u_pred[i] - r.u_alea[i]);
    r.variance = predictive_variance(s);
    r.intervals = credible_intervals(s, level);
    r.ci_certain = interval_certain(s, r.intervals);
    r.flag_pred = flag_uncertain(r.u_pred, k_sigma);
    r.flag_alea = flag_uncertain(r.u_alea, k_sigma);
    r.flag_ep = flag_uncertain(r.u_ep, k_sigma);
    r.flag_var = flag_uncertain(r.variance, k_sigma);
    return r;
}

void write_uncertainty_csv(const UncertaintyReport& r, const std::filesystem::path& path) {
    std::string out = "point_id,u_pred,u_alea,u_ep,var,ci_certain,flag_pred,flag_alea,flag_ep,flag_var\n";
    auto flag = [&](bool b) { out += b ? ",1" : ",0"; };
    for (std::size_t i = 0; i < r.size(); ++i) {
        out += std::to_string(i);
        for (double v : {r.u_pred[i], r.u_alea[i], r.u_ep[i], r.variance[i]}) {
            out += ',';
            append_double(out, v);
        }
        flag(r.ci_certain[i]);
        flag(r.flag_pred[i]);
        flag(r.flag_alea[i]);
        flag(r.flag_ep[i]);
        flag(r.flag_var[i]);
        out += '\n';
    }
    write_text_file(path, out);
}

FilterResult filter_certain(const PointCloud& cloud, const std::vector<bool>& uncertain) {
    if (uncertain.size() != cloud.size()) throw ValidationError("flags do not match the cloud");
    FilterResult r;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (!uncertain[i]) r.kept.push_back(i);
    r.cloud = cloud.select(r.kept);
    r.drop_fraction = cloud.empty() ? 0.0 : 1.0 - static_cast<double>(r.kept.size()) / static_cast<double>(cloud.size());
    return r;
}

}  // namespace plantmodel

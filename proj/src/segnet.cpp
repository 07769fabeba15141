#include "plantmodel/segnet.hpp"

#include "plantmodel/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace plantmodel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view mode_name(NetMode m) { return m == NetMode::bayesian ? "bayesian" : "frequentist"; }

NetMode parse_mode(std::string_view s) {
    if (s == "bayesian") return NetMode::bayesian;
    if (s == "frequentist") return NetMode::frequentist;
    throw ValidationError("unknown network mode '" + std::string(s) + "'");
}

void NetworkConfig::validate() const {
    if (num_classes < 2) throw ValidationError("network needs at least 2 classes");
    if (feature_width < 1 || global_width < 1 || block_size < 1)
        throw ValidationError("network widths and block size must be >= 1");
    for (int w : encoder_widths)
        if (w < 1) throw ValidationError("encoder widths must be >= 1");
    for (int w : decoder_widths)
        if (w < 1) throw ValidationError("decoder widths must be >= 1");
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double VariationalLayer::tau_w() const { return softplus(delta_w); }
double VariationalLayer::tau_b() const { return softplus(delta_b); }

std::size_t VariationalParams::num_scalars() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.mu_w.size() + l.mu_b.size()) + 2;
    return n;
}

namespace {

// (out, in) of every layer in evaluation order.
std::vector<std::pair<int, int>> layer_shapes(const NetworkConfig& cfg) {
    std::vector<std::pair<int, int>> shapes;
    int in = cfg.feature_width;
    for (int w : cfg.encoder_widths) {
        shapes.emplace_back(w, in);
        in = w;
    }
    shapes.emplace_back(cfg.global_width, in);
    in = cfg.local_width() + cfg.global_width;
    for (int w : cfg.decoder_widths) {
        shapes.emplace_back(w, in);
        in = w;
    }
    shapes.emplace_back(cfg.num_classes, in);
    return shapes;
}

void check_shapes(const NetworkConfig& cfg, const Weights& w) {
    const auto shapes = layer_shapes(cfg);
    if (w.size() != shapes.size()) throw ValidationError("weight set has the wrong number of layers");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (w[i].w.rows() != shapes[i].first || w[i].w.cols() != shapes[i].second || w[i].b.size() != shapes[i].first)
            throw ValidationError("layer " + std::to_string(i) + " has the wrong shape");
    }
}

MatrixXd dense(const LayerWeights& l, const MatrixXd& in) {
    MatrixXd z = l.w * in;
    z.colwise() += l.b;
    return z;
}

MatrixXd relu(MatrixXd z) { return z.cwiseMax(0.0); }

struct Activations {
    std::vector<MatrixXd> enc;  // post-ReLU encoder outputs
    MatrixXd glob;              // post-ReLU global layer, before pooling
    VectorXd pooled;
    std::vector<Index> argmax;
    std::vector<MatrixXd> dec;  // post-ReLU decoder outputs
    MatrixXd logits;
};

const MatrixXd& local_of(const Activations& a, const MatrixXd& x) { return a.enc.empty() ? x : a.enc.back(); }

MatrixXd encode(const NetworkConfig& cfg, const Weights& w, const MatrixXd& x, std::vector<MatrixXd>* outs) {
    MatrixXd h = x;
    for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
        h = relu(dense(w[i], h));
        if (outs) outs->push_back(h);
    }
    return h;
}

VectorXd pool(const MatrixXd& g, std::vector<Index>* argmax) {
    VectorXd pooled(g.rows());
    if (argmax) argmax->assign(static_cast<std::size_t>(g.rows()), 0);
    for (Index j = 0; j < g.rows(); ++j) {
        Index best = 0;
        pooled[j] = g.row(j).maxCoeff(&best);
        if (argmax) (*argmax)[static_cast<std::size_t>(j)] = best;
    }
    return pooled;
}

MatrixXd decode(const NetworkConfig& cfg, const Weights& w, const MatrixXd& local, const VectorXd& pooled,
                std::vector<MatrixXd>* outs) {
    const std::size_t first = cfg.encoder_widths.size() + 1;
    const int lw = cfg.local_width();
    const auto& head = w[first];
    MatrixXd z = head.w.leftCols(lw) * local;
    z.colwise() += head.w.rightCols(cfg.global_width) * pooled + head.b;

    const std::size_t last = w.size() - 1;
    if (first == last) return z;
    MatrixXd h = relu(std::move(z));
    if (outs) outs->push_back(h);
    for (std::size_t i = first + 1; i < last; ++i) {
        h = relu(dense(w[i], h));
        if (outs) outs->push_back(h);
    }
    return dense(w[last], h);
}

void forward_cached(const NetworkConfig& cfg, const Weights& w, const MatrixXd& x, Activations& a) {
    a.enc.clear();
    a.dec.clear();
    const MatrixXd local = encode(cfg, w, x, &a.enc);
    a.glob = relu(dense(w[cfg.encoder_widths.size()], local));
    a.pooled = pool(a.glob, &a.argmax);
    a.logits = decode(cfg, w, local_of(a, x), a.pooled, &a.dec);
}

// Accumulates d(loss)/dW into `gw`, given dZ of the output layer.
void backward(const NetworkConfig& cfg, const Weights& w, const MatrixXd& x, const Activations& a, MatrixXd dz,
              Weights& gw) {
    const std::size_t n_layers = w.size();
    const std::size_t first = cfg.encoder_widths.size() + 1;
    const int lw = cfg.local_width();
    const MatrixXd& local = local_of(a, x);

    // Decoder layers above the concatenation, last to first.
    for (std::size_t i = n_layers - 1; i > first; --i) {
        const MatrixXd& in = a.dec[i - first - 1];
        gw[i].w.noalias() += dz * in.transpose();
        gw[i].b += dz.rowwise().sum();
        MatrixXd dh = w[i].w.transpose() * dz;
        dz = dh.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
    }

    // Concatenation layer: [local; pooled].
    const VectorXd dz_sum = dz.rowwise().sum();
    gw[first].w.leftCols(lw).noalias() += dz * local.transpose();
    gw[first].w.rightCols(cfg.global_width).noalias() += dz_sum * a.pooled.transpose();
    gw[first].b += dz_sum;
    MatrixXd dlocal = w[first].w.leftCols(lw).transpose() * dz;
    const VectorXd dpooled = w[first].w.rightCols(cfg.global_width).transpose() * dz_sum;

    // Max-pool routes each pooled gradient to its argmax point.
    const std::size_t g = cfg.encoder_widths.size();
    for (Index j = 0; j < a.glob.rows(); ++j) {
        const Index p = a.argmax[static_cast<std::size_t>(j)];
        if (a.glob(j, p) <= 0.0) continue;  // ReLU inactive
        const double d = dpooled[j];
        gw[g].w.row(j) += d * local.col(p).transpose();
        gw[g].b[j] += d;
        dlocal.col(p) += d * w[g].w.row(j).transpose();
    }

    // Encoder, last to first.
    for (std::size_t i = cfg.encoder_widths.size(); i-- > 0;) {
        const MatrixXd& out = a.enc[i];
        MatrixXd dzi = dlocal.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
        const MatrixXd& in = i == 0 ? x : a.enc[i - 1];
        gw[i].w.noalias() += dzi * in.transpose();
        gw[i].b += dzi.rowwise().sum();
        if (i > 0) dlocal = w[i].w.transpose() * dzi;
    }
}

Weights zero_like(const Weights& w) {
    Weights z(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        z[i].w = MatrixXd::Zero(w[i].w.rows(), w[i].w.cols());
        z[i].b = VectorXd::Zero(w[i].b.size());
    }
    return z;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

VariationalParams init_params(const NetworkConfig& cfg, std::uint64_t seed, double initial_delta) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    VariationalParams p;
    for (auto [out, in] : layer_shapes(cfg)) {
        VariationalLayer l;
        const double wb = std::sqrt(6.0 / in);
        const double bb = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> uw(-wb, wb), ub(-bb, bb);
        l.mu_w.resize(out, in);
        for (Index r = 0; r < out; ++r)
            for (Index c = 0; c < in; ++c) l.mu_w(r, c) = uw(rng);
        l.mu_b.resize(out);
        for (Index r = 0; r < out; ++r) l.mu_b[r] = ub(rng);
        l.delta_w = l.delta_b = initial_delta;
        p.layers.push_back(std::move(l));
    }
    return p;
}

Noise zero_noise(const VariationalParams& params) {
    Noise n;
    for (const auto& l : params.layers)
        n.push_back({MatrixXd::Zero(l.mu_w.rows(), l.mu_w.cols()), VectorXd::Zero(l.mu_b.size())});
    return n;
}

Noise draw_noise(const VariationalParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Noise n;
    for (const auto& l : params.layers) {
        LayerNoise ln{MatrixXd(l.mu_w.rows(), l.mu_w.cols()), VectorXd(l.mu_b.size())};
        for (Index i = 0; i < ln.eps_w.size(); ++i) ln.eps_w.data()[i] = normal(rng);
        for (Index i = 0; i < ln.eps_b.size(); ++i) ln.eps_b[i] = normal(rng);
        n.push_back(std::move(ln));
    }
    return n;
}

Weights realize(const VariationalParams& params, const Noise& noise) {
    if (noise.size() != params.layers.size()) throw ValidationError("noise has the wrong number of layers");
    Weights w;
    w.reserve(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        const auto& e = noise[i];
        if (e.eps_w.rows() != l.mu_w.rows() || e.eps_w.cols() != l.mu_w.cols() || e.eps_b.size() != l.mu_b.size())
            throw ValidationError("noise for layer " + std::to_string(i) + " has the wrong shape");
        LayerWeights lw;
        lw.w = l.mu_w.cwiseProduct((1.0 + l.tau_w() * e.eps_w.array()).matrix());
        lw.b = l.mu_b.cwiseProduct((1.0 + l.tau_b() * e.eps_b.array()).matrix());
        w.push_back(std::move(lw));
    }
    return w;
}

Weights mean_weights(const VariationalParams& params) {
    Weights w;
    for (const auto& l : params.layers) w.push_back({l.mu_w, l.mu_b});
    return w;
}

Weights sample_weights(const VariationalParams& params, std::uint64_t seed) {
    return realize(params, draw_noise(params, seed));
}

MatrixXd forward(const NetworkConfig& cfg, const Weights& w, const MatrixXd& context, const MatrixXd& query) {
    check_shapes(cfg, w);
    if (context.rows() != cfg.feature_width || query.rows() != cfg.feature_width)
        throw ValidationError("feature matrix has the wrong number of rows");
    if (context.cols() == 0) throw ValidationError("context block is empty");
    const MatrixXd ctx_local = encode(cfg, w, context, nullptr);
    const VectorXd pooled = pool(relu(dense(w[cfg.encoder_widths.size()], ctx_local)), nullptr);
    if (&context == &query) return decode(cfg, w, ctx_local, pooled, nullptr);
    return decode(cfg, w, encode(cfg, w, query, nullptr), pooled, nullptr);
}

MatrixXd forward(const NetworkConfig& cfg, const Weights& w, const MatrixXd& features) {
    return forward(cfg, w, features, features);
}

MatrixXd variational_forward(const NetworkConfig& cfg, const VariationalParams& params, const MatrixXd& features,
                             const Noise& noise) {
    return forward(cfg, realize(params, noise), features);
}

MatrixXd softmax(const MatrixXd& logits) {
    MatrixXd p(logits.rows(), logits.cols());
    for (Index c = 0; c < logits.cols(); ++c) {
        const double mx = logits.col(c).maxCoeff();
        p.col(c) = (logits.col(c).array() - mx).exp().matrix();
        p.col(c) /= p.col(c).sum();
    }
    return p;
}

double kl_scalar(double mu, double tau) {
    const double var = tau * tau * mu * mu + kKlVarianceFloor;
    return 0.5 * (var + mu * mu - 1.0 - std::log(var));
}

double kl_divergence(const VariationalParams& params) {
    double kl = 0.0;
    for (const auto& l : params.layers) {
        const double tw = l.tau_w(), tb = l.tau_b();
        for (Index i = 0; i < l.mu_w.size(); ++i) kl += kl_scalar(l.mu_w.data()[i], tw);
        for (Index i = 0; i < l.mu_b.size(); ++i) kl += kl_scalar(l.mu_b[i], tb);
    }
    return kl;
}

namespace {

// d KL / d mu and d KL / d tau for one scalar.
std::pair<double, double> kl_scalar_grad(double mu, double tau) {
    const double var = tau * tau * mu * mu + kKlVarianceFloor;
    const double dvar_common = 0.5 * (1.0 - 1.0 / var);  // d KL / d var
    const double d_mu = dvar_common * 2.0 * tau * tau * mu + mu;
    const double d_tau = dvar_common * 2.0 * tau * mu * mu;
    return {d_mu, d_tau};
}

}  // namespace

LossTerms elbo_loss(const NetworkConfig& cfg, const VariationalParams& params, std::span<const TrainBlock> batch,
                    const Noise& noise, double kl_weight, double dataset_size, ParamGradient* grad) {
    const bool bayes = cfg.mode == NetMode::bayesian;
    const Weights w = bayes ? realize(params, noise) : mean_weights(params);
    check_shapes(cfg, w);

    std::size_t total = 0;
    for (const auto& b : batch) {
        if (b.features.rows() != cfg.feature_width || static_cast<std::size_t>(b.features.cols()) != b.labels.size())
            throw ValidationError("training block has inconsistent shapes");
        total += b.labels.size();
    }
    if (total == 0) throw ValidationError("empty training batch");
    const double inv_n = 1.0 / static_cast<double>(total);

    LossTerms terms;
    terms.points = total;
    Weights gw;
    if (grad) gw = zero_like(w);

    Activations act;
    for (const auto& b : batch) {
        forward_cached(cfg, w, b.features, act);
        MatrixXd dz = softmax(act.logits);
        for (Index c = 0; c < dz.cols(); ++c) {
            const int y = b.labels[static_cast<std::size_t>(c)];
            if (y < 0 || y >= cfg.num_classes) throw ValidationError("label out of range");
            const double mx = act.logits.col(c).maxCoeff();
            const double lse = mx + std::log((act.logits.col(c).array() - mx).exp().sum());
            terms.cross_entropy += (lse - act.logits(y, c)) * inv_n;
            Index arg = 0;
            act.logits.col(c).maxCoeff(&arg);
            if (arg == y) ++terms.correct;
            dz(y, c) -= 1.0;
        }
        if (grad) backward(cfg, w, b.features, act, dz * inv_n, gw);
    }

    const double kl_scale = bayes ? kl_weight / dataset_size : 0.0;
    if (bayes) terms.kl = kl_divergence(params);
    terms.loss = terms.cross_entropy + kl_scale * terms.kl;

    if (grad) {
        grad->layers.assign(params.layers.size(), {});
        for (std::size_t i = 0; i < params.layers.size(); ++i) {
            const auto& l = params.layers[i];
            auto& g = grad->layers[i];
            if (!bayes) {
                g.mu_w = gw[i].w;
                g.mu_b = gw[i].b;
                continue;
            }
            const double tw = l.tau_w(), tb = l.tau_b();
            const auto& e = noise[i];
            // W = mu (1 + tau eps): dW/dmu = 1 + tau eps, dW/dtau = mu eps.
            g.mu_w = gw[i].w.cwiseProduct((1.0 + tw * e.eps_w.array()).matrix());
            g.mu_b = gw[i].b.cwiseProduct((1.0 + tb * e.eps_b.array()).matrix());
            double dtau_w = (gw[i].w.array() * l.mu_w.array() * e.eps_w.array()).sum();
            double dtau_b = (gw[i].b.array() * l.mu_b.array() * e.eps_b.array()).sum();
            if (kl_scale != 0.0) {
                for (Index k = 0; k < l.mu_w.size(); ++k) {
                    auto [dm, dt] = kl_scalar_grad(l.mu_w.data()[k], tw);
                    g.mu_w.data()[k] += kl_scale * dm;
                    dtau_w += kl_scale * dt;
                }
                for (Index k = 0; k < l.mu_b.size(); ++k) {
                    auto [dm, dt] = kl_scalar_grad(l.mu_b[k], tb);
                    g.mu_b[k] += kl_scale * dm;
                    dtau_b += kl_scale * dt;
                }
            }
            g.delta_w = dtau_w * sigmoid(l.delta_w);
            g.delta_b = dtau_b * sigmoid(l.delta_b);
        }
    }
    return terms;
}

TrainConfig TrainConfig::defaults_for(NetMode mode) {
    TrainConfig tc;
    if (mode == NetMode::frequentist) {
        tc.lr_init = 0.001;
        tc.lr_decay_factor = 0.7;
    } else {
        tc.lr_init = 0.01;
        tc.lr_decay_factor = 0.9;
    }
    return tc;
}

void TrainConfig::validate() const {
    if (batch_size < 1 || epochs < 1 || lr_decay_every < 1) throw ValidationError("batch size, epochs and decay period must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
    if (!(lr_init > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ValidationError("decay factor must be in (0, 1]");
}

double TrainConfig::learning_rate(int epoch) const {
    return lr_init * std::pow(lr_decay_factor, epoch / lr_decay_every);
}

TrainResult train(const TrainConfig& tc, const NetworkConfig& cfg, std::span<const TrainBlock> blocks,
                  const EpochCallback& on_epoch) {
    tc.validate();
    cfg.validate();
    if (blocks.empty()) throw ValidationError("training needs at least one block");

    TrainResult result;
    result.params = init_params(cfg, mix(tc.seed, 1));
    auto& params = result.params;
    const bool bayes = cfg.mode == NetMode::bayesian;

    std::size_t dataset_points = 0;
    for (const auto& b : blocks) dataset_points += b.labels.size();
    const double kl_weight = tc.kl_weight >= 0.0 ? tc.kl_weight : 1.0 / static_cast<double>(blocks.size());

    ParamGradient velocity;
    for (const auto& l : params.layers)
        velocity.layers.push_back({MatrixXd::Zero(l.mu_w.rows(), l.mu_w.cols()), 0.0, VectorXd::Zero(l.mu_b.size()), 0.0});

    std::mt19937_64 rng(mix(tc.seed, 2));
    std::vector<std::size_t> order(blocks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uint64_t step = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = tc.learning_rate(epoch);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0, seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            std::vector<TrainBlock> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(blocks[order[i]]);

            const Noise noise = bayes ? draw_noise(params, mix(tc.seed, 1000 + step)) : zero_noise(params);
            ++step;
            ParamGradient g;
            const auto terms = elbo_loss(cfg, params, batch, noise, kl_weight, static_cast<double>(dataset_points), &g);
            if (!std::isfinite(terms.loss)) throw TrainingError(epoch + 1, "loss diverged");

            for (std::size_t i = 0; i < params.layers.size(); ++i) {
                auto& v = velocity.layers[i];
                auto& p = params.layers[i];
                v.mu_w = tc.momentum * v.mu_w + g.layers[i].mu_w;
                v.mu_b = tc.momentum * v.mu_b + g.layers[i].mu_b;
                p.mu_w -= lr * v.mu_w;
                p.mu_b -= lr * v.mu_b;
                if (bayes) {
                    v.delta_w = tc.momentum * v.delta_w + g.layers[i].delta_w;
                    v.delta_b = tc.momentum * v.delta_b + g.layers[i].delta_b;
                    p.delta_w -= lr * v.delta_w;
                    p.delta_b -= lr * v.delta_b;
                }
            }
            loss_sum += terms.loss;
            correct += terms.correct;
            seen += terms.points;
            ++batches;
        }
        EpochMetrics m{epoch + 1, loss_sum / static_cast<double>(batches),
                       static_cast<double>(correct) / static_cast<double>(seen), lr};
        if (!std::isfinite(m.loss)) throw TrainingError(epoch + 1, "loss diverged");
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

// ---------------------------------------------------------------------------

PredictiveSamples::PredictiveSamples(int k, std::size_t points, int classes)
    : k_(k), n_(points), m_(classes), data_(static_cast<std::size_t>(k) * points * static_cast<std::size_t>(classes), 0.0) {
    if (k < 1 || classes < 1) throw ValidationError("predictive samples need K >= 1 and at least one class");
}

std::vector<double> PredictiveSamples::mean(std::size_t i) const {
    std::vector<double> m(static_cast<std::size_t>(m_), 0.0);
    for (int k = 0; k < k_; ++k) {
        const auto r = row(k, i);
        for (int c = 0; c < m_; ++c) m[static_cast<std::size_t>(c)] += r[static_cast<std::size_t>(c)];
    }
    for (auto& v : m) v /= k_;
    return m;
}

void PredictiveSamples::validate(double tol) const {
    for (int k = 0; k < k_; ++k) {
        for (std::size_t i = 0; i < n_; ++i) {
            double s = 0.0;
            for (double v : row(k, i)) {
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("probability outside [0, 1]");
                s += v;
            }
            if (std::abs(s - 1.0) > tol) throw ValidationError("probability row does not sum to 1");
        }
    }
}

namespace {
constexpr char kSamplesMagic[8] = {'P', 'M', 'P', 'S', 'v', '1', '\0', '\0'};
}

void PredictiveSamples::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    const std::uint64_t header[3] = {static_cast<std::uint64_t>(k_), n_, static_cast<std::uint64_t>(m_)};
    f.write(kSamplesMagic, sizeof kSamplesMagic);
    f.write(reinterpret_cast<const char*>(header), sizeof header);
    f.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size() * sizeof(double)));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

PredictiveSamples PredictiveSamples::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    char magic[8];
    std::uint64_t header[3];
    f.read(magic, sizeof magic);
    f.read(reinterpret_cast<char*>(header), sizeof header);
    if (!f || !std::equal(magic, magic + 8, kSamplesMagic)) throw ValidationError("not a predictive-samples file");
    PredictiveSamples s(static_cast<int>(header[0]), header[1], static_cast<int>(header[2]));
    f.read(reinterpret_cast<char*>(s.data_.data()), static_cast<std::streamsize>(s.data_.size() * sizeof(double)));
    if (!f) throw ValidationError("truncated predictive-samples file");
    return s;
}

std::uint64_t sample_seed(std::uint64_t seed, int k) { return mix(seed, static_cast<std::uint64_t>(k) + 77); }

PredictiveSamples predict_mc(const NetworkConfig& cfg, const VariationalParams& params, const MatrixXd& context,
                             const MatrixXd& query, int k, std::uint64_t seed) {
    PredictiveSamples out(k, static_cast<std::size_t>(query.cols()), cfg.num_classes);
    for (int s = 0; s < k; ++s) {
        const Weights w =
            cfg.mode == NetMode::bayesian ? sample_weights(params, sample_seed(seed, s)) : mean_weights(params);
        const MatrixXd p = softmax(forward(cfg, w, context, query));
        for (Index i = 0; i < p.cols(); ++i)
            for (int c = 0; c < cfg.num_classes; ++c) out.at(s, static_cast<std::size_t>(i), c) = p(c, i);
    }
    return out;
}

std::vector<int> predict_class(const PredictiveSamples& samples) {
    std::vector<int> out(samples.points());
    for (std::size_t i = 0; i < samples.points(); ++i) {
        const auto m = samples.mean(i);
        out[i] = static_cast<int>(std::max_element(m.begin(), m.end()) - m.begin());  // first max wins
    }
    return out;
}

// ---------------------------------------------------------------------------

MatrixXd point_features(const PointCloud& cloud, const Bounds& room, const Block& block,
                        std::span<const std::size_t> indices) {
    const Vec3 ext = room.extent().cwiseMax(Vec3::Constant(1e-9));
    const double cx = block.origin.x() + block.edge / 2.0;
    const double cy = block.origin.y() + block.edge / 2.0;
    MatrixXd f(6, static_cast<Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Vec3& p = cloud.points[indices[k]];
        const Index c = static_cast<Index>(k);
        f(0, c) = p.x() - cx;
        f(1, c) = p.y() - cy;
        f(2, c) = p.z() - room.min.z();
        f(3, c) = (p.x() - room.min.x()) / ext.x();
        f(4, c) = (p.y() - room.min.y()) / ext.y();
        f(5, c) = (p.z() - room.min.z()) / ext.z();
    }
    return f;
}

std::vector<TrainBlock> make_training_blocks(const PointCloud& cloud, const NetworkConfig& cfg,
                                             const BlockingParams& bp) {
    if (!cloud.has_labels()) throw ValidationError("training cloud has no labels");
    if (cfg.feature_width != 6) throw ValidationError("point features have width 6");
    const Bounds room = bounds_of(cloud.points);
    std::vector<TrainBlock> out;
    for (const auto& blk : partition_blocks(cloud, bp.block_edge, static_cast<std::size_t>(cfg.block_size), bp.seed)) {
        TrainBlock tb;
        tb.features = point_features(cloud, room, blk, blk.resampled_indices);
        tb.labels.reserve(blk.resampled_indices.size());
        for (auto i : blk.resampled_indices) tb.labels.push_back(cloud.labels[i]);
        out.push_back(std::move(tb));
    }
    return out;
}

PredictiveSamples predict_cloud(const NetworkConfig& cfg, const VariationalParams& params, const PointCloud& cloud,
                                int k, std::uint64_t seed, const BlockingParams& bp) {
    if (cfg.feature_width != 6) throw ValidationError("point features have width 6");
    PredictiveSamples out(k, cloud.size(), cfg.num_classes);
    if (cloud.empty()) return out;
    const Bounds room = bounds_of(cloud.points);
    const auto blocks = partition_blocks(cloud, bp.block_edge, static_cast<std::size_t>(cfg.block_size), bp.seed);

    std::vector<MatrixXd> contexts, queries;
    for (const auto& blk : blocks) {
        contexts.push_back(point_features(cloud, room, blk, blk.resampled_indices));
        queries.push_back(point_features(cloud, room, blk, blk.point_indices));
    }
    for (int s = 0; s < k; ++s) {
        const Weights w =
            cfg.mode == NetMode::bayesian ? sample_weights(params, sample_seed(seed, s)) : mean_weights(params);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const MatrixXd p = softmax(forward(cfg, w, contexts[b], queries[b]));
            const auto& idx = blocks[b].point_indices;
            for (std::size_t j = 0; j < idx.size(); ++j)
                for (int c = 0; c < cfg.num_classes; ++c) out.at(s, idx[j], c) = p(c, static_cast<Index>(j));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void put(std::ostream& os, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, ptr - buf);
}

void put_widths(std::ostream& os, const char* key, const std::vector<int>& w) {
    os << key;
    for (int v : w) os << ' ' << v;
    os << '\n';
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    std::vector<std::string> expect(const std::string& key) {
        std::string line;
        do {
            if (!std::getline(in_, line)) throw ParseError(line_no_ + 1, "unexpected end of checkpoint, wanted '" + key + "'");
            ++line_no_;
        } while (line.empty());
        std::istringstream ss(line);
        std::vector<std::string> toks;
        for (std::string t; ss >> t;) toks.push_back(t);
        if (toks.empty() || toks[0] != key) throw ParseError(line_no_, "expected '" + key + "'");
        toks.erase(toks.begin());
        return toks;
    }

    double number(const std::string& tok) const {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw ParseError(line_no_, "bad number '" + tok + "'");
        return v;
    }

    int integer(const std::string& tok) const {
        int v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw ParseError(line_no_, "bad integer '" + tok + "'");
        return v;
    }

    std::vector<int> integers(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        for (const auto& t : toks) out.push_back(integer(t));
        return out;
    }

    std::size_t line() const { return line_no_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

}  // namespace

void save_checkpoint(const NetworkConfig& cfg, const VariationalParams& params, const std::filesystem::path& path) {
    const auto shapes = layer_shapes(cfg);
    if (shapes.size() != params.layers.size()) throw ValidationError("parameters do not match the network config");
    std::ostringstream os;
    os << "plantmodel-segnet 1\n";
    os << "mode " << mode_name(cfg.mode) << '\n';
    os << "num_classes " << cfg.num_classes << '\n';
    os << "feature_width " << cfg.feature_width << '\n';
    put_widths(os, "encoder_widths", cfg.encoder_widths);
    os << "global_width " << cfg.global_width << '\n';
    put_widths(os, "decoder_widths", cfg.decoder_widths);
    os << "block_size " << cfg.block_size << '\n';
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        if (l.mu_w.rows() != shapes[i].first || l.mu_w.cols() != shapes[i].second)
            throw ValidationError("parameters do not match the network config");
        os << "layer " << i << ' ' << l.mu_w.rows() << ' ' << l.mu_w.cols() << '\n';
        os << "delta_w ";
        put(os, l.delta_w);
        os << "\ndelta_b ";
        put(os, l.delta_b);
        os << "\nmu_w";
        for (Index r = 0; r < l.mu_w.rows(); ++r)
            for (Index c = 0; c < l.mu_w.cols(); ++c) {
                os << ' ';
                put(os, l.mu_w(r, c));
            }
        os << "\nmu_b";
        for (Index r = 0; r < l.mu_b.size(); ++r) {
            os << ' ';
            put(os, l.mu_b[r]);
        }
        os << '\n';
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    const std::string s = os.str();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    LineReader rd(f);
    const auto magic = rd.expect("plantmodel-segnet");
    if (magic.size() != 1 || magic[0] != "1") throw ParseError(rd.line(), "unsupported checkpoint version");

    Checkpoint ck;
    auto& cfg = ck.config;
    const auto mode = rd.expect("mode");
    if (mode.size() != 1) throw ParseError(rd.line(), "mode needs one value");
    cfg.mode = parse_mode(mode[0]);
    cfg.num_classes = rd.integer(rd.expect("num_classes").at(0));
    cfg.feature_width = rd.integer(rd.expect("feature_width").at(0));
    cfg.encoder_widths = rd.integers(rd.expect("encoder_widths"));
    cfg.global_width = rd.integer(rd.expect("global_width").at(0));
    cfg.decoder_widths = rd.integers(rd.expect("decoder_widths"));
    cfg.block_size = rd.integer(rd.expect("block_size").at(0));
    cfg.validate();

    for (auto [out, in] : layer_shapes(cfg)) {
        const auto hdr = rd.integers(rd.expect("layer"));
        if (hdr.size() != 3 || hdr[0] != static_cast<int>(ck.params.layers.size()) || hdr[1] != out || hdr[2] != in)
            throw ParseError(rd.line(), "layer header does not match the network config");
        VariationalLayer l;
        l.delta_w = rd.number(rd.expect("delta_w").at(0));
        l.delta_b = rd.number(rd.expect("delta_b").at(0));
        const auto w = rd.expect("mu_w");
        if (w.size() != static_cast<std::size_t>(out) * static_cast<std::size_t>(in))
            throw ParseError(rd.line(), "mu_w has the wrong length");
        l.mu_w.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) l.mu_w(r, c) = rd.number(w[static_cast<std::size_t>(r * in + c)]);
        const auto b = rd.expect("mu_b");
        if (b.size() != static_cast<std::size_t>(out)) throw ParseError(rd.line(), "mu_b has the wrong length");
        l.mu_b.resize(out);
        for (int r = 0; r < out; ++r) l.mu_b[r] = rd.number(b[static_cast<std::size_t>(r)]);
        ck.params.layers.push_back(std::move(l));
    }
    return ck;
}

void write_metrics_csv(std::span<const EpochMetrics> history, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "epoch,loss,accuracy,lr\n";
    for (const auto& m : history) {
        os << m.epoch << ',';
        put(os, m.loss);
        os << ',';
        put(os, m.accuracy);
        os << ',';
        put(os, m.lr);
        os << '\n';
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f << os.str();
}

}  // namespace plantmodel

#include <doctest.h>

#include "plantmodel/error.hpp"
#include "plantmodel/segnet.hpp"
#include "test_support.hpp"

#include <cmath>
#include <fstream>
#include <random>

using namespace plantmodel;
using Eigen::MatrixXd;

namespace {

NetworkConfig tiny_config(NetMode mode = NetMode::bayesian) {
    NetworkConfig cfg;
    cfg.mode = mode;
    cfg.num_classes = 3;
    cfg.feature_width = 4;
    cfg.encoder_widths = {5};
    cfg.global_width = 6;
    cfg.decoder_widths = {5};
    return cfg;
}

MatrixXd random_features(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd f(rows, cols);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
    return f;
}

// Two classes split by the sign of the first feature, with a margin.
std::vector<TrainBlock> separable_blocks(std::uint64_t seed, int n_blocks, int points) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<TrainBlock> blocks;
    for (int b = 0; b < n_blocks; ++b) {
        TrainBlock tb;
        tb.features.resize(2, points);
        for (int i = 0; i < points; ++i) {
            double x = u(rng);
            if (std::abs(x) < 0.1) x = x < 0 ? -0.1 : 0.1;
            tb.features(0, i) = x;
            tb.features(1, i) = u(rng);
            tb.labels.push_back(x > 0 ? 1 : 0);
        }
        blocks.push_back(std::move(tb));
    }
    return blocks;
}

NetworkConfig separable_config(NetMode mode) {
    NetworkConfig cfg;
    cfg.mode = mode;
    cfg.num_classes = 2;
    cfg.feature_width = 2;
    cfg.encoder_widths = {8};
    cfg.global_width = 8;
    cfg.decoder_widths = {8};
    return cfg;
}

}  // namespace

TEST_CASE("zero noise reproduces the mean-weight network") {
    std::mt19937_64 rng(1);
    const auto cfg = tiny_config();
    auto params = init_params(cfg, 3);
    for (auto& l : params.layers) l.delta_w = l.delta_b = 1.5;
    const MatrixXd x = random_features(rng, cfg.feature_width, 40);
    const MatrixXd a = variational_forward(cfg, params, x, zero_noise(params));
    const MatrixXd b = forward(cfg, mean_weights(params), x);
    CHECK(a == b);
}

TEST_CASE("vanishing spread ignores the noise") {
    std::mt19937_64 rng(2);
    const auto cfg = tiny_config();
    auto params = init_params(cfg, 4);
    for (auto& l : params.layers) l.delta_w = l.delta_b = -800.0;
    const MatrixXd x = random_features(rng, cfg.feature_width, 30);
    const MatrixXd a = variational_forward(cfg, params, x, draw_noise(params, 9));
    const MatrixXd b = forward(cfg, mean_weights(params), x);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reparametrized weight by hand") {
    VariationalParams p;
    VariationalLayer l;
    l.mu_w = MatrixXd::Constant(1, 1, 2.0);
    l.mu_b = Eigen::VectorXd::Constant(1, 0.25);
    l.delta_w = std::log(std::exp(1.0) - 1.0);  // tau = 1
    l.delta_b = -800.0;
    p.layers.push_back(l);
    CHECK(l.tau_w() == doctest::Approx(1.0).epsilon(1e-14));
    Noise e{{MatrixXd::Constant(1, 1, 0.5), Eigen::VectorXd::Zero(1)}};
    const auto w = realize(p, e);
    CHECK(w[0].w(0, 0) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(w[0].w(0, 0) * 1.0 + w[0].b[0] == doctest::Approx(3.25).epsilon(1e-14));

    Noise bad{{MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(1)}};
    CHECK_THROWS_AS(realize(p, bad), ValidationError);
}

TEST_CASE("sampled weights have mean mu and spread |mu| tau") {
    VariationalParams p;
    VariationalLayer l;
    l.mu_w = MatrixXd::Constant(1, 1, 1.0);
    l.mu_b = Eigen::VectorXd::Zero(1);
    l.delta_w = std::log(std::exp(0.1) - 1.0);  // tau = 0.1
    p.layers.push_back(l);
    const int n = 10000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = sample_weights(p, static_cast<std::uint64_t>(i))[0].w(0, 0);
        s += w;
        s2 += w * w;
    }
    const double mean = s / n;
    const double sd = std::sqrt((s2 - n * mean * mean) / (n - 1));
    CHECK(std::abs(mean - 1.0) <= 0.01);
    CHECK(std::abs(sd - 0.1) <= 0.01);

    p.layers[0].delta_w = -1e4;  // tau underflows to 0
    CHECK(p.layers[0].tau_w() == 0.0);
    for (int i = 0; i < 50; ++i) CHECK(sample_weights(p, static_cast<std::uint64_t>(i))[0].w(0, 0) == 1.0);
}

TEST_CASE("KL of a zero-mean weight is finite") {
    const double tau = 0.3;
    const double v = kKlVarianceFloor;  // tau^2 * 0^2 + floor
    const double expected = 0.5 * (v - 1.0 - std::log(v));
    CHECK(std::isfinite(kl_scalar(0.0, tau)));
    CHECK(kl_scalar(0.0, tau) == doctest::Approx(expected).epsilon(1e-14));
    // Standard closed form for a non-degenerate case: KL(N(m, s^2) || N(0, 1)).
    const double m = 1.5, s2 = tau * tau * m * m + kKlVarianceFloor;
    CHECK(kl_scalar(m, tau) == doctest::Approx(std::log(1.0 / std::sqrt(s2)) + (s2 + m * m) / 2.0 - 0.5).epsilon(1e-12));
}

TEST_CASE("ELBO reductions") {
    std::mt19937_64 rng(3);
    auto cfg = tiny_config();
    auto params = init_params(cfg, 5);
    for (auto& l : params.layers) l.delta_w = l.delta_b = -800.0;
    std::vector<TrainBlock> batch{{random_features(rng, cfg.feature_width, 25), std::vector<int>(25, 1)}};
    const auto bayes = elbo_loss(cfg, params, batch, draw_noise(params, 1), 0.0, 100.0);
    auto fcfg = cfg;
    fcfg.mode = NetMode::frequentist;
    const auto freq = elbo_loss(fcfg, params, batch, zero_noise(params), 0.0, 100.0);
    CHECK(bayes.loss == doctest::Approx(freq.loss).epsilon(1e-14));

    // A huge output bias on the true class drives the loss to zero.
    params.layers.back().mu_b[1] = 1e3;
    CHECK(elbo_loss(fcfg, params, batch, zero_noise(params), 0.0, 100.0).loss < 1e-12);

    batch[0].labels[0] = 7;
    CHECK_THROWS_AS(elbo_loss(fcfg, params, batch, zero_noise(params), 0.0, 100.0), ValidationError);
}

TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(11);
    NetworkConfig cfg;
    cfg.num_classes = 3;
    cfg.feature_width = 3;
    cfg.encoder_widths = {};
    cfg.global_width = 4;
    cfg.decoder_widths = {};
    REQUIRE(cfg.num_layers() == 2);

    auto params = init_params(cfg, 12, -1.0);
    params.layers[0].delta_w = -0.5;
    params.layers[1].delta_b = 0.3;
    std::vector<TrainBlock> batch;
    for (int b = 0; b < 2; ++b) {
        TrainBlock tb{random_features(rng, 3, 12), {}};
        for (int i = 0; i < 12; ++i) tb.labels.push_back(static_cast<int>(rng() % 3));
        batch.push_back(std::move(tb));
    }
    const Noise noise = draw_noise(params, 13);
    const double kl_weight = 0.7, n_data = 50.0, h = 1e-4;
    auto loss_at = [&](const VariationalParams& p) { return elbo_loss(cfg, p, batch, noise, kl_weight, n_data).loss; };

    ParamGradient g;
    elbo_loss(cfg, params, batch, noise, kl_weight, n_data, &g);

    auto check = [&](double analytic, double& slot) {
        const double keep = slot;
        slot = keep + h;
        const double up = loss_at(params);
        slot = keep - h;
        const double down = loss_at(params);
        slot = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        CHECK(rel <= 1e-3);
    };
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& l = params.layers[i];
        for (Eigen::Index k = 0; k < l.mu_w.size(); ++k) check(g.layers[i].mu_w.data()[k], l.mu_w.data()[k]);
        for (Eigen::Index k = 0; k < l.mu_b.size(); ++k) check(g.layers[i].mu_b[k], l.mu_b[k]);
        check(g.layers[i].delta_w, l.delta_w);
        check(g.layers[i].delta_b, l.delta_b);
    }
}

TEST_CASE("gradient check on a network with hidden layers") {
    std::mt19937_64 rng(21);
    const auto cfg = tiny_config();
    auto params = init_params(cfg, 22, -1.5);
    std::vector<TrainBlock> batch{{random_features(rng, cfg.feature_width, 15), {}}};
    for (int i = 0; i < 15; ++i) batch[0].labels.push_back(static_cast<int>(rng() % 3));
    const Noise noise = draw_noise(params, 23);
    ParamGradient g;
    elbo_loss(cfg, params, batch, noise, 1.0, 30.0, &g);
    const double h = 1e-5;
    int bad = 0, total = 0;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& l = params.layers[i];
        auto probe = [&](double analytic, double& slot) {
            const double keep = slot;
            slot = keep + h;
            const double up = elbo_loss(cfg, params, batch, noise, 1.0, 30.0).loss;
            slot = keep - h;
            const double down = elbo_loss(cfg, params, batch, noise, 1.0, 30.0).loss;
            slot = keep;
            const double numeric = (up - down) / (2 * h);
            ++total;
            if (std::abs(analytic - numeric) > 1e-3 * std::max({std::abs(analytic), std::abs(numeric), 1e-5})) ++bad;
        };
        for (Eigen::Index k = 0; k < l.mu_w.size(); ++k) probe(g.layers[i].mu_w.data()[k], l.mu_w.data()[k]);
        for (Eigen::Index k = 0; k < l.mu_b.size(); ++k) probe(g.layers[i].mu_b[k], l.mu_b[k]);
        probe(g.layers[i].delta_w, l.delta_w);
        probe(g.layers[i].delta_b, l.delta_b);
    }
    // ReLU kinks and the max-pool can flip inside the stencil for a handful of entries.
    CHECK(bad <= total / 100);
}

TEST_CASE("learning-rate schedule") {
    TrainConfig tc;
    tc.lr_init = 0.01;
    tc.lr_decay_factor = 0.9;
    tc.lr_decay_every = 10;
    CHECK(tc.learning_rate(25) == doctest::Approx(0.0081).epsilon(1e-12));
    CHECK(tc.learning_rate(9) == 0.01);
    const auto f = TrainConfig::defaults_for(NetMode::frequentist);
    CHECK(f.lr_init == 0.001);
    CHECK(f.lr_decay_factor == 0.7);
    tc.lr_decay_factor = 1.5;
    CHECK_THROWS_AS(tc.validate(), ValidationError);
}

TEST_CASE("separable toy blocks are learned in both modes") {
    const auto blocks = separable_blocks(31, 160, 64);
    for (auto mode : {NetMode::bayesian, NetMode::frequentist}) {
        const auto cfg = separable_config(mode);
        auto tc = TrainConfig::defaults_for(mode);
        tc.epochs = 30;
        tc.seed = 5;
        if (mode == NetMode::frequentist) tc.lr_init = 0.01;
        const auto r = train(tc, cfg, blocks);
        REQUIRE(r.history.size() == 30);
        CHECK(r.history.back().accuracy >= 0.99);
        CHECK(r.history[25].lr == doctest::Approx(tc.learning_rate(25)));
    }
}

TEST_CASE("training is deterministic and its windowed loss does not rise") {
    const auto blocks = separable_blocks(41, 24, 48);
    const auto cfg = separable_config(NetMode::bayesian);
    auto tc = TrainConfig::defaults_for(NetMode::bayesian);
    tc.epochs = 40;
    tc.seed = 8;
    const auto a = train(tc, cfg, blocks);
    const auto b = train(tc, cfg, blocks);
    for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].loss == b.history[e].loss);

    auto window = [&](std::size_t start) {
        double s = 0.0;
        for (std::size_t e = start; e < start + 10; ++e) s += a.history[e].loss;
        return s / 10.0;
    };
    for (std::size_t s = 10; s + 10 < a.history.size(); ++s) CHECK(window(s + 1) <= window(s) + 1e-12);

    tc.seed = 9;
    CHECK(train(tc, cfg, blocks).history.back().loss != a.history.back().loss);
}

TEST_CASE("divergence names the epoch") {
    const auto blocks = separable_blocks(51, 4, 16);
    auto cfg = separable_config(NetMode::frequentist);
    auto tc = TrainConfig::defaults_for(NetMode::frequentist);
    tc.lr_init = 1e200;
    tc.momentum = 0.0;
    try {
        train(tc, cfg, blocks);
        FAIL("expected a TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.epoch() >= 1);
    }
}

TEST_CASE("Monte Carlo prediction") {
    std::mt19937_64 rng(61);
    const auto cfg = tiny_config();
    auto params = init_params(cfg, 62, 0.0);
    const MatrixXd x = random_features(rng, cfg.feature_width, 20);

    const auto s = predict_mc(cfg, params, x, x, 8, 3);
    CHECK_NOTHROW(s.validate(1e-6));
    bool differ = false;
    for (std::size_t i = 0; i < s.points(); ++i)
        for (int c = 0; c < s.classes(); ++c) differ = differ || s.at(0, i, c) != s.at(1, i, c);
    CHECK(differ);

    // K = 1 is one forward pass with that seed's sample.
    const auto one = predict_mc(cfg, params, x, x, 1, 3);
    const MatrixXd p = softmax(forward(cfg, sample_weights(params, sample_seed(3, 0)), x));
    for (std::size_t i = 0; i < one.points(); ++i)
        for (int c = 0; c < one.classes(); ++c) CHECK(one.at(0, i, c) == p(c, static_cast<Eigen::Index>(i)));

    for (auto& l : params.layers) l.delta_w = l.delta_b = -1e4;
    const auto det = predict_mc(cfg, params, x, x, 5, 3);
    for (int k = 1; k < 5; ++k)
        for (std::size_t i = 0; i < det.points(); ++i)
            for (int c = 0; c < det.classes(); ++c) CHECK(det.at(k, i, c) == det.at(0, i, c));
}

TEST_CASE("predicted class is the argmax of the mean, ties to the lower index") {
    PredictiveSamples a(1, 2, 3);
    const double r0[] = {0.1, 0.7, 0.2}, r1[] = {0.4, 0.4, 0.2};
    std::copy(r0, r0 + 3, a.row(0, 0).begin());
    std::copy(r1, r1 + 3, a.row(0, 1).begin());
    CHECK(predict_class(a) == std::vector<int>{1, 0});

    PredictiveSamples b(2, 1, 2);
    b.at(0, 0, 0) = 1.0;
    b.at(1, 0, 1) = 1.0;
    CHECK(predict_class(b) == std::vector<int>{0});
}

TEST_CASE("checkpoints and samples round-trip exactly") {
    const auto dir = testing::scratch_dir("segnet");
    const auto cfg = tiny_config(NetMode::frequentist);
    auto params = init_params(cfg, 71);
    params.layers[1].delta_w = 0.1 + 0.2;  // not exactly representable in short decimal
    save_checkpoint(cfg, params, dir / "net.txt");
    const auto ck = load_checkpoint(dir / "net.txt");
    CHECK(ck.config.mode == NetMode::frequentist);
    CHECK(ck.config.encoder_widths == cfg.encoder_widths);
    CHECK(ck.config.decoder_widths == cfg.decoder_widths);
    REQUIRE(ck.params.layers.size() == params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        CHECK(ck.params.layers[i].mu_w == params.layers[i].mu_w);
        CHECK(ck.params.layers[i].mu_b == params.layers[i].mu_b);
        CHECK(ck.params.layers[i].delta_w == params.layers[i].delta_w);
        CHECK(ck.params.layers[i].delta_b == params.layers[i].delta_b);
    }

    std::mt19937_64 rng(72);
    const MatrixXd x = random_features(rng, cfg.feature_width, 10);
    const auto s = predict_mc(cfg, params, x, x, 3, 1);
    s.save(dir / "s.bin");
    const auto t = PredictiveSamples::load(dir / "s.bin");
    REQUIRE(t.points() == s.points());
    for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < s.points(); ++i)
            for (int c = 0; c < s.classes(); ++c) CHECK(t.at(k, i, c) == s.at(k, i, c));

    {
        std::ofstream f(dir / "bad.txt");
        f << "plantmodel-segnet 1\nmode bayesian\nnum_classes x\n";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.txt"), ParseError);
}

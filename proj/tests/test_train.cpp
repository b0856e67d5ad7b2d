#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "disagg/train.hpp"
#include "gradcheck.hpp"

using namespace disagg;

namespace {

// 2 blocks, 4 channels, K = 32
ModelConfig tiny_config(double gn_sigma = 0.0) {
    ModelConfig cfg;
    cfg.window = 32;
    cfg.input_layer = {4, 3, 1};
    cfg.encoder_blocks = {{{4, 3, 1}, {4, 3, 2}}, {{8, 3, 1}, {8, 3, 2}}};
    cfg.encoder_blocks[0].back().pool_after = 2;
    cfg.encoder_blocks[1].back().pool_after = 2;
    cfg.representation_layers = {{8, 3, 1}};
    cfg.decoder_blocks = {{{8, 3, 1}, {8, 3, 2}}, {{4, 3, 1}, {4, 3, 2}}};
    cfg.decoder_blocks[0].front().unpool_before = 2;
    cfg.decoder_blocks[1].front().unpool_before = 2;
    cfg.outer_skips = {{1, 0}, {0, 1}};
    cfg.residuals = {{Part::encoder, 0}, {Part::encoder, 1},
                     {Part::decoder, 0}, {Part::decoder, 1}};
    cfg.gn_sigma = gn_sigma;
    return cfg;
}

// learnable toy task: target is 1 wherever the standardized input is positive
SegmentSet toy_segments(size_t count, int window, uint64_t seed) {
    Rng rng(seed);
    SegmentSet set;
    set.window = window;
    for (size_t s = 0; s < count; ++s) {
        std::vector<double> in(window);
        std::vector<uint8_t> tg(window);
        int level = 0, hold = 0;
        for (int i = 0; i < window; ++i) {
            if (hold == 0) {
                level = rng.below(2) ? 1 : -1;
                hold = 4 + static_cast<int>(rng.below(8));
            }
            --hold;
            in[i] = level * 1.0 + rng.uniform(-0.1, 0.1);
            tg[i] = level > 0 ? 1 : 0;
        }
        set.inputs.push_back(std::move(in));
        set.targets.push_back(std::move(tg));
    }
    return set;
}

}  // namespace

TEST_CASE("bce closed-form values") {
    Tensor3<double> g(1, 1, 1), w(1, 1, 1);
    g.data = {0.5};
    w.data = {1.0};
    CHECK(bce_loss(g, w).total == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    Tensor3<double> g2(1, 1, 2), w2(1, 1, 2);
    g2.data = {0.9, 0.2};
    w2.data = {1.0, 0.0};
    CHECK(bce_loss(g2, w2).total ==
          doctest::Approx(-(std::log(0.9) + std::log(0.8))).epsilon(1e-9));
    CHECK(bce_loss(g2, w2).total == doctest::Approx(0.328504).epsilon(1e-5));

    // perfect prediction after clamping
    const int k = 64;
    Tensor3<double> gp(1, 1, k), wp(1, 1, k);
    for (int i = 0; i < k; ++i) {
        wp.data[i] = i % 2;
        gp.data[i] = wp.data[i];
    }
    const double eps_log = 1e-7;
    const auto r = bce_loss(gp, wp, eps_log);
    CHECK(r.total >= 0.0);
    CHECK(r.total <= 2.0 * k * eps_log);

    Tensor3<double> bad(1, 1, 3);
    CHECK_THROWS_AS(bce_loss(g2, bad), ShapeError);
    CHECK_THROWS_AS(bce_loss(g2, w2, 0.0), ConfigError);
    CHECK_THROWS_AS(bce_loss(g2, w2, 0.1), ConfigError);
}

TEST_CASE("bce is non-negative and additive over segments") {
    Rng rng(5);
    Tensor3<double> g(4, 1, 16), w(4, 1, 16);
    for (auto& v : g.data) v = rng.uniform(0.01, 0.99);
    for (auto& v : w.data) v = static_cast<double>(rng.below(2));
    const auto whole = bce_loss(g, w);
    CHECK(whole.total >= 0.0);

    double parts = 0.0;
    for (int b = 0; b < 4; ++b) {
        Tensor3<double> gs(1, 1, 16), ws(1, 1, 16);
        std::copy(g.row(b, 0), g.row(b, 0) + 16, gs.data.begin());
        std::copy(w.row(b, 0), w.row(b, 0) + 16, ws.data.begin());
        parts += bce_loss(gs, ws).total;
    }
    CHECK(std::abs(whole.total - parts) < 1e-10);
}

TEST_CASE("bce gradient matches finite differences (1e-6)") {
    Rng rng(9);
    Tensor3<double> g(2, 1, 10), w(2, 1, 10);
    for (auto& v : g.data) v = rng.uniform(0.05, 0.95);
    for (auto& v : w.data) v = static_cast<double>(rng.below(2));
    const auto r = bce_loss(g, w);
    const auto loss = [&] { return bce_loss(g, w).total; };
    CHECK(gradcheck::check_vector(g.data, loss, r.grad.data).max_rel_err < 1e-6);
}

TEST_CASE("nadam: zero gradient leaves parameters unchanged") {
    auto model = Model<double>::build(tiny_config(), 3);
    const auto before = model.save_state();
    model.zero_grad();
    Nadam<double> opt;
    opt.step(model.trainable_params());
    CHECK(model.save_state() == before);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("nadam matches the scalar recurrence for two steps") {
    NadamConfig nc;
    nc.learning_rate = 0.1;

    // independent scalar trace of the update rule
    double theta = 1.0, m = 0.0, v = 0.0, mu_prod = 1.0;
    const double g = 1.0, b1 = nc.beta1, b2 = nc.beta2;
    for (int t = 1; t <= 2; ++t) {
        const double mu_t = b1 * (1.0 - 0.5 * std::pow(0.96, t * nc.momentum_decay));
        const double mu_n =
            b1 * (1.0 - 0.5 * std::pow(0.96, (t + 1) * nc.momentum_decay));
        mu_prod *= mu_t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double m_hat =
            mu_n * m / (1.0 - mu_prod * mu_n) + (1 - mu_t) * g / (1.0 - mu_prod);
        const double v_hat = v / (1.0 - std::pow(b2, t));
        theta -= nc.learning_rate * m_hat / (std::sqrt(v_hat) + nc.eps);
    }

    // the same two steps through the optimizer on a 1-element parameter
    std::vector<double> value = {1.0}, grad = {1.0};
    Model<double>::ParamView view{"p", value.data(), grad.data(), 1};
    Nadam<double> opt(nc);
    opt.step({view});
    opt.step({view});
    CHECK(value[0] == doctest::Approx(theta).epsilon(1e-12));
}

TEST_CASE("nadam: identical gradient histories give identical updates") {
    std::vector<double> a = {0.5}, b = {0.5}, ga = {0.3}, gb = {0.3};
    Nadam<double> opt;
    for (int t = 0; t < 5; ++t)
        opt.step({{"a", a.data(), ga.data(), 1}, {"b", b.data(), gb.data(), 1}});
    CHECK(a[0] == b[0]);
}

TEST_CASE("nadam degenerate coefficients") {
    // beta1 = 0 with the Nesterov correction disabled: RMSProp-style scaling
    NadamConfig nc;
    nc.beta1 = 0.0;
    nc.nesterov = false;
    nc.learning_rate = 0.01;
    std::vector<double> value = {2.0}, grad = {0.4};
    Nadam<double> opt(nc);
    opt.step({{"p", value.data(), grad.data(), 1}});
    const double v_hat = 0.4 * 0.4 * (1 - nc.beta2) / (1 - nc.beta2);  // t = 1
    const double expected = 2.0 - 0.01 * 0.4 / (std::sqrt(v_hat) + nc.eps);
    CHECK(value[0] == doctest::Approx(expected).epsilon(1e-12));

    // beta1 = beta2 = 0 with large eps: a plain scaled gradient direction
    NadamConfig nd;
    nd.beta1 = nd.beta2 = 0.0;
    nd.nesterov = false;
    nd.eps = 10.0;
    nd.learning_rate = 1.0;
    std::vector<double> v2 = {0.0}, g2 = {0.5};
    Nadam<double> opt2(nd);
    opt2.step({{"p", v2.data(), g2.data(), 1}});
    CHECK(v2[0] == doctest::Approx(-0.5 / (0.5 + 10.0)).epsilon(1e-12));
}

TEST_CASE("nadam rejects non-finite gradients before updating") {
    std::vector<double> value = {1.0, 2.0};
    std::vector<double> grad = {0.1, std::nan("")};
    Nadam<double> opt;
    CHECK_THROWS_AS(opt.step({{"p", value.data(), grad.data(), 2}}), NumericError);
    CHECK(value[0] == 1.0);  // untouched
    CHECK(value[1] == 2.0);
    CHECK(opt.step_count() == 0);
}

TEST_CASE("nadam state export/import round trip") {
    std::vector<double> value = {1.0}, grad = {0.7};
    Nadam<double> opt;
    opt.step({{"p", value.data(), grad.data(), 1}});
    const auto state = opt.export_state();

    Nadam<double> opt2;
    opt2.import_state(state);
    CHECK(opt2.step_count() == 1);

    // both continue identically
    std::vector<double> va = value, vb = value;
    Nadam<double> a = opt2;
    opt.step({{"p", va.data(), grad.data(), 1}});
    a.step({{"p", vb.data(), grad.data(), 1}});
    CHECK(va[0] == vb[0]);
}

TEST_CASE("train_loop: loss decreases on the toy task") {
    auto model = Model<double>::build(tiny_config(0.02), 7);
    const auto train = toy_segments(24, 32, 1);
    const auto val = toy_segments(8, 32, 2);
    TrainRunConfig rc;
    rc.epochs = 5;
    rc.batch_size = 8;
    rc.seed = 7;
    const auto hist = train_loop(model, train, val, rc);
    REQUIRE(hist.rows.size() == 5);
    CHECK(hist.rows.back().train_loss < hist.rows.front().train_loss);
    CHECK(hist.best_epoch >= 1);

    const std::string log = hist.to_log();
    CHECK(log.find("epoch\ttrain_loss\tval_loss\twall_s") != std::string::npos);
    CHECK(std::count(log.begin(), log.end(), '\n') == 6);  // header + 5 rows
}

TEST_CASE("train_loop: learning rate zero leaves parameters unchanged") {
    auto model = Model<double>::build(tiny_config(0.0), 7);
    std::vector<std::vector<double>> before;
    for (const auto& view : model.trainable_params())
        before.emplace_back(view.value, view.value + view.size);
    const auto train = toy_segments(8, 32, 3);
    TrainRunConfig rc;
    rc.epochs = 3;
    rc.optimizer.learning_rate = 0.0;
    const auto hist = train_loop(model, train, SegmentSet{}, rc);
    // trainable parameters are untouched (BN running stats may move)
    size_t i = 0;
    for (const auto& view : model.trainable_params()) {
        CHECK(std::vector<double>(view.value, view.value + view.size) == before[i]);
        ++i;
    }
}

TEST_CASE("train_loop: identical seeds give bit-identical histories") {
    const auto train = toy_segments(16, 32, 4);
    const auto val = toy_segments(4, 32, 5);
    TrainRunConfig rc;
    rc.epochs = 3;
    rc.batch_size = 4;
    rc.seed = 11;

    auto m1 = Model<double>::build(tiny_config(0.05), 99);
    auto m2 = Model<double>::build(tiny_config(0.05), 99);
    const auto h1 = train_loop(m1, train, val, rc);
    const auto h2 = train_loop(m2, train, val, rc);
    REQUIRE(h1.rows.size() == h2.rows.size());
    for (size_t i = 0; i < h1.rows.size(); ++i) {
        CHECK(h1.rows[i].train_loss == h2.rows[i].train_loss);  // bit-identical
        CHECK(h1.rows[i].val_loss == h2.rows[i].val_loss);
    }
    CHECK(m1.save_state() == m2.save_state());
}

TEST_CASE("train_loop: empty dataset and numeric aborts") {
    auto model = Model<double>::build(tiny_config(0.0), 1);
    TrainRunConfig rc;
    CHECK_THROWS_AS(train_loop(model, SegmentSet{}, SegmentSet{}, rc), DataError);

    // an absurd learning rate blows the parameters up; the loop must abort
    // and leave the model at the last good state (finite parameters)
    auto volatile_model = Model<double>::build(tiny_config(0.0), 2);
    const auto train = toy_segments(8, 32, 6);
    TrainRunConfig wild;
    wild.epochs = 30;
    wild.optimizer.learning_rate = 1e12;
    bool aborted = false;
    try {
        train_loop(volatile_model, train, SegmentSet{}, wild);
    } catch (const NumericError&) {
        aborted = true;
    }
    if (aborted) {
        for (const auto& tensor : volatile_model.save_state())
            for (double v : tensor) CHECK(std::isfinite(v));
    }
}

TEST_CASE("train_loop: epochs 0 keeps the initial state") {
    auto model = Model<double>::build(tiny_config(0.0), 21);
    const auto before = model.save_state();
    const auto train = toy_segments(4, 32, 8);
    TrainRunConfig rc;
    rc.epochs = 0;
    const auto hist = train_loop(model, train, SegmentSet{}, rc);
    CHECK(hist.rows.empty());
    CHECK(model.save_state() == before);
}

TEST_CASE("pack_batch lays windows out as (count, 1, window)") {
    const auto set = toy_segments(5, 16, 10);
    std::vector<size_t> order = {4, 2, 0, 1, 3};
    Tensor3<float> x, t;
    pack_batch(set, order, 1, 2, x, t);
    CHECK(x.batch == 2);
    CHECK(x.length == 16);
    for (int i = 0; i < 16; ++i) {
        CHECK(x.at(0, 0, i) == doctest::Approx(set.inputs[2][i]));
        CHECK(t.at(1, 0, i) == doctest::Approx(set.targets[0][i]));
    }
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "pss/numerics.hpp"
#include "support.hpp"

using namespace pss;

namespace {

MaskedLayer identity_layer(std::size_t n) {
    MaskedLayer l = MaskedLayer::dense(n, n, Activation::identity);
    for (std::size_t i = 0; i < n; ++i) l.weights(i, i) = 1.0;
    return l;
}

std::vector<MaskedLayer> random_net(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<MaskedLayer> net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const bool last = l + 2 == dims.size();
        MaskedLayer layer = MaskedLayer::dense(dims[l + 1], dims[l],
                                               last ? Activation::identity : Activation::leaky_relu);
        init_he(layer, rng);
        for (double& b : layer.bias) b = 0.3 * normal(rng);
        net.push_back(std::move(layer));
    }
    return net;
}

double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

// Central differences of the reference loss, compared to the library gradient.
double max_fd_error(std::vector<MaskedLayer> net, const Matrix& batch, const Matrix& targets,
                    const std::vector<std::size_t>& selected, double h = 1e-5) {
    const Gradients g = backward_truncated(net, forward(net, batch), targets, selected);
    const auto xs = testing::rows_of(batch);
    const auto ys = testing::rows_of(targets);
    auto r = testing::to_ref(net);
    double worst = 0.0;
    for (std::size_t l = 0; l < r.size(); ++l) {
        for (std::size_t o = 0; o < r[l].w.size(); ++o) {
            for (std::size_t i = 0; i < r[l].w[o].size(); ++i) {
                const double saved = r[l].w[o][i];
                r[l].w[o][i] = saved + h;
                const double up = ref::loss(r, xs, ys, selected);
                r[l].w[o][i] = saved - h;
                const double down = ref::loss(r, xs, ys, selected);
                r[l].w[o][i] = saved;
                worst = std::max(worst, rel_err(g[l].weights(o, i), (up - down) / (2 * h)));
            }
            const double saved = r[l].b[o];
            r[l].b[o] = saved + h;
            const double up = ref::loss(r, xs, ys, selected);
            r[l].b[o] = saved - h;
            const double down = ref::loss(r, xs, ys, selected);
            r[l].b[o] = saved;
            worst = std::max(worst, rel_err(g[l].bias[o], (up - down) / (2 * h)));
        }
    }
    return worst;
}

bool all_zero(const Gradients& g) {
    for (const auto& lg : g) {
        for (double v : lg.weights.values()) if (v != 0.0) return false;
        for (double v : lg.bias) if (v != 0.0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("matrix append and shape checks") {
    Matrix m(0, 3);
    const std::vector<double> row{1, 2, 3};
    m.append_row(row);
    m.append_row(row);
    CHECK(m.rows() == 2);
    CHECK(m(1, 2) == 3.0);
    const std::vector<double> bad{1, 2};
    CHECK_THROWS_AS(m.append_row(bad), DimensionError);
    const std::vector<double> col{7, 8};
    m.append_col(col);
    CHECK(m.cols() == 4);
    CHECK(m(0, 3) == 7.0);
    CHECK(m(1, 0) == 1.0);
}

TEST_CASE("dot is unchanged by appended zeros") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t n : {1u, 3u, 7u, 64u, 313u}) {
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = normal(rng);
        for (auto& v : b) v = normal(rng);
        const double base = dot(a, b);
        for (int extra = 1; extra <= 5; ++extra) {
            a.push_back(0.0);
            b.push_back(normal(rng));
            CHECK(dot(a, b) == base);
        }
    }
}

TEST_CASE("forward: identity layer passes input through") {
    const std::vector<MaskedLayer> net{identity_layer(2)};
    Matrix x(1, 2, std::vector<double>{1.0, 2.0});
    const ForwardTrace t = forward(net, x);
    CHECK(t.output()(0, 0) == 1.0);
    CHECK(t.output()(0, 1) == 2.0);
    CHECK(t.pre.size() == 1);
}

TEST_CASE("forward: leaky relu of -1 is -0.01") {
    MaskedLayer l = MaskedLayer::dense(1, 1, Activation::leaky_relu, 0.01);
    l.weights(0, 0) = 1.0;
    const std::vector<MaskedLayer> net{l};
    const ForwardTrace t = forward(net, Matrix(1, 1, -1.0));
    CHECK(t.pre[0](0, 0) == -1.0);
    CHECK(t.output()(0, 0) == doctest::Approx(-0.01).epsilon(1e-15));
    CHECK(activate(Activation::leaky_relu, 0.01, 2.0) == 2.0);
}

TEST_CASE("forward: structural zero behaves like a zero weight") {
    auto net = random_net({4, 3}, 11);
    auto manual = net;
    net[0].connectivity(1, 2) = 0.0;
    net[0].trainable(1, 2) = 0.0;
    net[0].weights(1, 2) = 0.0;
    manual[0].weights(1, 2) = 0.0;
    const Matrix x = testing::random_batch(5, 4, 2);
    CHECK(forward(net, x).output() == forward(manual, x).output());
}

TEST_CASE("forward rejects bad shapes and non-finite input") {
    const auto net = random_net({4, 3, 2}, 1);
    CHECK_THROWS_AS(forward(net, Matrix(2, 5)), DimensionError);
    Matrix x(1, 4);
    x(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, x), NumericalError);
}

TEST_CASE("backward: fully frozen network has zero gradients") {
    auto net = random_net({4, 6, 3}, 5);
    for (auto& l : net) {
        l.trainable.fill(0.0);
        std::fill(l.bias_trainable.begin(), l.bias_trainable.end(), 0.0);
    }
    const Matrix x = testing::random_batch(3, 4, 9);
    const Matrix y(3, 2, 1.0);
    const std::vector<std::size_t> sel{0, 2};
    CHECK(all_zero(backward_truncated(net, forward(net, x), y, sel)));
}

TEST_CASE("backward: weights reachable only from an unselected output get 0") {
    auto net = random_net({3, 4, 2}, 8);
    // Hidden neuron 3 feeds output 1 only.
    net[1].connectivity(0, 3) = 0.0;
    net[1].trainable(0, 3) = 0.0;
    net[1].weights(0, 3) = 0.0;
    const Matrix x = testing::random_batch(4, 3, 1);
    const Matrix y(4, 1, 1.0);
    const std::vector<std::size_t> sel{0};
    const Gradients g = backward_truncated(net, forward(net, x), y, sel);
    for (std::size_t h = 0; h < 4; ++h) CHECK(g[1].weights(1, h) == 0.0);
    CHECK(g[1].bias[1] == 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[0].weights(3, i) == 0.0);
    CHECK(g[0].bias[3] == 0.0);
    bool some_nonzero = false;
    for (double v : g[0].weights.values()) some_nonzero |= v != 0.0;
    CHECK(some_nonzero);
}

TEST_CASE("backward matches finite differences on a 4-6-5-3 network") {
    const auto net = random_net({4, 6, 5, 3}, 17);
    const Matrix x = testing::random_batch(2, 4, 18);
    Matrix y(2, 3);
    y(0, 0) = 1; y(1, 1) = 1; y(0, 2) = 1;
    const std::vector<std::size_t> all{0, 1, 2};
    CHECK(max_fd_error(net, x, y, all) < 1e-5);
}

TEST_CASE("truncated gradient equals the gradient of the loss restricted to the selection") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto net = random_net({5, 7, 4}, 100 + seed);
        const Matrix x = testing::random_batch(3, 5, 200 + seed);
        Matrix y(3, 2);
        y(0, 0) = 1; y(2, 1) = 1;
        const std::vector<std::size_t> sel{1, 3};
        CHECK(max_fd_error(net, x, y, sel) < 1e-5);
    }
}

TEST_CASE("backward rejects bad selections") {
    const auto net = random_net({3, 4, 2}, 4);
    const Matrix x = testing::random_batch(2, 3, 4);
    const ForwardTrace t = forward(net, x);
    const std::vector<std::size_t> none;
    const std::vector<std::size_t> out_of_range{2};
    const std::vector<std::size_t> dup{0, 0};
    CHECK_THROWS(backward_truncated(net, t, Matrix(2, 0), none));
    CHECK_THROWS(backward_truncated(net, t, Matrix(2, 1), out_of_range));
    CHECK_THROWS(backward_truncated(net, t, Matrix(2, 2), dup));
    const std::vector<std::size_t> one{0};
    CHECK_THROWS_AS(backward_truncated(net, t, Matrix(2, 2), one), DimensionError);
}

TEST_CASE("bce loss values") {
    const double ln2 = 0.6931471805599453;
    CHECK(bce_loss(std::vector<double>{0.0}, std::vector<double>{1.0}) == doctest::Approx(ln2).epsilon(1e-15));
    CHECK(bce_loss(std::vector<double>{0.0}, std::vector<double>{0.0}) == doctest::Approx(ln2).epsilon(1e-15));
    // softplus(-2) = 0.1269280110429725, softplus(-1) = 0.31326168751822286
    CHECK(bce_loss(std::vector<double>{2.0, -1.0}, std::vector<double>{1.0, 0.0}) ==
          doctest::Approx(0.2200948492805977).epsilon(1e-14));
    CHECK(bce_loss(std::vector<double>{1000.0}, std::vector<double>{0.0}) == doctest::Approx(1000.0));
    CHECK(bce_loss(std::vector<double>{-1000.0}, std::vector<double>{0.0}) == 0.0);
    CHECK_THROWS(bce_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}));
}

TEST_CASE("sgd step") {
    auto single = [] {
        MaskedLayer l = MaskedLayer::dense(1, 1, Activation::identity);
        l.weights(0, 0) = 1.0;
        l.bias_trainable[0] = 0.0;
        return std::vector<MaskedLayer>{l};
    };
    Gradients g(1);
    g[0].weights = Matrix(1, 1, 0.5);
    g[0].bias = {0.0};

    SUBCASE("learning rate 0 leaves weights unchanged") {
        auto net = single();
        Velocity v;
        v.reset(net);
        sgd_step(net, g, {0.0, 0.9}, v);
        CHECK(net[0].weights(0, 0) == 1.0);
    }
    SUBCASE("plain step: 1.0 - 0.1 * 0.5 = 0.95") {
        auto net = single();
        Velocity v;
        v.reset(net);
        sgd_step(net, g, {0.1, 0.0}, v);
        CHECK(net[0].weights(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
    }
    SUBCASE("momentum accumulates as v = mu v + g") {
        auto net = single();
        Velocity v;
        v.reset(net);
        sgd_step(net, g, {0.1, 0.9}, v);
        sgd_step(net, g, {0.1, 0.9}, v);
        // v1 = 0.5, v2 = 0.95
        CHECK(net[0].weights(0, 0) == doctest::Approx(1.0 - 0.05 - 0.095).epsilon(1e-15));
    }
    SUBCASE("frozen weight with nonzero gradient is unchanged") {
        auto net = single();
        net[0].trainable(0, 0) = 0.0;
        Velocity v;
        v.reset(net);
        sgd_step(net, g, {0.1, 0.9}, v);
        CHECK(net[0].weights(0, 0) == 1.0);
        CHECK(v.layers[0].weights(0, 0) == 0.0);
    }
    SUBCASE("shape mismatch") {
        auto net = single();
        Velocity v;
        v.reset(net);
        Gradients wrong(1);
        wrong[0].weights = Matrix(2, 1);
        wrong[0].bias = {0.0, 0.0};
        CHECK_THROWS_AS(sgd_step(net, wrong, {0.1, 0.9}, v), DimensionError);
    }
}

TEST_CASE("structural zeros stay exactly zero through training") {
    auto net = random_net({6, 5, 3}, 21);
    std::mt19937_64 rng(5);
    std::bernoulli_distribution drop(0.4);
    for (auto& l : net) {
        for (std::size_t i = 0; i < l.weights.size(); ++i) {
            if (drop(rng)) {
                l.connectivity.values()[i] = 0.0;
                l.trainable.values()[i] = 0.0;
                l.weights.values()[i] = 0.0;
            } else if (drop(rng)) {
                l.trainable.values()[i] = 0.0;
            }
        }
    }
    const auto before = net;
    Velocity v;
    v.reset(net);
    const std::vector<std::size_t> sel{0, 2};
    for (int step = 0; step < 50; ++step) {
        const Matrix x = testing::random_batch(4, 6, 1000 + step);
        Matrix y(4, 2);
        y(step % 4, step % 2) = 1.0;
        sgd_step(net, backward_truncated(net, forward(net, x), y, sel), {0.05, 0.9}, v);
    }
    for (std::size_t l = 0; l < net.size(); ++l) {
        for (std::size_t i = 0; i < net[l].weights.size(); ++i) {
            if (net[l].connectivity.values()[i] == 0.0) CHECK(net[l].weights.values()[i] == 0.0);
            if (net[l].trainable.values()[i] == 0.0) {
                CHECK(net[l].weights.values()[i] == before[l].weights.values()[i]);
                CHECK(v.layers[l].weights.values()[i] == 0.0);
            }
        }
    }
}

TEST_CASE("identical inputs give bit-identical traces and gradients") {
    const auto net = random_net({8, 6, 4}, 2);
    const Matrix x = testing::random_batch(5, 8, 3);
    const Matrix y(5, 1, 1.0);
    const std::vector<std::size_t> sel{2};
    const auto t1 = forward(net, x);
    const auto t2 = forward(net, x);
    CHECK(t1.output() == t2.output());
    const auto g1 = backward_truncated(net, t1, y, sel);
    const auto g2 = backward_truncated(net, t2, y, sel);
    for (std::size_t l = 0; l < g1.size(); ++l) {
        CHECK(g1[l].weights == g2[l].weights);
        CHECK(g1[l].bias == g2[l].bias);
    }
}

TEST_CASE("velocity conform keeps existing entries in place") {
    auto net = random_net({3, 2}, 1);
    Velocity v;
    v.reset(net);
    v.layers[0].weights(1, 2) = 0.25;
    const std::vector<double> row{0.1, 0.2, 0.3}, ones{1, 1, 1};
    net[0].append_neuron(row, 0.0, ones, ones, true);
    v.conform(net);
    CHECK(v.layers[0].weights.rows() == 3);
    CHECK(v.layers[0].weights(1, 2) == 0.25);
    CHECK(v.layers[0].weights(2, 0) == 0.0);
}

TEST_CASE("He initialization") {
    CHECK(he_stddev(2) == doctest::Approx(1.0));
    MaskedLayer l = MaskedLayer::dense(400, 500, Activation::leaky_relu);
    l.connectivity(0, 0) = 0.0;
    l.trainable(0, 0) = 0.0;
    std::mt19937_64 rng(7);
    init_he(l, rng);
    CHECK(l.weights(0, 0) == 0.0);
    double sum = 0.0, sq = 0.0;
    for (double w : l.weights.values()) {
        sum += w;
        sq += w * w;
    }
    const double n = static_cast<double>(l.weights.size());
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(sd == doctest::Approx(std::sqrt(2.0 / 500.0)).epsilon(0.02));
}

TEST_CASE("gradcheck") {
    SUBCASE("dense [3,4,2], both outputs") {
        const std::vector<std::size_t> dims{3, 4, 2};
        GradcheckOptions o;
        o.selected_outputs = {0, 1};
        const auto r = gradcheck(dims, 1, o);
        CHECK(r.passed);
        CHECK(r.max_relative_error < 1e-5);
        CHECK(r.masked_positions == 0);
    }
    SUBCASE("[3,4,2] with half the edges structurally zero") {
        const std::vector<std::size_t> dims{3, 4, 2};
        GradcheckOptions o;
        o.structural_zero_fraction = 0.5;
        const auto r = gradcheck(dims, 2, o);
        CHECK(r.passed);
        CHECK(r.masked_positions > 0);
        CHECK(r.masked_nonzero == 0);
    }
    SUBCASE("[2,2,1], one output") {
        const std::vector<std::size_t> dims{2, 2, 1};
        const auto r = gradcheck(dims, 3);
        CHECK(r.passed);
        CHECK(r.selected_outputs.size() == 1);
    }
    SUBCASE("minimal [1,1]") {
        const std::vector<std::size_t> dims{1, 1};
        GradcheckOptions o;
        o.structural_zero_fraction = 0.3;
        o.frozen_fraction = 0.2;
        const auto r = gradcheck(dims, 4, o);
        CHECK(r.passed);
        CHECK(r.checked_positions > 0);
    }
    SUBCASE("corrupted backward is caught") {
        const std::vector<std::size_t> dims{4, 6, 5, 3};
        GradcheckOptions o;
        o.inject_fault = true;
        CHECK_FALSE(gradcheck(dims, 5, o).passed);
    }
    SUBCASE("invalid dims are reported, not thrown") {
        const std::vector<std::size_t> dims{3, 0, 2};
        const auto r = gradcheck(dims, 6);
        CHECK_FALSE(r.passed);
        CHECK_FALSE(r.error.empty());
    }
}

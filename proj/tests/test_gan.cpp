#include <cmath>
#include <vector>

#include "doctest.h"

#include "perfaug/error.hpp"
#include "perfaug/gan.hpp"
#include "perfaug/metrics.hpp"
#include "perfaug/mlp.hpp"
#include "perfaug/patterns.hpp"
#include "perfaug/synth.hpp"

using namespace perfaug;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    return m;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        diff += (a[n] - b[n]) * (a[n] - b[n]);
        scale += std::max(a[n] * a[n], b[n] * b[n]);
    }
    return std::sqrt(diff / std::max(scale, 1e-300));
}

template <class Loss>
std::vector<double> numeric_gradient(Mlp net, Loss&& loss, double h) {
    auto v = net.to_vector();
    std::vector<double> g(v.size());
    for (std::size_t n = 0; n < v.size(); ++n) {
        const double keep = v[n];
        v[n] = keep + h;
        net.from_vector(v);
        const double up = loss(net);
        v[n] = keep - h;
        net.from_vector(v);
        const double down = loss(net);
        v[n] = keep;
        g[n] = (up - down) / (2.0 * h);
    }
    return g;
}

GanConfig tiny_config() {
    GanConfig c;
    c.noise_dim = 3;
    c.hidden = {4, 4};
    c.epochs = 10;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("network shapes follow the layer sizes") {
    auto m = gan_init(GanConfig{}, 9);
    CHECK(m.generator.sizes() == std::vector<std::size_t>{16, 64, 64, 9});
    CHECK(m.discriminator.sizes() == std::vector<std::size_t>{9, 64, 64, 1});
    CHECK(gen_forward(m, random_matrix(7, 16, 1)).rows() == 7);
    CHECK(gen_forward(m, random_matrix(7, 16, 1)).cols() == 9);
    CHECK_THROWS_AS(gen_forward(m, random_matrix(2, 5, 1)), DimensionError);
    CHECK_THROWS_AS(gan_init(GanConfig{}, 0), ParameterError);
    GanConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(gan_init(bad, 3), ParameterError);
}

TEST_CASE("outputs stay in the open unit interval") {
    auto m = gan_init(GanConfig{}, 9);
    Matrix noise = random_matrix(50, 16, 2, -30.0, 30.0);
    Matrix out = gen_forward(m, noise);
    CHECK(out.minCoeff() > 0.0);
    CHECK(out.maxCoeff() < 1.0);
    Vector d = disc_forward(m, random_matrix(50, 9, 3, -100.0, 100.0));
    CHECK(d.minCoeff() > 0.0);
    CHECK(d.maxCoeff() < 1.0);
}

TEST_CASE("all-zero weights give one half everywhere") {
    auto m = gan_init(tiny_config(), 4);
    m.generator.from_vector(std::vector<double>(m.generator.parameter_count(), 0.0));
    Matrix out = gen_forward(m, random_matrix(3, 3, 4));
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index c = 0; c < out.cols(); ++c) CHECK(out(r, c) == 0.5);
}

TEST_CASE("MLP backward matches central differences, including the input gradient") {
    Rng rng = make_rng(3);
    Mlp net({3, 4, 4, 2}, Activation::Identity, rng);
    const Matrix x = random_matrix(5, 3, 8);
    const Matrix w = random_matrix(5, 2, 9);
    auto loss = [&](const Mlp& n) { return n.forward(x).cwiseProduct(w).sum(); };
    Mlp::Cache cache;
    net.forward(x, &cache);
    auto grad = net.backward(cache, w);
    CHECK(relative_error(grad.to_vector(), numeric_gradient(net, loss, 1e-4)) < 1e-3);

    Matrix xin = x;
    const double h = 1e-4;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            xin(r, c) = x(r, c) + h;
            const double up = net.forward(xin).cwiseProduct(w).sum();
            xin(r, c) = x(r, c) - h;
            const double down = net.forward(xin).cwiseProduct(w).sum();
            xin(r, c) = x(r, c);
            CHECK(grad.input(r, c) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-3));
        }
}

TEST_CASE("discriminator loss gradient matches central differences") {
    auto m = gan_init(tiny_config(), 4);
    const Matrix rows = random_matrix(6, 4, 11, 0.0, 1.0);
    for (double label : {0.0, 1.0}) {
        auto [loss, grad] = discriminator_loss(m.discriminator, rows, label);
        auto numeric = numeric_gradient(
            m.discriminator, [&](const Mlp& d) { return discriminator_loss(d, rows, label).first; }, 1e-4);
        CHECK(relative_error(grad.to_vector(), numeric) < 1e-3);
        CHECK(loss > 0.0);
    }
}

TEST_CASE("generator loss gradient flows through the discriminator") {
    auto m = gan_init(tiny_config(), 4);
    const Matrix noise = random_matrix(6, 3, 12);
    auto [loss, grad] = generator_loss(m.generator, m.discriminator, noise);
    auto numeric = numeric_gradient(
        m.generator, [&](const Mlp& g) { return generator_loss(g, m.discriminator, noise).first; }, 1e-4);
    CHECK(relative_error(grad.to_vector(), numeric) < 1e-3);
    CHECK(loss > 0.0);
}

TEST_CASE("BCE loss values match the closed form") {
    auto m = gan_init(tiny_config(), 4);
    const Matrix rows = random_matrix(5, 4, 13, 0.0, 1.0);
    const Vector p = m.discriminator.forward(rows).col(0).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    double real = 0.0, fake = 0.0;
    for (Eigen::Index r = 0; r < p.size(); ++r) {
        real -= std::log(p[r]) / 5.0;
        fake -= std::log(1.0 - p[r]) / 5.0;
    }
    CHECK(discriminator_loss(m.discriminator, rows, 1.0).first == doctest::Approx(real).epsilon(1e-12));
    CHECK(discriminator_loss(m.discriminator, rows, 0.0).first == doctest::Approx(fake).epsilon(1e-12));
}

TEST_CASE("first Adam step moves each weight by about the learning rate against its gradient sign") {
    Rng rng = make_rng(4);
    Mlp net({2, 3, 1}, Activation::Identity, rng);
    const Mlp before = net;
    const Matrix x = random_matrix(4, 2, 5);
    Mlp::Cache cache;
    net.forward(x, &cache);
    auto grad = net.backward(cache, Matrix::Ones(4, 1));
    Adam opt(net, 1e-2, 0.5, 0.999);
    opt.step(net, grad);
    auto g = grad.to_vector();
    auto a = before.to_vector(), b = net.to_vector();
    for (std::size_t n = 0; n < g.size(); ++n) {
        const double expected = -1e-2 * g[n] / (std::abs(g[n]) + 1e-8);
        CHECK(b[n] - a[n] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("generator step leaves the discriminator untouched") {
    auto m = gan_init(tiny_config(), 4);
    const Mlp disc = m.discriminator;
    Adam opt(m.generator, 2e-4, 0.5, 0.999);
    auto [loss, grad] = generator_loss(m.generator, m.discriminator, random_matrix(4, 3, 6));
    opt.step(m.generator, grad);
    CHECK(m.discriminator == disc);
}

TEST_CASE("training records one loss per epoch and is deterministic") {
    const Matrix real = random_matrix(10, 4, 14, 0.1, 0.9);
    auto a = gan_train(gan_init(tiny_config(), 4), real);
    auto b = gan_train(gan_init(tiny_config(), 4), real);
    CHECK(a.history.size() == 10);
    CHECK(a.generator == b.generator);
    CHECK(a.discriminator == b.discriminator);
    CHECK(gan_sample(a, 20, 3) == gan_sample(b, 20, 3));
    CHECK(gan_sample(a, 20, 3) != gan_sample(a, 20, 4));
    CHECK(gan_sample(a, 0, 1).rows() == 0);
    CHECK(gan_sample(a, 0, 1).cols() == 4);
}

TEST_CASE("training validates its inputs") {
    auto m = gan_init(tiny_config(), 4);
    CHECK_THROWS_AS(gan_train(m, random_matrix(1, 4, 1)), ValidationError);
    CHECK_THROWS_AS(gan_train(m, random_matrix(5, 3, 1)), DimensionError);
    Matrix bad = random_matrix(5, 4, 1, 0.0, 1.0);
    bad(2, 1) = NAN;
    try {
        gan_train(m, bad);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
    auto small = gan_train(m, random_matrix(3, 4, 1, 0.0, 1.0));
    CHECK(small.low_confidence);
}

TEST_CASE("a point-mass distribution is learned") {
    Matrix real(20, 9);
    for (Eigen::Index r = 0; r < 20; ++r)
        for (Eigen::Index j = 0; j < 9; ++j) real(r, j) = 0.4 * std::pow(j + 1.0, 0.3);
    auto m = gan_train(gan_init(GanConfig{}, 9), real);
    auto s = gan_sample(m, 2000, 5);
    double gap = 0.0;
    for (Eigen::Index j = 0; j < 9; ++j) gap += std::abs(s.col(j).mean() - real(0, j)) / 9.0;
    CHECK(gap < 0.05);
}

TEST_CASE("disjoint samples of one model are close in parameter EMD") {
    auto pop = generate_population(five_cluster_spec(1));
    std::vector<std::size_t> labels;
    for (const auto& l : pop.learners) labels.push_back(l.cluster);
    const Matrix rows = cluster_rows(extract_slice(pop.truth, 0), labels, 2);
    auto m = gan_train(gan_init(GanConfig{}, 9), rows);
    std::vector<double> a1, a2, b1, b2;
    for (const auto& f : fit_rows(gan_sample(m, 5000, 1))) {
        a1.push_back(f.a);
        b1.push_back(f.b);
    }
    for (const auto& f : fit_rows(gan_sample(m, 5000, 2))) {
        a2.push_back(f.a);
        b2.push_back(f.b);
    }
    // Half the 0.15 fidelity tolerance.
    CHECK(emd(a1, a2).value < 0.075);
    CHECK(emd(b1, b2, 50, PowerLawParameter::B).value < 0.075);
}

#include "perfaug/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "perfaug/error.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

namespace {

constexpr double kOpenUnitMargin = 1e-15;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Matrix to_open_unit(const Matrix& logits) {
    return apply_activation(Activation::Sigmoid, logits).cwiseMax(kOpenUnitMargin).cwiseMin(1.0 - kOpenUnitMargin);
}

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = normal(rng);
    return z;
}

}  // namespace

GanModel gan_init(const GanConfig& config, std::size_t attempts) {
    if (attempts < 1) throw ParameterError("a GAN needs at least one attempt column");
    if (config.epochs < 1) throw ParameterError("GAN epochs must be at least 1");
    if (config.noise_dim < 1) throw ParameterError("noise dimension must be at least 1");
    Rng rng = make_rng(config.seed, 0x9a11);
    GanModel m;
    m.config = config;
    m.attempts = attempts;

    std::vector<std::size_t> gen{config.noise_dim};
    gen.insert(gen.end(), config.hidden.begin(), config.hidden.end());
    gen.push_back(attempts);
    std::vector<std::size_t> disc{attempts};
    disc.insert(disc.end(), config.hidden.begin(), config.hidden.end());
    disc.push_back(1);

    m.generator = Mlp(gen, Activation::Sigmoid, rng);
    m.discriminator = Mlp(disc, Activation::Sigmoid, rng);
    return m;
}

Matrix gen_forward(const GanModel& model, const Matrix& noise) {
    if (static_cast<std::size_t>(noise.cols()) != model.config.noise_dim)
        throw DimensionError("noise width " + std::to_string(noise.cols()) + " does not match noise_dim " +
                             std::to_string(model.config.noise_dim));
    return to_open_unit(model.generator.forward(noise));
}

Vector disc_forward(const GanModel& model, const Matrix& rows) {
    return to_open_unit(model.discriminator.forward(rows)).col(0);
}

std::pair<double, MlpGradient> discriminator_loss(const Mlp& discriminator, const Matrix& rows, double label) {
    Mlp::Cache cache;
    const Matrix logits = discriminator.forward(rows, &cache);
    const double n = static_cast<double>(rows.rows());
    double loss = 0.0;
    Matrix grad(logits.rows(), 1);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double z = logits(r, 0);
        // BCE from logits: softplus(z) - label * z
        loss += softplus(z) - label * z;
        grad(r, 0) = (1.0 / (1.0 + std::exp(-z)) - label) / n;
    }
    return {loss / n, discriminator.backward(cache, grad)};
}

std::pair<double, MlpGradient> generator_loss(const Mlp& generator, const Mlp& discriminator, const Matrix& noise) {
    Mlp::Cache gcache, dcache;
    const Matrix glogits = generator.forward(noise, &gcache);
    const Matrix fake = apply_activation(Activation::Sigmoid, glogits);
    const Matrix dlogits = discriminator.forward(fake, &dcache);
    const double n = static_cast<double>(noise.rows());

    double loss = 0.0;
    Matrix grad(dlogits.rows(), 1);
    for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
        const double z = dlogits(r, 0);
        loss += softplus(-z);  // -log sigmoid(z)
        grad(r, 0) = (1.0 / (1.0 + std::exp(-z)) - 1.0) / n;
    }
    const MlpGradient through_d = discriminator.backward(dcache, grad);
    const Matrix grad_glogits = through_d.input.cwiseProduct(fake.cwiseProduct((1.0 - fake.array()).matrix()));
    return {loss / n, generator.backward(gcache, grad_glogits)};
}

GanModel gan_train(GanModel model, const Matrix& real) {
    const auto S = static_cast<std::size_t>(real.rows());
    if (S < 2) throw ValidationError("GAN training needs at least 2 real rows");
    if (static_cast<std::size_t>(real.cols()) != model.attempts)
        throw DimensionError("real rows have " + std::to_string(real.cols()) + " columns, model expects " +
                             std::to_string(model.attempts));
    const GanConfig& cfg = model.config;
    const std::size_t batch = cfg.batch_size ? cfg.batch_size : std::min<std::size_t>(32, S);
    model.low_confidence = S < kLowConfidenceRows;

    Rng rng = make_rng(cfg.seed, 0x7a1);
    Adam opt_d(model.discriminator, cfg.lr, cfg.beta1, cfg.beta2);
    Adam opt_g(model.generator, cfg.lr, cfg.beta1, cfg.beta2);
    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uniform_int_distribution<std::size_t> pick(0, S - 1);

    Matrix real_batch(static_cast<Eigen::Index>(batch), real.cols());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (batch <= S) {
            // Partial Fisher-Yates: the first `batch` entries are a uniform subset.
            for (std::size_t b = 0; b < batch; ++b) {
                std::uniform_int_distribution<std::size_t> swap_with(b, S - 1);
                std::swap(order[b], order[swap_with(rng)]);
                real_batch.row(static_cast<Eigen::Index>(b)) = real.row(static_cast<Eigen::Index>(order[b]));
            }
        } else {
            for (std::size_t b = 0; b < batch; ++b)
                real_batch.row(static_cast<Eigen::Index>(b)) = real.row(static_cast<Eigen::Index>(pick(rng)));
        }

        const Matrix fake =
            apply_activation(Activation::Sigmoid, model.generator.forward(gaussian(batch, cfg.noise_dim, rng)));
        auto [loss_real, grad_real] = discriminator_loss(model.discriminator, real_batch, 1.0);
        opt_d.step(model.discriminator, grad_real);
        auto [loss_fake, grad_fake] = discriminator_loss(model.discriminator, fake, 0.0);
        opt_d.step(model.discriminator, grad_fake);

        auto [loss_gen, grad_gen] =
            generator_loss(model.generator, model.discriminator, gaussian(batch, cfg.noise_dim, rng));
        opt_g.step(model.generator, grad_gen);

        const GanLoss loss{0.5 * (loss_real + loss_fake), loss_gen};
        if (!std::isfinite(loss.discriminator) || !std::isfinite(loss.generator) || !model.generator.all_finite() ||
            !model.discriminator.all_finite())
            throw TrainingError("GAN training produced NaN at epoch " + std::to_string(epoch));
        model.history.push_back(loss);
    }
    return model;
}

AugmentedMatrix gan_sample(const GanModel& model, std::size_t n, std::uint64_t seed) {
    if (n == 0) return AugmentedMatrix(0, static_cast<Eigen::Index>(model.attempts));
    Rng rng = make_rng(seed, 0x5a3);
    return gen_forward(model, gaussian(n, model.config.noise_dim, rng));
}

}  // namespace perfaug

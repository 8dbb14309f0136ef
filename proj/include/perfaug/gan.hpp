#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "perfaug/matrix.hpp"
#include "perfaug/mlp.hpp"

namespace perfaug {

struct GanConfig {
    std::size_t noise_dim = 16;
    std::vector<std::size_t> hidden{64, 64};
    int epochs = 3000;
    std::size_t batch_size = 0;  // 0 = min(32, #real rows)
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    std::uint64_t seed = 23;
};

/// Clusters with fewer real rows than this are flagged.
inline constexpr std::size_t kLowConfidenceRows = 5;

struct GanLoss {
    double discriminator = 0.0;
    double generator = 0.0;
};

/// Generator: noise -> hidden (ReLU) -> attempts (sigmoid).
/// Discriminator: attempts -> hidden (ReLU) -> 1 (sigmoid).
struct GanModel {
    GanConfig config;
    std::size_t attempts = 0;
    Mlp generator;
    Mlp discriminator;
    std::vector<GanLoss> history;
    bool low_confidence = false;
};

GanModel gan_init(const GanConfig& config, std::size_t attempts);

/// Synthetic rows in (0,1)^attempts for a batch of noise rows.
Matrix gen_forward(const GanModel& model, const Matrix& noise);

/// Discriminator probabilities for a batch of rows.
Vector disc_forward(const GanModel& model, const Matrix& rows);

/// Alternating updates, one discriminator pass on real (label 1) then on
/// synthetic (label 0) rows, followed by one non-saturating generator pass.
GanModel gan_train(GanModel model, const Matrix& real);

/// n rows from seeded Gaussian noise.
AugmentedMatrix gan_sample(const GanModel& model, std::size_t n, std::uint64_t seed);

/// Mean binary cross-entropy of the discriminator against a constant label,
/// with its gradient.
std::pair<double, MlpGradient> discriminator_loss(const Mlp& discriminator, const Matrix& rows, double label);

/// Mean of -log D(G(z)); the gradient is for generator parameters only.
std::pair<double, MlpGradient> generator_loss(const Mlp& generator, const Mlp& discriminator, const Matrix& noise);

}  // namespace perfaug

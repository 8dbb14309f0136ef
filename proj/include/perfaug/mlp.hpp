#pragma once

#include <cstddef>
#include <vector>

#include "perfaug/matrix.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

enum class Activation { Identity, ReLU, Sigmoid };

/// y = act(x W^T + b) for a batch x with one sample per row.
struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::Identity;
};

struct MlpGradient {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;
    Matrix input;  // d loss / d network input

    std::vector<double> to_vector() const;
};

/// Fully connected network. `forward` returns the last layer's
/// pre-activation; callers apply the output nonlinearity themselves so
/// losses can be computed from logits.
class Mlp {
public:
    Mlp() = default;

    /// sizes = {in, hidden..., out}; hidden layers use ReLU and the output
    /// layer is tagged with `output`. Weights ~ N(0, 2 / fan_in), biases 0.
    Mlp(const std::vector<std::size_t>& sizes, Activation output, Rng& rng);

    struct Cache {
        std::vector<Matrix> inputs;  // input to each layer
        std::vector<Matrix> pre;     // pre-activation of each layer
    };

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const;

    /// Backpropagates d loss / d (last pre-activation).
    MlpGradient backward(const Cache& cache, const Matrix& grad_logits) const;

    std::size_t input_width() const;
    std::size_t output_width() const;
    std::vector<std::size_t> sizes() const;

    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    std::vector<DenseLayer>& layers() noexcept { return layers_; }

    std::vector<double> to_vector() const;
    void from_vector(const std::vector<double>& values);
    std::size_t parameter_count() const;
    bool all_finite() const;

    bool operator==(const Mlp& other) const;

private:
    std::vector<DenseLayer> layers_;
};

Matrix apply_activation(Activation a, const Matrix& pre);

/// Adaptive-moment optimizer state for one network.
class Adam {
public:
    Adam() = default;
    Adam(const Mlp& net, double lr, double beta1, double beta2, double epsilon = 1e-8);

    void step(Mlp& net, const MlpGradient& grad);

private:
    double lr_ = 2e-4;
    double beta1_ = 0.5;
    double beta2_ = 0.999;
    double epsilon_ = 1e-8;
    long t_ = 0;
    std::vector<Matrix> mw_, vw_;
    std::vector<Vector> mb_, vb_;
};

}  // namespace perfaug

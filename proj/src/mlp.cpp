#include "perfaug/mlp.hpp"

#include <cmath>

#include "perfaug/error.hpp"

namespace perfaug {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Matrix apply_activation(Activation a, const Matrix& pre) {
    switch (a) {
        case Activation::ReLU: return pre.cwiseMax(0.0);
        case Activation::Sigmoid: return pre.unaryExpr(&stable_sigmoid);
        case Activation::Identity: break;
    }
    return pre;
}

std::vector<double> MlpGradient::to_vector() const {
    std::vector<double> v;
    for (std::size_t l = 0; l < weight.size(); ++l) {
        v.insert(v.end(), weight[l].data(), weight[l].data() + weight[l].size());
        v.insert(v.end(), bias[l].data(), bias[l].data() + bias[l].size());
    }
    return v;
}

Mlp::Mlp(const std::vector<std::size_t>& sizes, Activation output, Rng& rng) {
    if (sizes.size() < 2) throw ParameterError("a network needs at least an input and an output width");
    for (std::size_t s : sizes)
        if (s == 0) throw ParameterError("layer widths must be positive");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        DenseLayer layer;
        const auto in = static_cast<Eigen::Index>(sizes[l]);
        const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
        std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(in)));
        layer.weight.resize(out, in);
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = he(rng);
        layer.bias = Vector::Zero(out);
        layer.activation = l + 2 == sizes.size() ? output : Activation::ReLU;
        layers_.push_back(std::move(layer));
    }
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
    if (static_cast<std::size_t>(x.cols()) != input_width())
        throw DimensionError("network input has width " + std::to_string(x.cols()) + ", expected " +
                             std::to_string(input_width()));
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        Matrix pre = (h * layer.weight.transpose()).rowwise() + layer.bias.transpose();
        if (cache) {
            cache->inputs.push_back(h);
            cache->pre.push_back(pre);
        }
        if (l + 1 == layers_.size()) return pre;
        h = apply_activation(layer.activation, pre);
    }
    return h;
}

MlpGradient Mlp::backward(const Cache& cache, const Matrix& grad_logits) const {
    MlpGradient g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    Matrix delta = grad_logits;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        g.weight[l] = delta.transpose() * cache.inputs[l];
        g.bias[l] = delta.colwise().sum().transpose();
        Matrix d_input = delta * layers_[l].weight;
        if (l == 0) {
            g.input = std::move(d_input);
            break;
        }
        const Matrix& pre = cache.pre[l - 1];
        switch (layers_[l - 1].activation) {
            case Activation::ReLU:
                delta = d_input.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
                break;
            case Activation::Sigmoid: {
                const Matrix s = apply_activation(Activation::Sigmoid, pre);
                delta = d_input.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
                break;
            }
            case Activation::Identity:
                delta = std::move(d_input);
                break;
        }
    }
    return g;
}

std::size_t Mlp::input_width() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t Mlp::output_width() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

std::vector<std::size_t> Mlp::sizes() const {
    std::vector<std::size_t> s;
    if (layers_.empty()) return s;
    s.push_back(input_width());
    for (const auto& l : layers_) s.push_back(static_cast<std::size_t>(l.weight.rows()));
    return s;
}

std::vector<double> Mlp::to_vector() const {
    std::vector<double> v;
    v.reserve(parameter_count());
    for (const auto& l : layers_) {
        v.insert(v.end(), l.weight.data(), l.weight.data() + l.weight.size());
        v.insert(v.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return v;
}

void Mlp::from_vector(const std::vector<double>& values) {
    if (values.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
    auto it = values.begin();
    for (auto& l : layers_) {
        std::copy(it, it + l.weight.size(), l.weight.data());
        it += l.weight.size();
        std::copy(it, it + l.bias.size(), l.bias.data());
        it += l.bias.size();
    }
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool Mlp::all_finite() const {
    for (const auto& l : layers_)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

bool Mlp::operator==(const Mlp& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& a = layers_[l];
        const auto& b = other.layers_[l];
        if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
            a.weight != b.weight || a.bias != b.bias)
            return false;
    }
    return true;
}

Adam::Adam(const Mlp& net, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    for (const auto& l : net.layers()) {
        mw_.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        vw_.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        mb_.push_back(Vector::Zero(l.bias.size()));
        vb_.push_back(Vector::Zero(l.bias.size()));
    }
}

void Adam::step(Mlp& net, const MlpGradient& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        mw_[l] = beta1_ * mw_[l] + (1.0 - beta1_) * grad.weight[l];
        vw_[l] = beta2_ * vw_[l] + (1.0 - beta2_) * grad.weight[l].cwiseProduct(grad.weight[l]);
        mb_[l] = beta1_ * mb_[l] + (1.0 - beta1_) * grad.bias[l];
        vb_[l] = beta2_ * vb_[l] + (1.0 - beta2_) * grad.bias[l].cwiseProduct(grad.bias[l]);
        layers[l].weight.array() -= lr_ * (mw_[l].array() / c1) / ((vw_[l].array() / c2).sqrt() + epsilon_);
        layers[l].bias.array() -= lr_ * (mb_[l].array() / c1) / ((vb_[l].array() / c2).sqrt() + epsilon_);
    }
}

}  // namespace perfaug

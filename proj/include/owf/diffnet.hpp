#pragma once

// Dense feed-forward networks with reverse-mode parameter gradients and
// forward-mode input tangents.
//
// Every evaluation goes through one engine: a batch of inputs X (in_dim x B)
// is pushed forward together with p tangent directions per sample
// (V: in_dim x B*p, sample-major blocks). The output tangents are J(x_b) V_b.
// The reverse pass accepts upstream gradients for both the outputs and the
// output tangents, which is what makes gradients of log|det J| and of
// ||grad_x D|| with respect to the parameters available without a general
// second-order graph.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "owf/errors.hpp"
#include "owf/random.hpp"

namespace owf {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class LayerKind { affine, leaky_relu, tanh, batchnorm };

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;

inline std::string to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::affine: return "affine";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::batchnorm: return "batchnorm";
    }
    return "unknown";
}

inline LayerKind layer_kind_from_string(const std::string& name)
{
    if (name == "affine") return LayerKind::affine;
    if (name == "leaky_relu") return LayerKind::leaky_relu;
    if (name == "tanh") return LayerKind::tanh;
    if (name == "batchnorm") return LayerKind::batchnorm;
    throw InvalidInput("unknown layer kind '" + name + "'");
}

/// One layer. Parameter layout:
///   affine:    W row-major (out_dim x in_dim), then b (out_dim)
///   batchnorm: gamma (dim), then beta (dim); running statistics are buffers, not parameters
struct LayerSpec {
    LayerKind kind = LayerKind::affine;
    Index in_dim = 0;
    Index out_dim = 0;
    Vector params;
    Vector running_mean;
    Vector running_var;

    static Index param_count_for(LayerKind kind, Index in_dim, Index out_dim)
    {
        switch (kind) {
        case LayerKind::affine: return in_dim * out_dim + out_dim;
        case LayerKind::batchnorm: return 2 * in_dim;
        default: return 0;
        }
    }

    static LayerSpec affine(const Matrix& weight, const Vector& bias)
    {
        detail::require(weight.rows() == bias.size(), "affine: bias length must equal weight rows");
        LayerSpec layer;
        layer.kind = LayerKind::affine;
        layer.in_dim = weight.cols();
        layer.out_dim = weight.rows();
        layer.params.resize(layer.in_dim * layer.out_dim + layer.out_dim);
        for (Index i = 0; i < layer.out_dim; ++i)
            for (Index j = 0; j < layer.in_dim; ++j) layer.params(i * layer.in_dim + j) = weight(i, j);
        layer.params.tail(layer.out_dim) = bias;
        return layer;
    }

    /// Scaled-uniform weights in +-1/sqrt(in_dim), zero bias.
    static LayerSpec affine_random(Index in_dim, Index out_dim, Rng& rng)
    {
        detail::require(in_dim > 0 && out_dim > 0, "affine: dimensions must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix weight(out_dim, in_dim);
        for (Index i = 0; i < out_dim; ++i)
            for (Index j = 0; j < in_dim; ++j) weight(i, j) = dist(rng);
        return affine(weight, Vector::Zero(out_dim));
    }

    static LayerSpec activation(LayerKind kind, Index dim)
    {
        detail::require(kind == LayerKind::leaky_relu || kind == LayerKind::tanh,
                        "activation: kind must be leaky_relu or tanh");
        LayerSpec layer;
        layer.kind = kind;
        layer.in_dim = dim;
        layer.out_dim = dim;
        return layer;
    }

    static LayerSpec batchnorm(Index dim)
    {
        LayerSpec layer;
        layer.kind = LayerKind::batchnorm;
        layer.in_dim = dim;
        layer.out_dim = dim;
        layer.params.resize(2 * dim);
        layer.params.head(dim).setOnes();
        layer.params.tail(dim).setZero();
        layer.running_mean = Vector::Zero(dim);
        layer.running_var = Vector::Ones(dim);
        return layer;
    }
};

struct GradientBundle {
    Vector param_grads;
    Vector input_grad;
};

/// Activations and tangents recorded by a forward sweep; consumed by the reverse sweep.
struct ForwardTape {
    std::vector<Matrix> activations;  // activations[l] is the input of layer l; back() is the output
    std::vector<Matrix> tangents;     // same indexing; empty matrices when no directions were pushed
    Index batch = 0;
    Index directions = 0;

    const Matrix& output() const { return activations.back(); }
    const Matrix& output_tangents() const { return tangents.back(); }
};

struct TangentGradients {
    Vector params;      // summed over the batch
    Matrix inputs;      // in_dim x B
    Matrix directions;  // in_dim x B*p
};

class MlpNetwork {
public:
    MlpNetwork() = default;

    explicit MlpNetwork(std::vector<LayerSpec> layers) : layers_(std::move(layers))
    {
        detail::require(!layers_.empty(), "network needs at least one layer");
        param_count_ = 0;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            auto& layer = layers_[k];
            const std::string where = "layer " + std::to_string(k) + ": ";
            detail::require(layer.in_dim > 0 && layer.out_dim > 0, where + "dimensions must be positive");
            if (layer.kind != LayerKind::affine)
                detail::require(layer.in_dim == layer.out_dim, where + "activation layers keep their dimension");
            detail::require(layer.params.size() == LayerSpec::param_count_for(layer.kind, layer.in_dim, layer.out_dim),
                            where + "parameter count does not match layer kind");
            detail::require(layer.params.allFinite(), where + "parameters must be finite");
            if (layer.kind == LayerKind::batchnorm) {
                if (layer.running_mean.size() == 0) layer.running_mean = Vector::Zero(layer.in_dim);
                if (layer.running_var.size() == 0) layer.running_var = Vector::Ones(layer.in_dim);
                detail::require(layer.running_mean.size() == layer.in_dim && layer.running_var.size() == layer.in_dim,
                                where + "batchnorm statistics have the wrong length");
                detail::require((layer.running_var.array() >= 0.0).all(), where + "batchnorm variance must be >= 0");
            }
            if (k > 0)
                detail::require(layers_[k - 1].out_dim == layer.in_dim,
                                where + "input dimension does not match previous layer output");
            param_count_ += layer.params.size();
        }
    }

    /// in -> hidden[0] -> ... -> out with `activation` after every hidden affine layer.
    static MlpNetwork mlp(Index in_dim, std::span<const Index> hidden, Index out_dim, LayerKind activation, Rng& rng)
    {
        std::vector<LayerSpec> layers;
        Index prev = in_dim;
        for (Index width : hidden) {
            layers.push_back(LayerSpec::affine_random(prev, width, rng));
            layers.push_back(LayerSpec::activation(activation, width));
            prev = width;
        }
        layers.push_back(LayerSpec::affine_random(prev, out_dim, rng));
        return MlpNetwork(std::move(layers));
    }

    Index input_dim() const { return layers_.front().in_dim; }
    Index output_dim() const { return layers_.back().out_dim; }
    Index param_count() const { return param_count_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    Vector flat_params() const
    {
        Vector flat(param_count_);
        Index offset = 0;
        for (const auto& layer : layers_) {
            flat.segment(offset, layer.params.size()) = layer.params;
            offset += layer.params.size();
        }
        return flat;
    }

    void set_flat_params(const Vector& flat)
    {
        detail::require(flat.size() == param_count_, "set_flat_params: length mismatch");
        detail::require(flat.allFinite(), "set_flat_params: parameters must be finite");
        Index offset = 0;
        for (auto& layer : layers_) {
            layer.params = flat.segment(offset, layer.params.size());
            offset += layer.params.size();
        }
    }

    Vector forward(const Vector& x) const
    {
        check_input(x.size(), "forward");
        detail::require(x.allFinite(), "forward: input must be finite");
        return forward_batch(x);
    }

    Matrix forward_batch(const Matrix& inputs) const
    {
        check_input(inputs.rows(), "forward_batch");
        Matrix current = inputs;
        for (const auto& layer : layers_) current = apply_layer(layer, current);
        return current;
    }

    GradientBundle backward(const Vector& x, const Vector& upstream) const
    {
        check_input(x.size(), "backward");
        detail::require(upstream.size() == output_dim(), "backward: upstream length must equal output dim");
        const ForwardTape tape = forward_tangent(x, Matrix(x.size(), 0), 0);
        TangentGradients g = backward_tangent(tape, upstream, Matrix(output_dim(), 0));
        return {std::move(g.params), g.inputs.col(0)};
    }

    /// Dense Jacobian (out_dim x in_dim) assembled row by row from reverse sweeps.
    Matrix input_jacobian(const Vector& x) const
    {
        check_input(x.size(), "input_jacobian");
        const ForwardTape tape = forward_tangent(x, Matrix(x.size(), 0), 0);
        Matrix jac(output_dim(), input_dim());
        for (Index i = 0; i < output_dim(); ++i) {
            const Vector e = Vector::Unit(output_dim(), i);
            jac.row(i) = backward_tangent(tape, e, Matrix(output_dim(), 0)).inputs.col(0).transpose();
        }
        return jac;
    }

    /// J(x) v by a single forward tangent sweep.
    Vector jvp(const Vector& x, const Vector& v) const
    {
        check_input(x.size(), "jvp");
        detail::require(v.size() == input_dim(), "jvp: direction length must equal input dim");
        return forward_tangent(x, v, 1).output_tangents().col(0);
    }

    /// Forward sweep of a batch with `directions` tangent columns per sample.
    ForwardTape forward_tangent(const Matrix& inputs, const Matrix& tangents, Index directions) const
    {
        check_input(inputs.rows(), "forward_tangent");
        detail::require(directions >= 0, "forward_tangent: directions must be >= 0");
        detail::require(tangents.rows() == inputs.rows() && tangents.cols() == inputs.cols() * directions,
                        "forward_tangent: tangent block has the wrong shape");
        ForwardTape tape;
        tape.batch = inputs.cols();
        tape.directions = directions;
        tape.activations.reserve(layers_.size() + 1);
        tape.tangents.reserve(layers_.size() + 1);
        tape.activations.push_back(inputs);
        tape.tangents.push_back(tangents);
        for (const auto& layer : layers_) {
            const Matrix& a = tape.activations.back();
            const Matrix& t = tape.tangents.back();
            Matrix next_t;
            if (layer.kind == LayerKind::affine) {
                next_t = directions > 0 ? Matrix(weight(layer) * t) : Matrix(layer.out_dim, 0);
            } else {
                next_t = t;
                if (directions > 0) {
                    const Matrix slope = layer_slope(layer, a);
                    scale_blocks(next_t, slope, directions);
                }
            }
            tape.activations.push_back(apply_layer(layer, a));
            tape.tangents.push_back(std::move(next_t));
        }
        return tape;
    }

    /// Reverse sweep for the scalar sum(grad_out .* out) + sum(grad_tangent .* out_tangents).
    TangentGradients backward_tangent(const ForwardTape& tape, const Matrix& grad_out,
                                      const Matrix& grad_tangent) const
    {
        const Index batch = tape.batch;
        const Index p = tape.directions;
        detail::require(tape.activations.size() == layers_.size() + 1, "backward_tangent: tape does not match network");
        detail::require(grad_out.rows() == output_dim() && grad_out.cols() == batch,
                        "backward_tangent: output gradient has the wrong shape");
        detail::require(grad_tangent.rows() == output_dim() && grad_tangent.cols() == batch * p,
                        "backward_tangent: tangent gradient has the wrong shape");

        TangentGradients result;
        result.params = Vector::Zero(param_count_);
        Matrix g_a = grad_out;
        Matrix g_t = grad_tangent;
        Index offset = param_count_;
        for (std::size_t k = layers_.size(); k-- > 0;) {
            const LayerSpec& layer = layers_[k];
            const Matrix& a = tape.activations[k];
            const Matrix& t = tape.tangents[k];
            offset -= layer.params.size();
            auto g_params = result.params.segment(offset, layer.params.size());

            switch (layer.kind) {
            case LayerKind::affine: {
                Matrix g_w = g_a * a.transpose();
                if (p > 0) g_w.noalias() += g_t * t.transpose();
                for (Index i = 0; i < layer.out_dim; ++i)
                    for (Index j = 0; j < layer.in_dim; ++j) g_params(i * layer.in_dim + j) = g_w(i, j);
                g_params.tail(layer.out_dim) = g_a.rowwise().sum();
                const auto w = weight(layer);
                g_a = w.transpose() * g_a;
                if (p > 0) g_t = w.transpose() * g_t;
                break;
            }
            case LayerKind::leaky_relu: {
                const Matrix slope = layer_slope(layer, a);
                g_a = g_a.cwiseProduct(slope);
                if (p > 0) scale_blocks(g_t, slope, p);
                break;
            }
            case LayerKind::tanh: {
                const Matrix& out = tape.activations[k + 1];
                const Matrix slope = (1.0 - out.array().square()).matrix();
                Matrix g_in = g_a.cwiseProduct(slope);
                if (p > 0) {
                    // d/dx of tanh'(x) = -2 tanh(x) tanh'(x)
                    const Matrix curvature = (-2.0 * out.array() * slope.array()).matrix();
                    for (Index b = 0; b < batch; ++b) {
                        const Vector contraction =
                            g_t.middleCols(b * p, p).cwiseProduct(t.middleCols(b * p, p)).rowwise().sum();
                        g_in.col(b) += curvature.col(b).cwiseProduct(contraction);
                    }
                    scale_blocks(g_t, slope, p);
                }
                g_a = std::move(g_in);
                break;
            }
            case LayerKind::batchnorm: {
                const Index dim = layer.in_dim;
                const Vector inv_std = (layer.running_var.array() + kBatchNormEps).rsqrt().matrix();
                const Vector gamma = layer.params.head(dim);
                const Matrix normalized = ((a.colwise() - layer.running_mean).array().colwise() * inv_std.array()).matrix();
                Vector g_gamma = g_a.cwiseProduct(normalized).rowwise().sum();
                if (p > 0) g_gamma += (g_t.cwiseProduct(t).rowwise().sum()).cwiseProduct(inv_std);
                g_params.head(dim) = g_gamma;
                g_params.tail(dim) = g_a.rowwise().sum();
                const Vector scale = gamma.cwiseProduct(inv_std);
                g_a = (g_a.array().colwise() * scale.array()).matrix();
                if (p > 0) g_t = (g_t.array().colwise() * scale.array()).matrix();
                break;
            }
            }
        }
        result.inputs = std::move(g_a);
        result.directions = std::move(g_t);
        return result;
    }

    /// Sets every batchnorm layer's stored statistics from a batch (momentum 1 replaces them).
    void update_batchnorm_statistics(const Matrix& inputs, double momentum = 1.0)
    {
        check_input(inputs.rows(), "update_batchnorm_statistics");
        detail::require(inputs.cols() >= 2, "update_batchnorm_statistics: need at least two samples");
        Matrix current = inputs;
        for (auto& layer : layers_) {
            if (layer.kind == LayerKind::batchnorm) {
                const Vector mean = current.rowwise().mean();
                const Vector var = (current.colwise() - mean).array().square().rowwise().mean().matrix();
                layer.running_mean = (1.0 - momentum) * layer.running_mean + momentum * mean;
                layer.running_var = (1.0 - momentum) * layer.running_var + momentum * var;
            }
            current = apply_layer(layer, current);
        }
    }

private:
    using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    static Eigen::Map<const RowMajorMatrix> weight(const LayerSpec& layer)
    {
        return {layer.params.data(), layer.out_dim, layer.in_dim};
    }

    static Matrix apply_layer(const LayerSpec& layer, const Matrix& a)
    {
        switch (layer.kind) {
        case LayerKind::affine: {
            Matrix out = weight(layer) * a;
            out.colwise() += layer.params.tail(layer.out_dim);
            return out;
        }
        case LayerKind::leaky_relu:
            return a.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
        case LayerKind::tanh:
            return a.array().tanh().matrix();
        case LayerKind::batchnorm: {
            const Index dim = layer.in_dim;
            const Vector scale = layer.params.head(dim).cwiseProduct(
                (layer.running_var.array() + kBatchNormEps).rsqrt().matrix());
            Matrix out = ((a.colwise() - layer.running_mean).array().colwise() * scale.array()).matrix();
            out.colwise() += layer.params.tail(dim);
            return out;
        }
        }
        return a;
    }

    // Diagonal of an elementwise layer's Jacobian, per sample (dim x B).
    static Matrix layer_slope(const LayerSpec& layer, const Matrix& a)
    {
        switch (layer.kind) {
        case LayerKind::leaky_relu:
            return a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
        case LayerKind::tanh:
            return (1.0 - a.array().tanh().square()).matrix();
        case LayerKind::batchnorm: {
            const Vector scale = layer.params.head(layer.in_dim).cwiseProduct(
                (layer.running_var.array() + kBatchNormEps).rsqrt().matrix());
            return scale.replicate(1, a.cols());
        }
        default:
            return Matrix::Ones(a.rows(), a.cols());
        }
    }

    static void scale_blocks(Matrix& blocks, const Matrix& slope, Index p)
    {
        for (Index b = 0; b < slope.cols(); ++b)
            blocks.middleCols(b * p, p).array().colwise() *= slope.col(b).array();
    }

    void check_input(Index rows, const char* op) const
    {
        detail::require(!layers_.empty(), std::string(op) + ": network is empty");
        detail::require(rows == input_dim(), std::string(op) + ": expected input of dimension " +
                                                 std::to_string(input_dim()) + ", got " + std::to_string(rows));
    }

    std::vector<LayerSpec> layers_;
    Index param_count_ = 0;
};

}  // namespace owf

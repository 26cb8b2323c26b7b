#pragma once

#include <string>
#include <vector>

#include "reclm/core.hpp"

namespace reclm {

struct Param {
    Mat w;
    Mat g;

    explicit Param(Mat init = Mat()) : w(std::move(init)), g(Mat::Zero(w.rows(), w.cols())) {}
    void zero_grad() { g.setZero(); }
};

enum class Activation { Linear, Tanh, Relu };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation a);

struct MlpSpec {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<int> hidden;  // widths of hidden layers, may be empty (pure linear map)
    Activation activation = Activation::Tanh;

    bool operator==(const MlpSpec&) const = default;
};

// Dense MLP with explicit backward; activation applied between layers only.
class Mlp {
  public:
    Mlp() = default;
    Mlp(const MlpSpec& spec, Rng& rng);

    static Mlp identity(int dim);                      // single linear layer, W = I, b = 0
    static Mlp from_weights(const Mat& w, const Vec& b, Activation act = Activation::Linear);
    static Mlp first_arg_projection(int out_dim, int in_dim);  // W = [I 0], picks the leading block

    Mat forward(const Mat& x) const;  // rows are samples
    Vec forward(const Vec& x) const;
    // Records the activations entering each layer for a later backward pass.
    Mat forward(const Mat& x, std::vector<Mat>& trace) const;

    // Accumulates parameter gradients for d(loss)/d(output) = g_out; returns d(loss)/d(input).
    Mat backward(const Mat& x, const Mat& g_out);
    Mat backward(const std::vector<Mat>& trace, const Mat& g_out);

    void zero_grad();
    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    const MlpSpec& spec() const { return spec_; }
    std::size_t parameter_count() const;

    std::vector<Param>& weights() { return weights_; }
    std::vector<Param>& biases() { return biases_; }

  private:
    MlpSpec spec_;
    std::vector<Param> weights_;  // layer l: (fan_in x fan_out)
    std::vector<Param> biases_;   // layer l: (1 x fan_out)

    friend void write_mlp(std::ostream&, const Mlp&);
    friend Mlp read_mlp(std::istream&);
};

// Adam with the usual defaults; moment state is positional over the param list.
class Adam {
  public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Param*>& params);

  private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Mat> m_, v_;
};

}  // namespace reclm

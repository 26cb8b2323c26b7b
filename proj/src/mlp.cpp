#include "reclm/mlp.hpp"

namespace reclm {

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    throw ConfigError("unknown activation: " + name);
}

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    throw ConfigError("bad activation enum");
}

namespace {

Mat apply_activation(const Mat& z, Activation a) {
    switch (a) {
        case Activation::Linear: return z;
        case Activation::Tanh: return z.array().tanh().matrix();
        case Activation::Relu: return z.cwiseMax(0.0);
    }
    throw ConfigError("bad activation enum");
}

// derivative expressed in terms of the activated value
Mat activation_grad(const Mat& activated, Activation a) {
    switch (a) {
        case Activation::Linear: return Mat::Ones(activated.rows(), activated.cols());
        case Activation::Tanh: return (1.0 - activated.array().square()).matrix();
        case Activation::Relu: return (activated.array() > 0.0).cast<double>().matrix();
    }
    throw ConfigError("bad activation enum");
}

}  // namespace

Mlp::Mlp(const MlpSpec& spec, Rng& rng) : spec_(spec) {
    if (spec.in_dim < 1 || spec.out_dim < 1) throw ConfigError("mlp dims must be positive");
    std::vector<int> dims{spec.in_dim};
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
    dims.push_back(spec.out_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Mat w(dims[l], dims[l + 1]);
        xavier_init(w, rng);
        weights_.emplace_back(std::move(w));
        biases_.emplace_back(Mat::Zero(1, dims[l + 1]));
    }
}

Mlp Mlp::identity(int dim) {
    Mlp m;
    m.spec_ = {dim, dim, {}, Activation::Linear};
    m.weights_.emplace_back(Mat::Identity(dim, dim));
    m.biases_.emplace_back(Mat::Zero(1, dim));
    return m;
}

Mlp Mlp::from_weights(const Mat& w, const Vec& b, Activation act) {
    Mlp m;
    m.spec_ = {int(w.rows()), int(w.cols()), {}, act};
    m.weights_.emplace_back(w);
    m.biases_.emplace_back(b.transpose());
    return m;
}

Mlp Mlp::first_arg_projection(int out_dim, int in_dim) {
    if (in_dim < out_dim) throw ConfigError("projection needs in_dim >= out_dim");
    Mat w = Mat::Zero(in_dim, out_dim);
    w.topRows(out_dim) = Mat::Identity(out_dim, out_dim);
    return from_weights(w, Vec::Zero(out_dim));
}

Mat Mlp::forward(const Mat& x) const {
    if (x.cols() != spec_.in_dim) throw DimensionError("mlp input dim mismatch");
    require_finite(x, "mlp input");
    Mat h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = (h * weights_[l].w).rowwise() + biases_[l].w.row(0);
        if (l + 1 < weights_.size()) h = apply_activation(h, spec_.activation);
    }
    return h;
}

Vec Mlp::forward(const Vec& x) const {
    return forward(Mat(x.transpose())).row(0).transpose();
}

Mat Mlp::forward(const Mat& x, std::vector<Mat>& trace) const {
    if (x.cols() != spec_.in_dim) throw DimensionError("mlp input dim mismatch");
    require_finite(x, "mlp input");
    trace.clear();
    trace.push_back(x);  // activations entering each layer
    Mat h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = (h * weights_[l].w).rowwise() + biases_[l].w.row(0);
        if (l + 1 < weights_.size()) h = apply_activation(h, spec_.activation);
        trace.push_back(h);
    }
    return h;
}

Mat Mlp::backward(const Mat& x, const Mat& g_out) {
    std::vector<Mat> trace;
    forward(x, trace);
    return backward(trace, g_out);
}

Mat Mlp::backward(const std::vector<Mat>& acts, const Mat& g_out) {
    if (acts.size() != weights_.size() + 1 || acts.front().cols() != spec_.in_dim ||
        g_out.cols() != spec_.out_dim || acts.front().rows() != g_out.rows())
        throw DimensionError("mlp backward shape mismatch");

    Mat g = g_out;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        if (l + 1 < weights_.size())
            g = g.cwiseProduct(activation_grad(acts[l + 1], spec_.activation));
        weights_[l].g.noalias() += acts[l].transpose() * g;
        biases_[l].g.row(0) += g.colwise().sum();
        g = g * weights_[l].w.transpose();
    }
    return g;
}

void Mlp::zero_grad() {
    for (auto& p : weights_) p.zero_grad();
    for (auto& p : biases_) p.zero_grad();
}

std::vector<Param*> Mlp::params() {
    std::vector<Param*> out;
    for (auto& p : weights_) out.push_back(&p);
    for (auto& p : biases_) out.push_back(&p);
    return out;
}

std::vector<const Param*> Mlp::params() const {
    std::vector<const Param*> out;
    for (auto& p : weights_) out.push_back(&p);
    for (auto& p : biases_) out.push_back(&p);
    return out;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (auto* p : params()) n += std::size_t(p->w.size());
    return n;
}

void Adam::step(const std::vector<Param*>& params) {
    if (m_.empty()) {
        for (auto* p : params) {
            m_.push_back(Mat::Zero(p->w.rows(), p->w.cols()));
            v_.push_back(Mat::Zero(p->w.rows(), p->w.cols()));
        }
    }
    if (m_.size() != params.size()) throw ConfigError("adam applied to a different parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.g.cwiseProduct(p.g);
        Mat mhat = m_[i] / bc1;
        Mat vhat = v_[i] / bc2;
        p.w.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
}

}  // namespace reclm

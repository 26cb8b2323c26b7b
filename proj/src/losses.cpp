#include "reclm/losses.hpp"

namespace reclm {

double dot_score(const Eigen::Ref<const Vec>& e_u, const Eigen::Ref<const Vec>& e_v) {
    if (e_u.size() != e_v.size()) throw DimensionError("score: dimension mismatch");
    return e_u.dot(e_v);
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {
// numerically stable ln(1 + e^x)
double softplus(double x) {
    if (x > 30) return x;
    return std::log1p(std::exp(x));
}
}  // namespace

double bpr_loss(double pos_score, double neg_score, double l2, double params_norm) {
    if (!std::isfinite(pos_score) || !std::isfinite(neg_score))
        throw DimensionError("bpr: non-finite score");
    return softplus(-(pos_score - neg_score)) + l2 * params_norm * params_norm;
}

std::pair<double, double> bpr_grad(double pos_score, double neg_score) {
    const double g = sigmoid(pos_score - neg_score) - 1.0;  // d/d(pos)
    return {g, -g};
}

namespace {

Mat row_normalize(const Mat& x) {
    Mat out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double n = out.row(i).norm();
        if (n > 0) out.row(i) /= n;
    }
    return out;
}

}  // namespace

double info_nce(const Mat& view_a, const Mat& view_b, double temperature) {
    if (view_a.rows() != view_b.rows() || view_a.cols() != view_b.cols())
        throw DimensionError("info_nce: shape mismatch");
    if (temperature <= 0.0) throw ConfigError("info_nce: temperature must be positive");
    const Eigen::Index n = view_a.rows();
    if (n == 0) return 0.0;
    Mat s = row_normalize(view_a) * row_normalize(view_b).transpose() / temperature;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = s.row(i).maxCoeff();
        double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
        loss += lse - s(i, i);
    }
    return loss / double(n);
}

InfoNceGrads info_nce_backward(const Mat& view_a, const Mat& view_b, double temperature) {
    const Eigen::Index n = view_a.rows();
    InfoNceGrads grads{Mat::Zero(n, view_a.cols()), Mat::Zero(n, view_b.cols())};
    if (n == 0) return grads;
    Mat a_hat = row_normalize(view_a);
    Mat b_hat = row_normalize(view_b);
    Mat s = a_hat * b_hat.transpose() / temperature;

    Mat g_s(n, n);  // d(loss)/d(s) = (softmax_row - I) / n
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = s.row(i).maxCoeff();
        Eigen::RowVectorXd p = (s.row(i).array() - mx).exp();
        p /= p.sum();
        g_s.row(i) = p / double(n);
        g_s(i, i) -= 1.0 / double(n);
    }
    Mat g_a_hat = g_s * b_hat / temperature;
    Mat g_b_hat = g_s.transpose() * a_hat / temperature;

    // through the row normalization: g_x = (g_hat - (g_hat . x_hat) x_hat) / ||x||
    auto denorm = [](const Mat& x, const Mat& x_hat, const Mat& g_hat) {
        Mat g = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double nrm = x.row(i).norm();
            if (nrm == 0) continue;
            double proj = g_hat.row(i).dot(x_hat.row(i));
            g.row(i) = (g_hat.row(i) - proj * x_hat.row(i)) / nrm;
        }
        return g;
    };
    grads.a = denorm(view_a, a_hat, g_a_hat);
    grads.b = denorm(view_b, b_hat, g_b_hat);
    return grads;
}

}  // namespace reclm

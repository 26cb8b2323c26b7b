#pragma once

#include "reclm/core.hpp"

namespace reclm {

double dot_score(const Eigen::Ref<const Vec>& e_u, const Eigen::Ref<const Vec>& e_v);

double sigmoid(double x);

// -ln sigmoid(pos - neg) + l2 * params_norm^2
double bpr_loss(double pos_score, double neg_score, double l2 = 0.0, double params_norm = 0.0);

// d(loss)/d(pos_score) and d(loss)/d(neg_score), regularizer excluded
std::pair<double, double> bpr_grad(double pos_score, double neg_score);

// InfoNCE over row-aligned positives with in-batch negatives, cosine similarity.
double info_nce(const Mat& view_a, const Mat& view_b, double temperature);

struct InfoNceGrads {
    Mat a;
    Mat b;
};
InfoNceGrads info_nce_backward(const Mat& view_a, const Mat& view_b, double temperature);

}  // namespace reclm

#include "reclm/fusion.hpp"

namespace reclm {

FusionNetworks::FusionNetworks(int d, int d_t, Rng& rng, Activation act) : d(d), d_t(d_t) {
    t_raw = Mlp({d_t, d, {d}, act}, rng);
    t_pro = Mlp({d_t, d, {d}, act}, rng);
    psi = Mlp({2 * d, d, {d}, act}, rng);
    // Near-identity start: psi(base | profile) ~= base, with the profile block at
    // zero so the fused representation begins at the base one and the profile
    // path fades in through training instead of scrambling the base signal.
    Mat w1 = Mat::Zero(2 * d, d);
    w1.topRows(d) = Mat::Identity(d, d);
    psi.weights()[0].w = w1;
    psi.weights()[1].w = Mat::Identity(d, d);
}

FusionNetworks FusionNetworks::degenerate(int d, int d_t) {
    FusionNetworks nets;
    nets.d = d;
    nets.d_t = d_t;
    Rng rng(0);
    nets.t_raw = Mlp({d_t, d, {d}, Activation::Tanh}, rng);
    // psi drops its second argument, so any d_t -> d map keeps the shapes legal
    nets.t_pro = (d_t == d) ? Mlp::identity(d) : Mlp({d_t, d, {}, Activation::Linear}, rng);
    nets.psi = Mlp::first_arg_projection(d, 2 * d);
    return nets;
}

Vec FusionNetworks::project_raw(const Vec& f) const { return t_raw.forward(f); }
Mat FusionNetworks::project_raw(const Mat& f) const { return t_raw.forward(f); }

Mat FusionNetworks::fuse(const Mat& base, const Mat& profile_embeddings) const {
    if (base.cols() != d) throw DimensionError("fuse: base dim != d");
    if (profile_embeddings.cols() != t_pro.spec().in_dim) throw DimensionError("fuse: profile dim mismatch");
    if (base.rows() != profile_embeddings.rows()) throw DimensionError("fuse: row count mismatch");
    Mat projected = t_pro.forward(profile_embeddings);
    Mat cat(base.rows(), 2 * d);
    cat << base, projected;
    return psi.forward(cat);
}

Vec FusionNetworks::fuse(const Vec& base, const Vec& profile_embedding) const {
    return fuse(Mat(base.transpose()), Mat(profile_embedding.transpose())).row(0).transpose();
}

std::pair<Mat, Mat> FusionNetworks::fuse_backward(const Mat& base, const Mat& profile_embeddings,
                                                  const Mat& g_out) {
    Mat projected = t_pro.forward(profile_embeddings);
    Mat cat(base.rows(), 2 * d);
    cat << base, projected;
    Mat g_cat = psi.backward(cat, g_out);
    Mat g_base = g_cat.leftCols(d);
    Mat g_profile = t_pro.backward(profile_embeddings, g_cat.rightCols(d));
    return {g_base, g_profile};
}

std::vector<Param*> FusionNetworks::params() {
    std::vector<Param*> out;
    for (auto* p : t_raw.params()) out.push_back(p);
    for (auto* p : t_pro.params()) out.push_back(p);
    for (auto* p : psi.params()) out.push_back(p);
    return out;
}

void FusionNetworks::zero_grad() {
    t_raw.zero_grad();
    t_pro.zero_grad();
    psi.zero_grad();
}

}  // namespace reclm

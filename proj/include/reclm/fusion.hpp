#pragma once

#include "reclm/mlp.hpp"

namespace reclm {

// The three networks around the embedding tables: a raw-text projection,
// a profile projection, and the fusion encoder over (base | projected profile).
struct FusionNetworks {
    Mlp t_raw;  // d_t -> d
    Mlp t_pro;  // d_t -> d
    Mlp psi;    // 2d -> d, concatenation order fixed as (base, projected profile)
    int d = 0;
    int d_t = 0;

    FusionNetworks() = default;
    FusionNetworks(int d, int d_t, Rng& rng, Activation act = Activation::Tanh);

    // text_plus_profile collapses to text_item when psi ignores its second argument
    static FusionNetworks degenerate(int d, int d_t);

    Vec project_raw(const Vec& f) const;
    Mat project_raw(const Mat& f) const;

    Vec fuse(const Vec& base, const Vec& profile_embedding) const;
    Mat fuse(const Mat& base, const Mat& profile_embeddings) const;

    // returns (grad_base, grad_profile_embedding); accumulates into psi/t_pro grads
    std::pair<Mat, Mat> fuse_backward(const Mat& base, const Mat& profile_embeddings, const Mat& g_out);

    std::vector<Param*> params();
    void zero_grad();
};

}  // namespace reclm

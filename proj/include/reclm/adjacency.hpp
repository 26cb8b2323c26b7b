#pragma once

#include <Eigen/Sparse>

#include "reclm/core.hpp"
#include "reclm/data.hpp"

namespace reclm {

using SpMat = Eigen::SparseMatrix<double>;

// Symmetric-normalized bipartite adjacency over (users + items) nodes,
// entries 1/sqrt(deg_u * deg_v).
struct NormalizedAdjacency {
    SpMat adj;  // (n_users + n_items) square
    int n_users = 0;
    int n_items = 0;

    static NormalizedAdjacency build(const InteractionLog& train);

    // Rebuild with each interaction kept with probability (1 - drop_rate);
    // degrees renormalize on the surviving graph.
    static NormalizedAdjacency build_dropped(const InteractionLog& train, double drop_rate, Rng& rng);
};

// E^(l+1) = A E^(l); returns the mean of E^(0..L).
Mat propagate_lightgcn(const NormalizedAdjacency& adj, const Mat& e0, int layers);

// Gradient of propagate_lightgcn w.r.t. e0 (A is symmetric, so this is the
// same averaging applied to the output gradient).
Mat propagate_lightgcn_backward(const NormalizedAdjacency& adj, const Mat& g_out, int layers);

// SimGCL-style forward: uniform noise of magnitude eps, sign-aligned with the
// embedding, injected after every propagation step. Noise draws come from rng.
Mat propagate_noisy(const NormalizedAdjacency& adj, const Mat& e0, int layers, double eps, Rng& rng);

}  // namespace reclm

#include "reclm/adjacency.hpp"

namespace reclm {

namespace {

NormalizedAdjacency from_edges(const std::vector<std::pair<int, int>>& edges, int n_users, int n_items) {
    const int n = n_users + n_items;
    std::vector<double> deg(n, 0.0);
    for (auto& [u, v] : edges) {
        deg[u] += 1.0;
        deg[n_users + v] += 1.0;
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(edges.size() * 2);
    for (auto& [u, v] : edges) {
        const int iu = u, iv = n_users + v;
        const double w = 1.0 / std::sqrt(deg[iu] * deg[iv]);
        trips.push_back({iu, iv, w});
        trips.push_back({iv, iu, w});
    }
    NormalizedAdjacency out;
    out.n_users = n_users;
    out.n_items = n_items;
    out.adj = SpMat(n, n);
    out.adj.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace

NormalizedAdjacency NormalizedAdjacency::build(const InteractionLog& train) {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(train.events.size());
    for (const auto& e : train.events) edges.push_back({e.user, e.item});
    return from_edges(edges, train.n_users, train.n_items);
}

NormalizedAdjacency NormalizedAdjacency::build_dropped(const InteractionLog& train, double drop_rate,
                                                       Rng& rng) {
    if (drop_rate < 0.0 || drop_rate >= 1.0) throw ConfigError("edge drop rate must be in [0, 1)");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : train.events)
        if (u01(rng) >= drop_rate) edges.push_back({e.user, e.item});
    return from_edges(edges, train.n_users, train.n_items);
}

Mat propagate_lightgcn(const NormalizedAdjacency& adj, const Mat& e0, int layers) {
    if (layers < 0) throw ConfigError("layer count must be non-negative");
    if (e0.rows() != adj.adj.rows()) throw DimensionError("propagation: row count != node count");
    Mat acc = e0;
    Mat cur = e0;
    for (int l = 0; l < layers; ++l) {
        cur = adj.adj * cur;
        acc += cur;
    }
    return acc / double(layers + 1);
}

Mat propagate_lightgcn_backward(const NormalizedAdjacency& adj, const Mat& g_out, int layers) {
    return propagate_lightgcn(adj, g_out, layers);
}

Mat propagate_noisy(const NormalizedAdjacency& adj, const Mat& e0, int layers, double eps, Rng& rng) {
    if (e0.rows() != adj.adj.rows()) throw DimensionError("propagation: row count != node count");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Mat acc = e0;
    Mat cur = e0;
    for (int l = 0; l < layers; ++l) {
        cur = adj.adj * cur;
        // row-normalized uniform direction, sign-aligned with the embedding
        Mat noise(cur.rows(), cur.cols());
        for (Eigen::Index i = 0; i < noise.rows(); ++i) {
            for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(i, j) = u01(rng);
            double nrm = noise.row(i).norm();
            if (nrm > 0) noise.row(i) /= nrm;
            for (Eigen::Index j = 0; j < noise.cols(); ++j)
                noise(i, j) *= (cur(i, j) >= 0 ? 1.0 : -1.0);
        }
        cur += eps * noise;
        acc += cur;
    }
    return acc / double(layers + 1);
}

}  // namespace reclm

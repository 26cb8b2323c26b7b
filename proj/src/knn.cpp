#include "reclm/knn.hpp"

#include <algorithm>
#include <iostream>
#include <limits>

namespace reclm {

double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return -std::numeric_limits<double>::infinity();
    return a.dot(b) / (na * nb);
}

std::vector<int> top_k_similar(const Eigen::Ref<const Mat>& embeddings, int query_id, int k,
                               bool exclude_self) {
    const int n = int(embeddings.rows());
    if (query_id < 0 || query_id >= n) throw ConfigError("top_k_similar: query id out of range");
    if (k >= n) throw ConfigError("top_k_similar: k must be smaller than the row count");

    const Vec q = embeddings.row(query_id).transpose();
    bool warned = false;
    std::vector<std::pair<double, int>> scored;
    scored.reserve(n);
    for (int i = 0; i < n; ++i) {
        if (exclude_self && i == query_id) continue;
        double s = cosine_similarity(embeddings.row(i).transpose(), q);
        if (std::isinf(s) && !warned) {
            std::cerr << "[reclm] warning: zero-norm embedding row encountered in top_k_similar\n";
            warned = true;
        }
        scored.push_back({s, i});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    for (int i = 0; i < k && i < int(scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

NeighborIndex NeighborIndex::build(const Eigen::Ref<const Mat>& embeddings, int k) {
    NeighborIndex index;
    index.neighbors.resize(embeddings.rows());
    for (int i = 0; i < int(embeddings.rows()); ++i)
        index.neighbors[i] = top_k_similar(embeddings, i, k, true);
    return index;
}

}  // namespace reclm

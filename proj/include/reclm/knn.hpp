#pragma once

#include <vector>

#include "reclm/core.hpp"

namespace reclm {

// Cosine top-k over rows of an embedding matrix. Ties break by ascending id;
// zero-norm rows rank below everything (similarity treated as -inf).
std::vector<int> top_k_similar(const Eigen::Ref<const Mat>& embeddings, int query_id, int k,
                               bool exclude_self = true);

double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b);

// Precomputed neighbor lists, one per row.
struct NeighborIndex {
    std::vector<std::vector<int>> neighbors;

    static NeighborIndex build(const Eigen::Ref<const Mat>& embeddings, int k);
};

}  // namespace reclm

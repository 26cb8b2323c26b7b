#pragma once

#include <optional>
#include <set>

#include "reclm/adjacency.hpp"
#include "reclm/fusion.hpp"
#include "reclm/losses.hpp"
#include "reclm/text_encoder.hpp"

namespace reclm {

enum class Backbone { BiasMF, NCF, LightGCN, SGL, SimGCL };
enum class EmbeddingMode { IdOnly, TextItem, TextPlusProfile };

Backbone backbone_from_string(const std::string& s);
std::string backbone_to_string(Backbone b);
EmbeddingMode mode_from_string(const std::string& s);
std::string mode_to_string(EmbeddingMode m);
bool backbone_uses_graph(Backbone b);

struct TrainConfig {
    int batch_size = 256;
    double learning_rate = 1e-3;
    double l2 = 1e-5;
    int epochs = 30;
    std::uint64_t seed = 0;
    double ssl_weight = 0.1;     // SGL / SimGCL
    double edge_dropout = 0.1;   // SGL
    double noise_eps = 0.1;      // SimGCL
    double temperature = 0.5;    // SSL temperature tau
    std::string checkpoint_dir;  // per-epoch checkpoints when non-empty

    void validate() const;
};

// Profile embeddings p_u / p_v, rows aligned with dense ids.
struct ProfileEmbeddingInput {
    Mat user;  // n_users x d_t
    Mat item;  // n_items x d_t
};

struct Encoded {
    Mat users;  // n_users x d
    Mat items;  // n_items x d
};

struct LossTraceRow {
    int epoch = 0;
    double loss = 0.0;
    double ssl = 0.0;
    double reg = 0.0;
};

class RecommenderModel {
  public:
    RecommenderModel() = default;
    RecommenderModel(Backbone backbone, EmbeddingMode mode, int n_users, int n_items, int d, int d_t,
                     int layers, std::uint64_t seed);

    Backbone backbone() const { return backbone_; }
    // Feature-exclusion ablations: disable fusion on one side so that side
    // reverts to its unaugmented base embedding.
    void set_augment_sides(bool users, bool items);
    bool augment_users() const { return augment_users_; }
    bool augment_items() const { return augment_items_; }
    EmbeddingMode mode() const { return mode_; }
    int n_users() const { return n_users_; }
    int n_items() const { return n_items_; }
    int dim() const { return d_; }
    int text_dim() const { return d_t_; }
    int layers() const { return layers_; }

    // Assembles the configured embedding function and applies the backbone.
    // GNN backbones read the interaction graph from `train`. In id_only mode a
    // non-empty cold set is unservable and raises.
    Encoded encode_all(const InteractionLog* train, const TextFeatureMatrix* features,
                       const ProfileEmbeddingInput* profiles,
                       const std::set<int>* cold_items = nullptr) const;

    double pair_score(const Encoded& enc, int u, int v) const;
    Vec scores_for_user(const Encoded& enc, int u, const std::vector<int>& item_ids) const;

    std::vector<LossTraceRow> train(const DatasetSplit& split, const TrainConfig& cfg,
                                    const TextFeatureMatrix* features,
                                    const ProfileEmbeddingInput* profiles);

    void save(const std::string& path) const;
    static RecommenderModel load(const std::string& path);

    Param& user_table() { return user_emb_; }
    Param& item_table() { return item_emb_; }
    FusionNetworks& fusion() { return fusion_; }
    const FusionNetworks& fusion() const { return fusion_; }
    std::vector<Param*> trainable_params();

  private:
    Backbone backbone_ = Backbone::LightGCN;
    EmbeddingMode mode_ = EmbeddingMode::IdOnly;
    int n_users_ = 0, n_items_ = 0, d_ = 0, d_t_ = 0, layers_ = 2;
    std::uint64_t init_seed_ = 0;
    bool augment_users_ = true, augment_items_ = true;

    Param user_emb_;   // n_users x d
    Param item_emb_;   // n_items x d (id_only item table)
    Param user_bias_;  // BiasMF, n_users x 1
    Param item_bias_;  // BiasMF, n_items x 1
    FusionNetworks fusion_;
    Mlp ncf_mlp_;     // NeuMF tower over [e_u ; e_v]
    Param ncf_head_;  // 1 x 2d over [gmf ; tower_out]
    Param ncf_bias_;  // 1 x 1

    struct BaseCache {
        Mat base_users;  // pre-backbone user embeddings
        Mat base_items;
        // intermediate activations kept so the backward pass skips recomputation
        Mat raw_items;   // t_raw(features), text modes only
        Mat proj_users;  // t_pro(user profiles), text_plus_profile only
        Mat proj_items;  // t_pro(item profiles), text_plus_profile only
        std::vector<Mat> tr_raw, tr_pro_u, tr_pro_i, tr_psi_u, tr_psi_i;  // mlp layer traces
    };
    BaseCache assemble_base(const TextFeatureMatrix* features,
                            const ProfileEmbeddingInput* profiles) const;
    void backward_base(const BaseCache& cache, const TextFeatureMatrix* features,
                       const ProfileEmbeddingInput* profiles, const Mat& g_users, const Mat& g_items);

    double ncf_pair_forward(const Vec& e_u, const Vec& e_v) const;
    void ncf_pair_backward(const Vec& e_u, const Vec& e_v, double g_score, Vec& g_eu, Vec& g_ev);

    void zero_grad();
};

void write_loss_trace_csv(const std::vector<LossTraceRow>& trace, const std::string& path);

}  // namespace reclm

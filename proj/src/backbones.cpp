#include "reclm/backbones.hpp"

#include <fstream>
#include <iostream>
#include <unordered_set>

#include "reclm/checkpoint.hpp"

namespace reclm {

Backbone backbone_from_string(const std::string& s) {
    if (s == "biasmf") return Backbone::BiasMF;
    if (s == "ncf") return Backbone::NCF;
    if (s == "lightgcn") return Backbone::LightGCN;
    if (s == "sgl") return Backbone::SGL;
    if (s == "simgcl") return Backbone::SimGCL;
    throw ConfigError("unknown backbone: " + s);
}

std::string backbone_to_string(Backbone b) {
    switch (b) {
        case Backbone::BiasMF: return "biasmf";
        case Backbone::NCF: return "ncf";
        case Backbone::LightGCN: return "lightgcn";
        case Backbone::SGL: return "sgl";
        case Backbone::SimGCL: return "simgcl";
    }
    throw ConfigError("bad backbone enum");
}

EmbeddingMode mode_from_string(const std::string& s) {
    if (s == "id_only") return EmbeddingMode::IdOnly;
    if (s == "text_item") return EmbeddingMode::TextItem;
    if (s == "text_plus_profile") return EmbeddingMode::TextPlusProfile;
    throw ConfigError("unknown embedding mode: " + s);
}

std::string mode_to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::IdOnly: return "id_only";
        case EmbeddingMode::TextItem: return "text_item";
        case EmbeddingMode::TextPlusProfile: return "text_plus_profile";
    }
    throw ConfigError("bad mode enum");
}

void RecommenderModel::set_augment_sides(bool users, bool items) {
    augment_users_ = users;
    augment_items_ = items;
}

bool backbone_uses_graph(Backbone b) {
    return b == Backbone::LightGCN || b == Backbone::SGL || b == Backbone::SimGCL;
}

void TrainConfig::validate() const {
    if (batch_size < 1 || learning_rate <= 0 || l2 < 0 || epochs < 0)
        throw ConfigError("invalid training config");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (edge_dropout < 0 || edge_dropout >= 1) throw ConfigError("edge dropout must be in [0,1)");
    if (noise_eps < 0) throw ConfigError("noise magnitude must be non-negative");
    if (ssl_weight < 0) throw ConfigError("ssl weight must be non-negative");
}

RecommenderModel::RecommenderModel(Backbone backbone, EmbeddingMode mode, int n_users, int n_items,
                                   int d, int d_t, int layers, std::uint64_t seed)
    : backbone_(backbone), mode_(mode), n_users_(n_users), n_items_(n_items), d_(d), d_t_(d_t),
      layers_(layers), init_seed_(seed) {
    if (n_users < 1 || n_items < 1 || d < 1 || d_t < 1 || layers < 0)
        throw ConfigError("invalid model dimensions");
    Rng rng(seed);
    Mat u(n_users, d), v(n_items, d);
    xavier_init(u, rng);
    xavier_init(v, rng);
    user_emb_ = Param(std::move(u));
    item_emb_ = Param(std::move(v));
    user_bias_ = Param(Mat::Zero(n_users, 1));
    item_bias_ = Param(Mat::Zero(n_items, 1));
    fusion_ = FusionNetworks(d, d_t, rng);
    ncf_mlp_ = Mlp({2 * d, d, {d}, Activation::Tanh}, rng);
    Mat head(1, 2 * d);
    xavier_init(head, rng);
    ncf_head_ = Param(std::move(head));
    ncf_bias_ = Param(Mat::Zero(1, 1));
}

RecommenderModel::BaseCache RecommenderModel::assemble_base(
    const TextFeatureMatrix* features, const ProfileEmbeddingInput* profiles) const {
    BaseCache cache;
    switch (mode_) {
        case EmbeddingMode::IdOnly:
            cache.base_users = user_emb_.w;
            cache.base_items = item_emb_.w;
            break;
        case EmbeddingMode::TextItem: {
            if (!features) throw ConfigError("text_item mode requires text features");
            cache.base_users = user_emb_.w;
            cache.base_items = fusion_.t_raw.forward(features->features);
            break;
        }
        case EmbeddingMode::TextPlusProfile: {
            if (!features) throw ConfigError("text_plus_profile mode requires text features");
            if (!profiles) throw MissingProfileError("text_plus_profile mode requires profile embeddings");
            if (profiles->user.rows() != n_users_ || profiles->item.rows() != n_items_)
                throw MissingProfileError("profile embedding rows do not cover all ids");
            cache.raw_items = fusion_.t_raw.forward(features->features, cache.tr_raw);
            if (augment_users_) {
                cache.proj_users = fusion_.t_pro.forward(profiles->user, cache.tr_pro_u);
                Mat cat(n_users_, 2 * d_);
                cat << user_emb_.w, cache.proj_users;
                cache.base_users = fusion_.psi.forward(cat, cache.tr_psi_u);
            } else {
                cache.base_users = user_emb_.w;
            }
            if (augment_items_) {
                cache.proj_items = fusion_.t_pro.forward(profiles->item, cache.tr_pro_i);
                Mat cat(n_items_, 2 * d_);
                cat << cache.raw_items, cache.proj_items;
                cache.base_items = fusion_.psi.forward(cat, cache.tr_psi_i);
            } else {
                cache.base_items = cache.raw_items;
            }
            break;
        }
    }
    return cache;
}

void RecommenderModel::backward_base(const BaseCache& cache, const TextFeatureMatrix* features,
                                     const ProfileEmbeddingInput* profiles, const Mat& g_users,
                                     const Mat& g_items) {
    (void)profiles;  // profile embeddings enter backward through the cached traces
    switch (mode_) {
        case EmbeddingMode::IdOnly:
            user_emb_.g += g_users;
            item_emb_.g += g_items;
            break;
        case EmbeddingMode::TextItem:
            user_emb_.g += g_users;
            fusion_.t_raw.backward(features->features, g_items);
            break;
        case EmbeddingMode::TextPlusProfile: {
            if (augment_users_) {
                Mat g_cat = fusion_.psi.backward(cache.tr_psi_u, g_users);
                user_emb_.g += g_cat.leftCols(d_);
                // profile embeddings are inputs, not parameters; t_pro still learns
                fusion_.t_pro.backward(cache.tr_pro_u, g_cat.rightCols(d_));
            } else {
                user_emb_.g += g_users;
            }
            if (augment_items_) {
                Mat g_cat = fusion_.psi.backward(cache.tr_psi_i, g_items);
                fusion_.t_pro.backward(cache.tr_pro_i, g_cat.rightCols(d_));
                fusion_.t_raw.backward(cache.tr_raw, g_cat.leftCols(d_));
            } else {
                fusion_.t_raw.backward(features->features, g_items);
            }
            break;
        }
    }
}

Encoded RecommenderModel::encode_all(const InteractionLog* train, const TextFeatureMatrix* features,
                                     const ProfileEmbeddingInput* profiles,
                                     const std::set<int>* cold_items) const {
    if (mode_ == EmbeddingMode::IdOnly && cold_items && !cold_items->empty()) {
        throw ColdItemError("id_only embeddings cannot represent " +
                            std::to_string(cold_items->size()) +
                            " cold items (no interaction history to train them)");
    }
    BaseCache cache = assemble_base(features, profiles);
    if (!backbone_uses_graph(backbone_)) return {cache.base_users, cache.base_items};

    if (!train) throw ConfigError("graph backbone requires the training log");
    auto adj = NormalizedAdjacency::build(*train);
    Mat e0(n_users_ + n_items_, d_);
    e0 << cache.base_users, cache.base_items;
    Mat out = propagate_lightgcn(adj, e0, layers_);
    return {out.topRows(n_users_), out.bottomRows(n_items_)};
}

double RecommenderModel::ncf_pair_forward(const Vec& e_u, const Vec& e_v) const {
    Vec gmf = e_u.cwiseProduct(e_v);
    Vec cat(2 * d_);
    cat << e_u, e_v;
    Vec tower = ncf_mlp_.forward(cat);
    Vec feats(2 * d_);
    feats << gmf, tower;
    return ncf_head_.w.row(0).dot(feats) + ncf_bias_.w(0, 0);
}

void RecommenderModel::ncf_pair_backward(const Vec& e_u, const Vec& e_v, double g_score, Vec& g_eu,
                                         Vec& g_ev) {
    Vec gmf = e_u.cwiseProduct(e_v);
    Vec cat(2 * d_);
    cat << e_u, e_v;
    Vec tower = ncf_mlp_.forward(cat);
    Vec feats(2 * d_);
    feats << gmf, tower;

    ncf_head_.g.row(0) += g_score * feats.transpose();
    ncf_bias_.g(0, 0) += g_score;

    Vec g_feats = g_score * ncf_head_.w.row(0).transpose();
    Vec g_gmf = g_feats.head(d_);
    Vec g_tower = g_feats.tail(d_);
    g_eu += g_gmf.cwiseProduct(e_v);
    g_ev += g_gmf.cwiseProduct(e_u);
    Mat g_cat = ncf_mlp_.backward(cat.transpose(), g_tower.transpose());
    g_eu += g_cat.row(0).head(d_).transpose();
    g_ev += g_cat.row(0).tail(d_).transpose();
}

double RecommenderModel::pair_score(const Encoded& enc, int u, int v) const {
    const Vec e_u = enc.users.row(u).transpose();
    const Vec e_v = enc.items.row(v).transpose();
    switch (backbone_) {
        case Backbone::BiasMF:
            return dot_score(e_u, e_v) + user_bias_.w(u, 0) + item_bias_.w(v, 0);
        case Backbone::NCF:
            return ncf_pair_forward(e_u, e_v);
        default:
            return dot_score(e_u, e_v);
    }
}

Vec RecommenderModel::scores_for_user(const Encoded& enc, int u, const std::vector<int>& item_ids) const {
    Vec out(Eigen::Index(item_ids.size()));
    for (std::size_t i = 0; i < item_ids.size(); ++i) out[Eigen::Index(i)] = pair_score(enc, u, item_ids[i]);
    return out;
}

std::vector<Param*> RecommenderModel::trainable_params() {
    std::vector<Param*> out{&user_emb_};
    if (mode_ == EmbeddingMode::IdOnly) out.push_back(&item_emb_);
    if (backbone_ == Backbone::BiasMF) {
        out.push_back(&user_bias_);
        out.push_back(&item_bias_);
    }
    if (backbone_ == Backbone::NCF) {
        for (auto* p : ncf_mlp_.params()) out.push_back(p);
        out.push_back(&ncf_head_);
        out.push_back(&ncf_bias_);
    }
    if (mode_ == EmbeddingMode::TextItem) {
        for (auto* p : fusion_.t_raw.params()) out.push_back(p);
    } else if (mode_ == EmbeddingMode::TextPlusProfile) {
        for (auto* p : fusion_.params()) out.push_back(p);
    }
    return out;
}

void RecommenderModel::zero_grad() {
    user_emb_.zero_grad();
    item_emb_.zero_grad();
    user_bias_.zero_grad();
    item_bias_.zero_grad();
    fusion_.zero_grad();
    ncf_mlp_.zero_grad();
    ncf_head_.zero_grad();
    ncf_bias_.zero_grad();
}

std::vector<LossTraceRow> RecommenderModel::train(const DatasetSplit& split, const TrainConfig& cfg,
                                                  const TextFeatureMatrix* features,
                                                  const ProfileEmbeddingInput* profiles) {
    cfg.validate();
    if (split.train.events.empty()) throw ConfigError("empty training split");

    Rng rng(cfg.seed);
    std::vector<std::unordered_set<int>> user_items(static_cast<std::size_t>(n_users_));
    for (const auto& e : split.train.events) user_items[std::size_t(e.user)].insert(e.item);

    const bool graph = backbone_uses_graph(backbone_);
    std::optional<NormalizedAdjacency> adj;
    if (graph) adj = NormalizedAdjacency::build(split.train);

    auto params = trainable_params();
    Adam opt(cfg.learning_rate);
    std::vector<LossTraceRow> trace;

    const int n_events = int(split.train.events.size());
    const int batches = (n_events + cfg.batch_size - 1) / cfg.batch_size;
    std::uniform_int_distribution<int> pick_event(0, n_events - 1);

    // negatives come from items observable in training; items that never appear
    // there (cold items) have no positive signal to balance a push-down
    std::vector<int> warm_items;
    {
        std::vector<char> seen(static_cast<std::size_t>(n_items_), 0);
        for (const auto& e : split.train.events) seen[std::size_t(e.item)] = 1;
        for (int v = 0; v < n_items_; ++v)
            if (seen[std::size_t(v)]) warm_items.push_back(v);
    }
    std::uniform_int_distribution<int> pick_warm(0, int(warm_items.size()) - 1);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double ep_loss = 0, ep_ssl = 0, ep_reg = 0;
        long ep_count = 0;
        for (int b = 0; b < batches; ++b) {
            zero_grad();

            BaseCache cache = assemble_base(features, profiles);
            Mat enc_users, enc_items, e0;
            if (graph) {
                e0.resize(n_users_ + n_items_, d_);
                e0 << cache.base_users, cache.base_items;
                Mat out = propagate_lightgcn(*adj, e0, layers_);
                enc_users = out.topRows(n_users_);
                enc_items = out.bottomRows(n_items_);
            } else {
                enc_users = cache.base_users;
                enc_items = cache.base_items;
            }
            Encoded enc{enc_users, enc_items};

            // sample the batch
            struct Triple { int u, pos, neg; };
            std::vector<Triple> batch;
            batch.reserve(std::size_t(cfg.batch_size));
            for (int i = 0; i < cfg.batch_size; ++i) {
                const auto& ev = split.train.events[std::size_t(pick_event(rng))];
                int neg = warm_items[std::size_t(pick_warm(rng))];
                int guard = 0;
                while (user_items[std::size_t(ev.user)].count(neg) && guard++ < 200)
                    neg = warm_items[std::size_t(pick_warm(rng))];
                batch.push_back({ev.user, ev.item, neg});
            }

            Mat g_users = Mat::Zero(n_users_, d_);
            Mat g_items = Mat::Zero(n_items_, d_);
            double batch_loss = 0, batch_reg = 0;

            for (const auto& t : batch) {
                const double pos = pair_score(enc, t.u, t.pos);
                const double neg = pair_score(enc, t.u, t.neg);
                batch_loss += bpr_loss(pos, neg);
                auto [g_pos, g_neg] = bpr_grad(pos, neg);

                const Vec e_u = enc.users.row(t.u).transpose();
                const Vec e_p = enc.items.row(t.pos).transpose();
                const Vec e_n = enc.items.row(t.neg).transpose();
                if (backbone_ == Backbone::NCF) {
                    Vec gu = Vec::Zero(d_), gp = Vec::Zero(d_), gn = Vec::Zero(d_);
                    ncf_pair_backward(e_u, e_p, g_pos, gu, gp);
                    ncf_pair_backward(e_u, e_n, g_neg, gu, gn);
                    g_users.row(t.u) += gu.transpose();
                    g_items.row(t.pos) += gp.transpose();
                    g_items.row(t.neg) += gn.transpose();
                } else {
                    g_users.row(t.u) += (g_pos * e_p + g_neg * e_n).transpose();
                    g_items.row(t.pos) += (g_pos * e_u).transpose();
                    g_items.row(t.neg) += (g_neg * e_u).transpose();
                    if (backbone_ == Backbone::BiasMF) {
                        user_bias_.g(t.u, 0) += g_pos + g_neg;
                        item_bias_.g(t.pos, 0) += g_pos;
                        item_bias_.g(t.neg, 0) += g_neg;
                    }
                }

                // L2 on the ego embeddings of the touched ids
                const Vec bu = cache.base_users.row(t.u).transpose();
                const Vec bp = cache.base_items.row(t.pos).transpose();
                const Vec bn = cache.base_items.row(t.neg).transpose();
                batch_reg += cfg.l2 * (bu.squaredNorm() + bp.squaredNorm() + bn.squaredNorm());
            }

            double ssl_loss_val = 0;
            Mat g_e0_extra;
            if (backbone_ == Backbone::SGL || backbone_ == Backbone::SimGCL) {
                // distinct users/items of the batch anchor the contrastive views
                std::vector<int> bu, bi;
                {
                    std::unordered_set<int> su, si;
                    for (const auto& t : batch) {
                        if (su.insert(t.u).second) bu.push_back(t.u);
                        if (si.insert(t.pos).second) bi.push_back(t.pos);
                    }
                }
                Mat z1, z2;
                std::optional<NormalizedAdjacency> adj1, adj2;
                if (backbone_ == Backbone::SGL) {
                    adj1 = NormalizedAdjacency::build_dropped(split.train, cfg.edge_dropout, rng);
                    adj2 = NormalizedAdjacency::build_dropped(split.train, cfg.edge_dropout, rng);
                    z1 = propagate_lightgcn(*adj1, e0, layers_);
                    z2 = propagate_lightgcn(*adj2, e0, layers_);
                } else {
                    z1 = propagate_noisy(*adj, e0, layers_, cfg.noise_eps, rng);
                    z2 = propagate_noisy(*adj, e0, layers_, cfg.noise_eps, rng);
                }
                auto gather = [&](const Mat& z, const std::vector<int>& ids, int offset) {
                    Mat out(Eigen::Index(ids.size()), d_);
                    for (std::size_t i = 0; i < ids.size(); ++i) out.row(Eigen::Index(i)) = z.row(offset + ids[i]);
                    return out;
                };
                Mat a_u = gather(z1, bu, 0), b_u = gather(z2, bu, 0);
                Mat a_i = gather(z1, bi, n_users_), b_i = gather(z2, bi, n_users_);
                ssl_loss_val = cfg.ssl_weight * (info_nce(a_u, b_u, cfg.temperature) +
                                                 info_nce(a_i, b_i, cfg.temperature));
                auto gu = info_nce_backward(a_u, b_u, cfg.temperature);
                auto gi = info_nce_backward(a_i, b_i, cfg.temperature);
                Mat g_z1 = Mat::Zero(e0.rows(), d_), g_z2 = Mat::Zero(e0.rows(), d_);
                auto scatter = [&](Mat& gz, const Mat& g, const std::vector<int>& ids, int offset) {
                    for (std::size_t i = 0; i < ids.size(); ++i)
                        gz.row(offset + ids[i]) += cfg.ssl_weight * g.row(Eigen::Index(i));
                };
                scatter(g_z1, gu.a, bu, 0);
                scatter(g_z2, gu.b, bu, 0);
                scatter(g_z1, gi.a, bi, n_users_);
                scatter(g_z2, gi.b, bi, n_users_);
                const auto& a1 = (backbone_ == Backbone::SGL) ? *adj1 : *adj;
                const auto& a2 = (backbone_ == Backbone::SGL) ? *adj2 : *adj;
                g_e0_extra = propagate_lightgcn_backward(a1, g_z1, layers_) +
                             propagate_lightgcn_backward(a2, g_z2, layers_);
            }

            // backprop to the pre-backbone embeddings
            Mat g_base_users, g_base_items;
            if (graph) {
                Mat g_enc(n_users_ + n_items_, d_);
                g_enc << g_users, g_items;
                Mat g_e0 = propagate_lightgcn_backward(*adj, g_enc, layers_);
                if (g_e0_extra.size() > 0) g_e0 += g_e0_extra;
                g_base_users = g_e0.topRows(n_users_);
                g_base_items = g_e0.bottomRows(n_items_);
            } else {
                g_base_users = g_users;
                g_base_items = g_items;
            }

            // L2 gradients on the ego embeddings of touched ids
            for (const auto& t : batch) {
                g_base_users.row(t.u) += 2.0 * cfg.l2 * cache.base_users.row(t.u);
                g_base_items.row(t.pos) += 2.0 * cfg.l2 * cache.base_items.row(t.pos);
                g_base_items.row(t.neg) += 2.0 * cfg.l2 * cache.base_items.row(t.neg);
            }

            backward_base(cache, features, profiles, g_base_users, g_base_items);

            const double mean_loss = batch_loss / double(batch.size());
            if (!std::isfinite(mean_loss) || !std::isfinite(ssl_loss_val)) {
                if (!cfg.checkpoint_dir.empty()) save(cfg.checkpoint_dir + "/diverged.ckpt");
                throw ConfigError("training diverged at epoch " + std::to_string(epoch));
            }

            // gradients average over the batch
            for (auto* p : params) p->g /= double(batch.size());
            opt.step(params);

            ep_loss += mean_loss;
            ep_ssl += ssl_loss_val;
            ep_reg += batch_reg / double(batch.size());
            ++ep_count;
        }
        LossTraceRow row{epoch, ep_loss / double(ep_count), ep_ssl / double(ep_count),
                         ep_reg / double(ep_count)};
        trace.push_back(row);
        if (!cfg.checkpoint_dir.empty())
            save(cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".ckpt");
    }
    return trace;
}

void RecommenderModel::save(const std::string& path) const {
    nlohmann::json header{{"kind", "recommender"},
                          {"backbone", backbone_to_string(backbone_)},
                          {"mode", mode_to_string(mode_)},
                          {"n_users", n_users_},
                          {"n_items", n_items_},
                          {"d", d_},
                          {"d_t", d_t_},
                          {"layers", layers_},
                          {"seed", init_seed_},
                          {"augment_users", augment_users_},
                          {"augment_items", augment_items_},
                          {"fusion_concat_order", "base_then_profile"}};
    auto out = ckpt::open_writer(path, header);
    ckpt::write_mat(out, user_emb_.w);
    ckpt::write_mat(out, item_emb_.w);
    ckpt::write_mat(out, user_bias_.w);
    ckpt::write_mat(out, item_bias_.w);
    write_mlp(out, fusion_.t_raw);
    write_mlp(out, fusion_.t_pro);
    write_mlp(out, fusion_.psi);
    write_mlp(out, ncf_mlp_);
    ckpt::write_mat(out, ncf_head_.w);
    ckpt::write_mat(out, ncf_bias_.w);
}

RecommenderModel RecommenderModel::load(const std::string& path) {
    nlohmann::json header;
    auto in = ckpt::open_reader(path, header);
    if (header.value("kind", "") != "recommender") throw ParseError("not a recommender checkpoint");
    RecommenderModel m(backbone_from_string(header.at("backbone")), mode_from_string(header.at("mode")),
                       header.at("n_users"), header.at("n_items"), header.at("d"), header.at("d_t"),
                       header.at("layers"), header.at("seed").get<std::uint64_t>());
    m.augment_users_ = header.value("augment_users", true);
    m.augment_items_ = header.value("augment_items", true);
    m.user_emb_ = Param(ckpt::read_mat(in));
    m.item_emb_ = Param(ckpt::read_mat(in));
    m.user_bias_ = Param(ckpt::read_mat(in));
    m.item_bias_ = Param(ckpt::read_mat(in));
    m.fusion_.t_raw = read_mlp(in);
    m.fusion_.t_pro = read_mlp(in);
    m.fusion_.psi = read_mlp(in);
    m.fusion_.d = m.d_;
    m.fusion_.d_t = m.d_t_;
    m.ncf_mlp_ = read_mlp(in);
    m.ncf_head_ = Param(ckpt::read_mat(in));
    m.ncf_bias_ = Param(ckpt::read_mat(in));
    return m;
}

void write_loss_trace_csv(const std::vector<LossTraceRow>& trace, const std::string& path) {
    std::ofstream out(path);
    out << "epoch,loss,ssl_loss,reg\n";
    for (const auto& r : trace) out << r.epoch << ',' << r.loss << ',' << r.ssl << ',' << r.reg << '\n';
}

}  // namespace reclm

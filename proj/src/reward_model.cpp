#include "reclm/reward_model.hpp"

#include <fstream>
#include <numeric>

#include "reclm/checkpoint.hpp"
#include "reclm/losses.hpp"

namespace reclm {

RewardModel::RewardModel(const PolicyModel& init_from, RewardPooling pooling)
    : body_(init_from), pooling_(pooling) {
    head_w_ = Param(Mat::Zero(init_from.config().hidden_dim, 1));
    head_b_ = Param(Mat::Zero(1, 1));
}

double RewardModel::score_tokens(const std::vector<int>& tokens) const {
    if (int(tokens.size()) + 1 > body_.config().context_len)
        throw ConfigError("reward input exceeds context length");
    std::vector<int> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), tokens.begin(), tokens.end());
    Mat h = body_.run_hidden(inputs);
    Eigen::RowVectorXd pooled = (pooling_ == RewardPooling::FinalToken)
                                    ? Eigen::RowVectorXd(h.row(h.rows() - 1))
                                    : Eigen::RowVectorXd(h.colwise().mean());
    return pooled.dot(head_w_.w.col(0)) + head_b_.w(0, 0);
}

void RewardModel::score_backward(const std::vector<int>& tokens, double g_score) {
    std::vector<int> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), tokens.begin(), tokens.end());
    Mat h = body_.run_hidden(inputs);
    Eigen::RowVectorXd pooled = (pooling_ == RewardPooling::FinalToken)
                                    ? Eigen::RowVectorXd(h.row(h.rows() - 1))
                                    : Eigen::RowVectorXd(h.colwise().mean());
    head_w_.g.col(0) += g_score * pooled.transpose();
    head_b_.g(0, 0) += g_score;

    Mat g_hidden = Mat::Zero(h.rows(), h.cols());
    Eigen::RowVectorXd g_pooled = g_score * head_w_.w.col(0).transpose();
    if (pooling_ == RewardPooling::FinalToken) {
        g_hidden.row(g_hidden.rows() - 1) = g_pooled;
    } else {
        for (Eigen::Index t = 0; t < g_hidden.rows(); ++t)
            g_hidden.row(t) = g_pooled / double(g_hidden.rows());
    }
    body_.backprop_hidden(inputs, h, g_hidden);
}

double RewardModel::score_ids(const std::vector<int>& q_ids, const std::vector<int>& r_ids) const {
    std::vector<int> tokens = q_ids;
    tokens.insert(tokens.end(), r_ids.begin(), r_ids.end());
    return score_tokens(tokens);
}

double RewardModel::score(const std::string& q, const std::string& r) const {
    return score_ids(vocab().encode(q), vocab().encode(r));
}

double RewardModel::pairwise_loss(double s_plus, double s_minus) {
    if (!std::isfinite(s_plus) || !std::isfinite(s_minus))
        throw DimensionError("pairwise loss on non-finite scores");
    const double m = s_plus - s_minus;  // -ln sigmoid(m) = softplus(-m)
    if (-m > 30) return -m;
    return std::log1p(std::exp(-m));
}

std::vector<Param*> RewardModel::params() {
    auto out = body_.params();
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

double RewardModel::holdout_accuracy(const std::vector<PreferencePair>& pairs) const {
    if (pairs.empty()) return 0.0;
    int correct = 0;
    for (const auto& p : pairs)
        if (score(p.q, p.r_plus) > score(p.q, p.r_minus)) ++correct;
    return double(correct) / double(pairs.size());
}

std::vector<RewardModel::AccuracyRow> RewardModel::train(const std::vector<PreferencePair>& pairs,
                                                         const TrainConfig& cfg) {
    if (pairs.size() < 2) throw ConfigError("need at least 2 preference pairs");
    for (const auto& p : pairs)
        if (p.r_plus == p.r_minus)
            throw ConfigError("degenerate pair (identical responses) for user " +
                              std::to_string(p.user));

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    const std::size_t n_holdout =
        std::max<std::size_t>(1, std::size_t(double(pairs.size()) * cfg.holdout_fraction));
    std::vector<PreferencePair> holdout, training;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_holdout ? holdout : training).push_back(pairs[order[i]]);
    if (training.empty()) throw ConfigError("holdout fraction leaves no training pairs");

    auto ps = params();
    Adam opt(cfg.learning_rate);
    std::vector<AccuracyRow> trace;
    trace.push_back({-1, holdout_accuracy(holdout), 0.0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = training.size(); i > 1; --i)
            std::swap(training[i - 1],
                      training[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
        double ep_loss = 0;
        int batches = 0;
        for (std::size_t start = 0; start < training.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(training.size(), start + std::size_t(cfg.batch_size));
            for (auto* p : ps) p->zero_grad();
            double batch_loss = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& pair = training[i];
                auto q = vocab().encode(pair.q);
                auto rp = vocab().encode(pair.r_plus);
                auto rm = vocab().encode(pair.r_minus);
                const double sp = score_ids(q, rp);
                const double sm = score_ids(q, rm);
                batch_loss += pairwise_loss(sp, sm);
                const double g = -(1.0 - sigmoid(sp - sm)) / double(end - start);
                std::vector<int> tp = q, tm = q;
                tp.insert(tp.end(), rp.begin(), rp.end());
                tm.insert(tm.end(), rm.begin(), rm.end());
                score_backward(tp, g);
                score_backward(tm, -g);
            }
            if (!std::isfinite(batch_loss)) throw ConfigError("reward training diverged");
            opt.step(ps);
            ep_loss += batch_loss / double(end - start);
            ++batches;
        }
        trace.push_back({epoch, holdout_accuracy(holdout), batches ? ep_loss / batches : 0.0});
    }
    return trace;
}

void RewardModel::save(const std::string& path) const {
    const std::string tmp = path + ".body";
    body_.save(tmp);
    nlohmann::json header{{"kind", "reward"},
                          {"pooling", pooling_ == RewardPooling::FinalToken ? "final" : "mean"},
                          {"body", tmp}};
    auto out = ckpt::open_writer(path, header);
    ckpt::write_mat(out, head_w_.w);
    ckpt::write_mat(out, head_b_.w);
}

RewardModel RewardModel::load(const std::string& path) {
    nlohmann::json header;
    auto in = ckpt::open_reader(path, header);
    if (header.value("kind", "") != "reward") throw ParseError("not a reward checkpoint");
    RewardModel m(PolicyModel::load(header.at("body")),
                  header.at("pooling") == "final" ? RewardPooling::FinalToken : RewardPooling::Mean);
    m.head_w_ = Param(ckpt::read_mat(in));
    m.head_b_ = Param(ckpt::read_mat(in));
    return m;
}

void write_accuracy_trace_csv(const std::vector<RewardModel::AccuracyRow>& trace,
                              const std::string& path) {
    std::ofstream out(path);
    out << "epoch,holdout_accuracy,train_loss\n";
    for (const auto& r : trace) out << r.epoch << ',' << r.holdout_accuracy << ',' << r.train_loss << '\n';
}

}  // namespace reclm

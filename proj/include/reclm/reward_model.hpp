#pragma once

#include "reclm/policy_lm.hpp"

namespace reclm {

enum class RewardPooling { FinalToken, Mean };

// Scalar scorer over (Q, R): the policy's recurrent body plus a linear head.
class RewardModel {
  public:
    RewardModel() = default;
    // Body weights copy from the given policy; the head starts at zero.
    RewardModel(const PolicyModel& init_from, RewardPooling pooling = RewardPooling::FinalToken);

    double score(const std::string& q, const std::string& r) const;
    double score_ids(const std::vector<int>& q_ids, const std::vector<int>& r_ids) const;

    static double pairwise_loss(double s_plus, double s_minus);

    struct TrainConfig {
        int epochs = 10;
        int batch_size = 8;
        double learning_rate = 1e-2;
        double holdout_fraction = 0.2;
        std::uint64_t seed = 0;
    };
    struct AccuracyRow {
        int epoch = 0;  // -1 marks the pre-training evaluation
        double holdout_accuracy = 0.0;
        double train_loss = 0.0;
    };
    std::vector<AccuracyRow> train(const std::vector<PreferencePair>& pairs, const TrainConfig& cfg);

    double holdout_accuracy(const std::vector<PreferencePair>& pairs) const;

    void save(const std::string& path) const;
    static RewardModel load(const std::string& path);

    const Vocabulary& vocab() const { return body_.vocab(); }
    PolicyModel& body() { return body_; }
    Param& head_weight() { return head_w_; }
    Param& head_bias() { return head_b_; }
    std::vector<Param*> params();

  private:
    PolicyModel body_;  // reuses the recurrent forward; its output layer is unused here
    Param head_w_;      // dh x 1
    Param head_b_;      // 1 x 1
    RewardPooling pooling_ = RewardPooling::FinalToken;

    double score_tokens(const std::vector<int>& tokens) const;
    void score_backward(const std::vector<int>& tokens, double g_score);
};

void write_accuracy_trace_csv(const std::vector<RewardModel::AccuracyRow>& trace,
                              const std::string& path);

}  // namespace reclm

#pragma once

#include "reclm/reward_model.hpp"

namespace reclm {

struct Rollout {
    std::vector<int> q_tokens;
    std::vector<int> r_tokens;
    Vec policy_logprobs;  // at sampling time, aligned with r_tokens
    Vec ref_logprobs;
    double raw_reward = 0.0;        // r-hat from the reward model
    double penalized_reward = 0.0;  // raw minus beta * KL estimate
    double advantage = 0.0;
};

struct RolloutBatch {
    std::vector<Rollout> rollouts;
    double baseline = 0.0;  // running-mean value used for the advantages
};

struct PpoConfig {
    double beta = 0.02;   // KL coefficient
    double clip = 0.2;    // epsilon
    int ppo_epochs = 4;
    int rollouts_per_iter = 16;
    int iterations = 20;
    int max_tokens = 24;
    double temperature = 1.0;
    double learning_rate = 1e-2;
    bool running_mean_baseline = true;
    std::uint64_t seed = 0;

    void validate() const;
};

// R = r_hat - beta * sum_t (policy_lp[t] - ref_lp[t]); the per-sample KL estimate.
double kl_penalized_reward(double raw_reward, const Vec& policy_logprobs, const Vec& ref_logprobs,
                           double beta);

class PpoRefiner {
  public:
    PpoRefiner(PolicyModel& policy, const PolicyModel& reference, const RewardModel& reward,
               const PpoConfig& cfg);

    RolloutBatch collect_rollouts(const std::vector<std::string>& queries, int n, std::uint64_t seed);

    struct UpdateDiagnostics {
        double mean_ratio = 0.0;
        double clip_fraction = 0.0;
        double approx_kl = 0.0;  // mean (old_lp - new_lp)
        double surrogate = 0.0;
    };
    UpdateDiagnostics ppo_update(const RolloutBatch& batch);

    struct IterationRow {
        int iter = 0;
        double mean_reward = 0.0;   // raw reward model score
        double mean_kl = 0.0;       // per-sequence KL estimate to the reference
        double clip_fraction = 0.0;
    };
    std::vector<IterationRow> refine(const std::vector<std::string>& queries);

    double baseline() const { return baseline_; }

  private:
    PolicyModel& policy_;
    const PolicyModel& reference_;
    const RewardModel& reward_;
    PpoConfig cfg_;
    Adam opt_;
    double baseline_ = 0.0;
    long baseline_count_ = 0;
};

void write_ppo_curve_csv(const std::vector<PpoRefiner::IterationRow>& curve, const std::string& path);

}  // namespace reclm

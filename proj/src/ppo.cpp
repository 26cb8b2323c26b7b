#include "reclm/ppo.hpp"

#include <fstream>
#include <iostream>

namespace reclm {

void PpoConfig::validate() const {
    if (beta < 0) throw ConfigError("beta must be non-negative");
    if (clip <= 0 || clip >= 1) throw ConfigError("clip epsilon must be in (0, 1)");
    if (ppo_epochs < 1 || rollouts_per_iter < 1 || iterations < 0 || max_tokens < 1)
        throw ConfigError("invalid ppo config");
    if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
}

double kl_penalized_reward(double raw_reward, const Vec& policy_logprobs, const Vec& ref_logprobs,
                           double beta) {
    if (policy_logprobs.size() != ref_logprobs.size())
        throw DimensionError("kl penalty: misaligned log-prob sequences");
    return raw_reward - beta * (policy_logprobs - ref_logprobs).sum();
}

PpoRefiner::PpoRefiner(PolicyModel& policy, const PolicyModel& reference, const RewardModel& reward,
                       const PpoConfig& cfg)
    : policy_(policy), reference_(reference), reward_(reward), cfg_(cfg), opt_(cfg.learning_rate) {
    cfg_.validate();
}

RolloutBatch PpoRefiner::collect_rollouts(const std::vector<std::string>& queries, int n,
                                          std::uint64_t seed) {
    if (n < 1) throw ConfigError("need at least one rollout");
    if (queries.empty()) throw ConfigError("no queries to roll out");
    RolloutBatch batch;
    Rng pick(seed);
    for (int i = 0; i < n; ++i) {
        const std::string& q = queries[std::size_t(pick() % queries.size())];
        Rollout r;
        r.q_tokens = policy_.vocab().encode(q);
        try {
            auto gen = policy_.generate_ids(r.q_tokens, cfg_.max_tokens, cfg_.temperature,
                                            seed ^ (0x9e37ull * std::uint64_t(i + 1)));
            if (gen.ids.empty()) continue;
            r.r_tokens = gen.ids;
            r.policy_logprobs = gen.logprobs;
        } catch (const std::exception& ex) {
            std::cerr << "[reclm] rollout " << i << " failed: " << ex.what() << "\n";
            continue;
        }
        std::vector<int> full = r.q_tokens;
        full.insert(full.end(), r.r_tokens.begin(), r.r_tokens.end());
        Vec ref_all = reference_.forward_logprobs(full);
        r.ref_logprobs = ref_all.tail(Eigen::Index(r.r_tokens.size()));
        r.raw_reward = reward_.score_ids(r.q_tokens, r.r_tokens);
        r.penalized_reward = kl_penalized_reward(r.raw_reward, r.policy_logprobs, r.ref_logprobs,
                                                 cfg_.beta);
        batch.rollouts.push_back(std::move(r));
    }
    // running-mean baseline over all penalized rewards seen so far
    for (const auto& r : batch.rollouts) {
        if (cfg_.running_mean_baseline) {
            ++baseline_count_;
            baseline_ += (r.penalized_reward - baseline_) / double(baseline_count_);
        }
    }
    batch.baseline = cfg_.running_mean_baseline ? baseline_ : 0.0;
    for (auto& r : batch.rollouts) r.advantage = r.penalized_reward - batch.baseline;
    return batch;
}

PpoRefiner::UpdateDiagnostics PpoRefiner::ppo_update(const RolloutBatch& batch) {
    if (batch.rollouts.empty()) throw ConfigError("empty rollout batch");
    UpdateDiagnostics diag;
    auto ps = policy_.params();
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
        policy_.zero_grad();
        double sum_ratio = 0, sum_clip = 0, sum_kl = 0, sum_surrogate = 0;
        long n_tokens = 0;
        for (const auto& r : batch.rollouts) {
            std::vector<int> full = r.q_tokens;
            full.insert(full.end(), r.r_tokens.begin(), r.r_tokens.end());
            Vec new_all = policy_.forward_logprobs(full);
            Vec new_lp = new_all.tail(Eigen::Index(r.r_tokens.size()));

            // sequence-level reward broadcast to every response token
            Vec weights = Vec::Zero(Eigen::Index(full.size()));
            const Eigen::Index off = Eigen::Index(r.q_tokens.size());
            for (Eigen::Index t = 0; t < new_lp.size(); ++t) {
                const double ratio = std::exp(new_lp[t] - r.policy_logprobs[t]);
                const double a = r.advantage;
                const bool clipped = (a > 0 && ratio > 1 + cfg_.clip) ||
                                     (a < 0 && ratio < 1 - cfg_.clip);
                const double surrogate = std::min(ratio * a, std::clamp(ratio, 1 - cfg_.clip,
                                                                        1 + cfg_.clip) * a);
                sum_surrogate += surrogate;
                sum_ratio += ratio;
                sum_kl += r.policy_logprobs[t] - new_lp[t];
                sum_clip += clipped ? 1.0 : 0.0;
                ++n_tokens;
                // maximizing the clipped surrogate: zero gradient where clipping binds
                if (!clipped) weights[off + t] = ratio * a;
            }
            weights /= double(batch.rollouts.size());
            policy_.add_weighted_logprob_grad(full, weights);
        }
        for (auto* p : ps)
            if (!p->g.allFinite()) throw ConfigError("non-finite ppo gradients");
        opt_.step(ps);
        if (epoch == 0) {
            diag.mean_ratio = sum_ratio / double(n_tokens);
            diag.clip_fraction = sum_clip / double(n_tokens);
            diag.approx_kl = sum_kl / double(n_tokens);
            diag.surrogate = sum_surrogate / double(n_tokens);
        }
    }
    return diag;
}

std::vector<PpoRefiner::IterationRow> PpoRefiner::refine(const std::vector<std::string>& queries) {
    std::vector<IterationRow> curve;
    for (int it = 0; it < cfg_.iterations; ++it) {
        RolloutBatch batch = collect_rollouts(queries, cfg_.rollouts_per_iter,
                                              cfg_.seed + std::uint64_t(it) * 7919u);
        if (batch.rollouts.empty()) continue;
        auto diag = ppo_update(batch);
        IterationRow row;
        row.iter = it;
        double sum_r = 0, sum_kl = 0;
        for (const auto& r : batch.rollouts) {
            sum_r += r.raw_reward;
            sum_kl += (r.policy_logprobs - r.ref_logprobs).sum();
        }
        row.mean_reward = sum_r / double(batch.rollouts.size());
        row.mean_kl = sum_kl / double(batch.rollouts.size());
        row.clip_fraction = diag.clip_fraction;
        curve.push_back(row);
    }
    return curve;
}

void write_ppo_curve_csv(const std::vector<PpoRefiner::IterationRow>& curve, const std::string& path) {
    std::ofstream out(path);
    out << "iter,mean_reward,mean_kl,clip_frac\n";
    for (const auto& r : curve)
        out << r.iter << ',' << r.mean_reward << ',' << r.mean_kl << ',' << r.clip_fraction << '\n';
}

}  // namespace reclm

#pragma once

#include "reclm/backbones.hpp"

namespace reclm {

enum class EvalSetting { FullShot, ZeroShot };
std::string setting_to_string(EvalSetting s);

struct MetricReport {
    std::vector<int> ks;                       // e.g. {20, 40}
    std::vector<int> user_ids;                 // users actually evaluated
    std::vector<std::vector<double>> recall;   // per user, aligned with ks
    std::vector<std::vector<double>> ndcg;     // per user, aligned with ks
    std::vector<double> mean_recall;
    std::vector<double> mean_ndcg;
    int users_evaluated = 0;
    int users_skipped = 0;  // no test positives in this setting
    EvalSetting setting = EvalSetting::FullShot;
    std::string descriptor;
    bool evaluation_impossible = false;  // e.g. id-only model asked to rank cold items
    std::string note;

    double mean_recall_at(int k) const;
    double mean_ndcg_at(int k) const;
};

// Binary-gain ranking metrics over a single ranked candidate list.
double recall_at_k(const std::vector<int>& ranking, const std::set<int>& positives, int k);
double ndcg_at_k(const std::vector<int>& ranking, const std::set<int>& positives, int k);

struct EvalInputs {
    const TextFeatureMatrix* features = nullptr;
    const ProfileEmbeddingInput* profiles = nullptr;
};

// All-rank protocol: every test positive competes against all candidate items the
// user has not interacted with in training. Zero-shot restricts candidates (and
// positives) to cold items. Ties in score break by ascending item id.
MetricReport all_rank_evaluate(const RecommenderModel& model, const DatasetSplit& split,
                               EvalSetting setting, const std::vector<int>& ks,
                               const EvalInputs& inputs, const std::string& descriptor = "");

// Baseline for models that cannot score the candidate universe: candidates are
// ranked by a seeded random permutation per user.
MetricReport random_rank_evaluate(const DatasetSplit& split, EvalSetting setting,
                                  const std::vector<int>& ks, std::uint64_t seed,
                                  const std::string& descriptor = "random-fallback");

struct VariantComparison {
    MetricReport base;
    MetricReport augmented;
    std::vector<double> recall_improvement_pct;  // aligned with ks
    std::vector<double> ndcg_improvement_pct;
    std::vector<double> recall_p_value;
    std::vector<double> ndcg_p_value;
};

// Paired two-sided t-test over per-user metric differences.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

VariantComparison compare(const MetricReport& base, const MetricReport& augmented);

struct AblationVariant {
    std::string name;
    const RecommenderModel* model = nullptr;
    EvalInputs inputs;
    bool random_fallback_on_cold = false;  // id-only models in the zero-shot setting
};

struct AblationTable {
    std::vector<MetricReport> rows;  // |variants| x |settings|
};

AblationTable run_ablation(const std::vector<AblationVariant>& variants, const DatasetSplit& split,
                           const std::vector<int>& ks, std::uint64_t seed);

struct TimingReport {
    std::vector<double> base_epoch_seconds;
    std::vector<double> augmented_epoch_seconds;
    double base_median = 0.0;
    double augmented_median = 0.0;
    double overhead_ratio = 0.0;
    bool too_few_epochs_warning = false;
};

// Times single-epoch training runs of both models under matched configs.
TimingReport timing_report(RecommenderModel& base, const EvalInputs& base_inputs,
                           RecommenderModel& augmented, const EvalInputs& aug_inputs,
                           const DatasetSplit& split, TrainConfig cfg, int epochs);

double median(std::vector<double> xs);

void write_report_csv(const MetricReport& report, const std::string& path);
void write_reports_csv(const std::vector<MetricReport>& reports, const std::string& path);
std::string format_report_table(const std::vector<MetricReport>& reports);
std::string format_comparison(const VariantComparison& cmp);

}  // namespace reclm

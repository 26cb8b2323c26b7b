#include "reclm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace reclm {

std::string setting_to_string(EvalSetting s) {
    return s == EvalSetting::FullShot ? "full_shot" : "zero_shot";
}

double MetricReport::mean_recall_at(int k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return mean_recall[i];
    throw ConfigError("report has no K=" + std::to_string(k));
}

double MetricReport::mean_ndcg_at(int k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return mean_ndcg[i];
    throw ConfigError("report has no K=" + std::to_string(k));
}

double recall_at_k(const std::vector<int>& ranking, const std::set<int>& positives, int k) {
    if (positives.empty()) throw ConfigError("recall with no positives");
    int hits = 0;
    const int top = std::min<int>(k, int(ranking.size()));
    for (int i = 0; i < top; ++i)
        if (positives.count(ranking[std::size_t(i)])) ++hits;
    return double(hits) / double(positives.size());
}

double ndcg_at_k(const std::vector<int>& ranking, const std::set<int>& positives, int k) {
    if (positives.empty()) throw ConfigError("ndcg with no positives");
    double dcg = 0;
    const int top = std::min<int>(k, int(ranking.size()));
    for (int i = 0; i < top; ++i)
        if (positives.count(ranking[std::size_t(i)])) dcg += 1.0 / std::log2(double(i) + 2.0);
    double idcg = 0;
    const int ideal = std::min<int>(k, int(positives.size()));
    for (int i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(double(i) + 2.0);
    return dcg / idcg;
}

namespace {

struct UserEvalSets {
    std::vector<std::set<int>> train_items;  // per user
    std::vector<std::set<int>> positives;    // per user, restricted to the setting
    std::vector<int> candidate_universe;     // setting-dependent, pre-exclusion
};

UserEvalSets build_eval_sets(const DatasetSplit& split, EvalSetting setting) {
    UserEvalSets s;
    const int n_users = std::max(split.train.n_users, split.test.n_users);
    const int n_items = std::max(split.train.n_items, split.test.n_items);
    s.train_items.resize(std::size_t(n_users));
    s.positives.resize(std::size_t(n_users));
    for (const auto& e : split.train.events) s.train_items[std::size_t(e.user)].insert(e.item);
    for (const auto& e : split.test.events) {
        if (setting == EvalSetting::ZeroShot && !split.cold_items.count(e.item)) continue;
        s.positives[std::size_t(e.user)].insert(e.item);
    }
    if (setting == EvalSetting::ZeroShot) {
        s.candidate_universe.assign(split.cold_items.begin(), split.cold_items.end());
    } else {
        s.candidate_universe.resize(std::size_t(n_items));
        std::iota(s.candidate_universe.begin(), s.candidate_universe.end(), 0);
    }
    return s;
}

void finalize(MetricReport& report) {
    const std::size_t nk = report.ks.size();
    report.mean_recall.assign(nk, 0.0);
    report.mean_ndcg.assign(nk, 0.0);
    report.users_evaluated = int(report.user_ids.size());
    if (report.users_evaluated == 0) return;
    for (std::size_t u = 0; u < report.recall.size(); ++u)
        for (std::size_t i = 0; i < nk; ++i) {
            report.mean_recall[i] += report.recall[u][i];
            report.mean_ndcg[i] += report.ndcg[u][i];
        }
    for (std::size_t i = 0; i < nk; ++i) {
        report.mean_recall[i] /= double(report.users_evaluated);
        report.mean_ndcg[i] /= double(report.users_evaluated);
    }
}

template <typename ScoreFn>
MetricReport rank_and_score(const DatasetSplit& split, EvalSetting setting,
                            const std::vector<int>& ks, const std::string& descriptor,
                            ScoreFn&& score_candidates) {
    MetricReport report;
    report.ks = ks;
    report.setting = setting;
    report.descriptor = descriptor;
    const UserEvalSets sets = build_eval_sets(split, setting);
    for (int u = 0; u < int(sets.positives.size()); ++u) {
        const auto& pos = sets.positives[std::size_t(u)];
        if (pos.empty()) {
            ++report.users_skipped;
            continue;
        }
        std::vector<int> candidates;
        candidates.reserve(sets.candidate_universe.size());
        for (int v : sets.candidate_universe)
            if (!sets.train_items[std::size_t(u)].count(v)) candidates.push_back(v);
        Vec scores = score_candidates(u, candidates);
        std::vector<int> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return candidates[std::size_t(a)] < candidates[std::size_t(b)];
        });
        std::vector<int> ranking(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i)
            ranking[i] = candidates[std::size_t(order[i])];
        std::vector<double> r, n;
        for (int k : ks) {
            r.push_back(recall_at_k(ranking, pos, k));
            n.push_back(ndcg_at_k(ranking, pos, k));
        }
        report.user_ids.push_back(u);
        report.recall.push_back(std::move(r));
        report.ndcg.push_back(std::move(n));
    }
    finalize(report);
    return report;
}

}  // namespace

MetricReport all_rank_evaluate(const RecommenderModel& model, const DatasetSplit& split,
                               EvalSetting setting, const std::vector<int>& ks,
                               const EvalInputs& inputs, const std::string& descriptor) {
    if (ks.empty()) throw ConfigError("no K values requested");
    const std::string desc = descriptor.empty()
                                 ? backbone_to_string(model.backbone()) + "/" +
                                       mode_to_string(model.mode())
                                 : descriptor;
    Encoded enc;
    try {
        const std::set<int>* cold = setting == EvalSetting::ZeroShot ? &split.cold_items : nullptr;
        enc = model.encode_all(&split.train, inputs.features, inputs.profiles, cold);
    } catch (const ColdItemError& ex) {
        MetricReport report;
        report.ks = ks;
        report.setting = setting;
        report.descriptor = desc;
        report.evaluation_impossible = true;
        report.note = ex.what();
        report.mean_recall.assign(ks.size(), 0.0);
        report.mean_ndcg.assign(ks.size(), 0.0);
        return report;
    }
    return rank_and_score(split, setting, ks, desc, [&](int u, const std::vector<int>& candidates) {
        return model.scores_for_user(enc, u, candidates);
    });
}

MetricReport random_rank_evaluate(const DatasetSplit& split, EvalSetting setting,
                                  const std::vector<int>& ks, std::uint64_t seed,
                                  const std::string& descriptor) {
    if (ks.empty()) throw ConfigError("no K values requested");
    return rank_and_score(split, setting, ks, descriptor, [&](int u, const std::vector<int>& candidates) {
        Rng rng(sub_rng(seed, std::uint64_t(u))());
        Vec scores(Eigen::Index(candidates.size()));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        for (Eigen::Index i = 0; i < scores.size(); ++i) scores[i] = uni(rng);
        return scores;
    });
}

namespace {

// Regularized incomplete beta function via its continued fraction expansion.
double betacf(double a, double b, double x) {
    const double eps = 1e-14, fpmin = 1e-300;
    const int max_iter = 500;
    double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < eps) break;
    }
    return h;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1) / (a + b + 2)) return front * betacf(a, b, x) / a;
    return 1 - front * betacf(b, a, 1 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
    const double x = dof / (dof + t * t);
    return incomplete_beta(dof / 2.0, 0.5, x);
}

}  // namespace

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("paired t-test on unequal samples");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= double(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= double(n - 1);
    if (var == 0) return mean == 0 ? 1.0 : 0.0;
    const double t = mean / std::sqrt(var / double(n));
    return student_t_two_sided_p(t, double(n - 1));
}

VariantComparison compare(const MetricReport& base, const MetricReport& augmented) {
    if (base.setting != augmented.setting)
        throw ConfigError("comparing reports from different settings");
    if (base.ks != augmented.ks) throw ConfigError("comparing reports with different K lists");
    if (base.user_ids != augmented.user_ids)
        throw ConfigError("comparing reports over different user populations");
    VariantComparison cmp;
    cmp.base = base;
    cmp.augmented = augmented;
    for (std::size_t i = 0; i < base.ks.size(); ++i) {
        const double rb = base.mean_recall[i], ra = augmented.mean_recall[i];
        const double nb = base.mean_ndcg[i], na = augmented.mean_ndcg[i];
        cmp.recall_improvement_pct.push_back(rb == 0 ? 0.0 : (ra - rb) / rb * 100.0);
        cmp.ndcg_improvement_pct.push_back(nb == 0 ? 0.0 : (na - nb) / nb * 100.0);
        std::vector<double> base_r, aug_r, base_n, aug_n;
        for (std::size_t u = 0; u < base.recall.size(); ++u) {
            base_r.push_back(base.recall[u][i]);
            aug_r.push_back(augmented.recall[u][i]);
            base_n.push_back(base.ndcg[u][i]);
            aug_n.push_back(augmented.ndcg[u][i]);
        }
        cmp.recall_p_value.push_back(paired_t_test(aug_r, base_r));
        cmp.ndcg_p_value.push_back(paired_t_test(aug_n, base_n));
    }
    return cmp;
}

AblationTable run_ablation(const std::vector<AblationVariant>& variants, const DatasetSplit& split,
                           const std::vector<int>& ks, std::uint64_t seed) {
    AblationTable table;
    for (EvalSetting setting : {EvalSetting::FullShot, EvalSetting::ZeroShot}) {
        for (const auto& v : variants) {
            if (!v.model) throw ConfigError("ablation variant '" + v.name + "' has no model");
            MetricReport r;
            if (setting == EvalSetting::ZeroShot && v.random_fallback_on_cold &&
                v.model->mode() == EmbeddingMode::IdOnly) {
                r = random_rank_evaluate(split, setting, ks, seed, v.name);
            } else {
                r = all_rank_evaluate(*v.model, split, setting, ks, v.inputs, v.name);
            }
            table.rows.push_back(std::move(r));
        }
    }
    return table;
}

double median(std::vector<double> xs) {
    if (xs.empty()) throw ConfigError("median of empty sample");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

TimingReport timing_report(RecommenderModel& base, const EvalInputs& base_inputs,
                           RecommenderModel& augmented, const EvalInputs& aug_inputs,
                           const DatasetSplit& split, TrainConfig cfg, int epochs) {
    if (epochs < 1) throw ConfigError("timing needs at least one epoch");
    TimingReport report;
    if (epochs < 5) {
        report.too_few_epochs_warning = true;
        std::cerr << "[reclm] timing over " << epochs << " epochs; medians are noisy below 5\n";
    }
    cfg.epochs = 1;
    cfg.checkpoint_dir.clear();
    using clock = std::chrono::steady_clock;
    auto time_one = [&](RecommenderModel& m, const EvalInputs& in) {
        const auto t0 = clock::now();
        m.train(split, cfg, in.features, in.profiles);
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    for (int e = 0; e < epochs; ++e) report.base_epoch_seconds.push_back(time_one(base, base_inputs));
    for (int e = 0; e < epochs; ++e)
        report.augmented_epoch_seconds.push_back(time_one(augmented, aug_inputs));
    report.base_median = median(report.base_epoch_seconds);
    report.augmented_median = median(report.augmented_epoch_seconds);
    report.overhead_ratio = report.augmented_median / report.base_median;
    return report;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
    write_reports_csv({report}, path);
}

void write_reports_csv(const std::vector<MetricReport>& reports, const std::string& path) {
    std::ofstream out(path);
    out << "descriptor,setting,metric,k,value,users_evaluated,users_skipped,impossible\n";
    out << std::setprecision(17);
    for (const auto& r : reports) {
        for (std::size_t i = 0; i < r.ks.size(); ++i) {
            out << r.descriptor << ',' << setting_to_string(r.setting) << ",recall," << r.ks[i]
                << ',' << r.mean_recall[i] << ',' << r.users_evaluated << ',' << r.users_skipped
                << ',' << (r.evaluation_impossible ? 1 : 0) << '\n';
            out << r.descriptor << ',' << setting_to_string(r.setting) << ",ndcg," << r.ks[i] << ','
                << r.mean_ndcg[i] << ',' << r.users_evaluated << ',' << r.users_skipped << ','
                << (r.evaluation_impossible ? 1 : 0) << '\n';
        }
    }
}

std::string format_report_table(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << std::left << std::setw(32) << "variant" << std::setw(11) << "setting";
    if (!reports.empty())
        for (int k : reports.front().ks)
            out << std::setw(10) << ("R@" + std::to_string(k)) << std::setw(10)
                << ("N@" + std::to_string(k));
    out << std::setw(8) << "users" << "\n";
    out << std::fixed << std::setprecision(4);
    for (const auto& r : reports) {
        out << std::setw(32) << r.descriptor << std::setw(11) << setting_to_string(r.setting);
        if (r.evaluation_impossible) {
            out << "evaluation impossible: " << r.note << "\n";
            continue;
        }
        for (std::size_t i = 0; i < r.ks.size(); ++i)
            out << std::setw(10) << r.mean_recall[i] << std::setw(10) << r.mean_ndcg[i];
        out << std::setw(8) << r.users_evaluated << "\n";
    }
    return out.str();
}

std::string format_comparison(const VariantComparison& cmp) {
    std::ostringstream out;
    out << format_report_table({cmp.base, cmp.augmented});
    out << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < cmp.base.ks.size(); ++i) {
        out << "R@" << cmp.base.ks[i] << ": " << std::showpos << cmp.recall_improvement_pct[i]
            << "%" << std::noshowpos << " (p=" << cmp.recall_p_value[i] << ")  ";
        out << "N@" << cmp.base.ks[i] << ": " << std::showpos << cmp.ndcg_improvement_pct[i] << "%"
            << std::noshowpos << " (p=" << cmp.ndcg_p_value[i] << ")\n";
    }
    return out.str();
}

}  // namespace reclm

#pragma once

#include <optional>
#include <vector>

#include "reclm/data.hpp"
#include "reclm/knn.hpp"
#include "reclm/provider.hpp"
#include "reclm/templates.hpp"
#include "reclm/tokenizer.hpp"

namespace reclm {

// Histories rendered into prompts keep only this many most-recent items.
constexpr int kMaxHistoryItems = 20;

struct TwoTurnExample {
    std::string q_fir, r_fir, q_sec, r_sec;
    int target_user = -1;
    std::vector<int> neighbor_ids;
    std::vector<int> rendered_history;  // V_t as shown in the first turn (post removal)
    std::vector<std::vector<int>> neighbor_histories;
    int sampled_item = -1;
    bool positive = false;
};

struct MaskedSequence {
    std::vector<int> tokens;
    std::vector<int> mask;             // 1 exactly on response-span tokens
    std::vector<int> turn_boundaries;  // start offsets of q1, r1, q2, r2
};

struct PreferencePair {
    std::string q, r_plus, r_minus;
    std::string negative_kind;  // "diverse_low_quality" | "profile_substitution"
    int user = -1;
};

struct KdInstruction {
    std::string q, r_target;
    int user = -1;
};

std::string render_history_text(const std::vector<int>& items, const ItemCatalog& catalog);

KdInstruction build_kd_instruction(int user, const std::vector<int>& history,
                                   const ItemCatalog& catalog, ProfileProvider& teacher,
                                   const TemplateRegistry& reg, std::uint64_t seed);

struct SecondTurnSample {
    int item = -1;
    bool positive = false;
    std::vector<int> rendered_history;
    bool skipped = false;  // neither polarity had a candidate pool
};
SecondTurnSample sample_second_turn(const std::vector<int>& target_history,
                                    const std::vector<std::vector<int>>& neighbor_histories,
                                    Rng& rng);

TwoTurnExample build_two_turn(int target_user, const std::vector<int>& neighbors,
                              const std::vector<std::vector<int>>& histories,
                              const ItemCatalog& catalog, ProfileProvider& profile_source,
                              const TemplateRegistry& reg, std::uint64_t seed, Rng& rng);

MaskedSequence render_masked(const TwoTurnExample& example, const Vocabulary& vocab);

std::string build_inference_prompt(int target_user, const std::vector<int>& neighbors,
                                   const std::vector<std::vector<int>>& histories,
                                   const ItemCatalog& catalog, const TemplateRegistry& reg);

enum class ItemProfileMode { FromInteractors, FromSimilarItems };

struct UnservableItemError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string build_item_profile_prompt(int item, ItemProfileMode mode, const ItemCatalog& catalog,
                                      const std::vector<int>& source_ids,
                                      const std::vector<std::string>& source_profiles,
                                      const TemplateRegistry& reg);

// corruption operators for diverse negative sampling
std::string corrupt_truncate(const std::string& text, double keep_ratio);
std::string corrupt_repeat_ngram(const std::string& text, Rng& rng);
std::string corrupt_shuffle(const std::string& text, Rng& rng);
std::string corrupt_delete(const std::string& text, Rng& rng);

struct PreferencePairConfig {
    double substitution_fraction = 0.5;
    double truncate_keep_ratio = 0.5;
};

std::vector<PreferencePair> build_preference_pairs(const std::vector<int>& users,
                                                   const std::vector<std::string>& user_profiles,
                                                   const NeighborIndex& neighbors,
                                                   const std::vector<std::string>& inference_prompts,
                                                   const PreferencePairConfig& cfg, Rng& rng);

// JSONL persistence
void save_two_turn_jsonl(const std::vector<TwoTurnExample>& corpus, const std::string& path);
std::vector<TwoTurnExample> load_two_turn_jsonl(const std::string& path);
void save_preference_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::string& path);
std::vector<PreferencePair> load_preference_pairs_jsonl(const std::string& path);

}  // namespace reclm

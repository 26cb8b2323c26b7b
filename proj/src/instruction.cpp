#include "reclm/instruction.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace reclm {

using json = nlohmann::json;

namespace {

std::vector<int> truncate_history(const std::vector<int>& history) {
    if (int(history.size()) <= kMaxHistoryItems) return history;
    return {history.end() - kMaxHistoryItems, history.end()};
}

std::string neighbor_histories_text(const std::vector<int>& neighbors,
                                    const std::vector<std::vector<int>>& histories,
                                    const ItemCatalog& catalog) {
    std::string out;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        if (i) out += " ";
        out += "User " + std::to_string(neighbors[i]) + ": " +
               render_history_text(truncate_history(histories[std::size_t(neighbors[i])]), catalog) + ".";
    }
    if (out.empty()) out = "(none)";
    return out;
}

}  // namespace

std::string render_history_text(const std::vector<int>& items, const ItemCatalog& catalog) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += "; ";
        out += "\"" + catalog.items.at(std::size_t(items[i])).title + "\"";
    }
    if (out.empty()) out = "(no items)";
    return out;
}

KdInstruction build_kd_instruction(int user, const std::vector<int>& history,
                                   const ItemCatalog& catalog, ProfileProvider& teacher,
                                   const TemplateRegistry& reg, std::uint64_t seed) {
    if (history.empty()) throw ConfigError("kd instruction needs a non-empty history");
    KdInstruction out;
    out.user = user;
    out.q = reg.get("kd_query").render({{"user_id", std::to_string(user)},
                                        {"history", render_history_text(truncate_history(history), catalog)}});
    out.r_target = teacher.generate(SubjectKind::User, user, out.q, seed);
    return out;
}

SecondTurnSample sample_second_turn(const std::vector<int>& target_history,
                                    const std::vector<std::vector<int>>& neighbor_histories,
                                    Rng& rng) {
    std::set<int> target(target_history.begin(), target_history.end());
    std::set<int> pool;
    for (const auto& h : neighbor_histories) pool.insert(h.begin(), h.end());

    std::vector<int> pos_pool, neg_pool;
    for (int v : pool) (target.count(v) ? pos_pool : neg_pool).push_back(v);

    SecondTurnSample out;
    if (pos_pool.empty() && neg_pool.empty()) {
        out.skipped = true;
        std::cerr << "[reclm] warning: user has no eligible second-turn candidates, skipping\n";
        return out;
    }
    bool want_positive = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    if (want_positive && pos_pool.empty()) want_positive = false;
    else if (!want_positive && neg_pool.empty()) want_positive = true;

    const auto& chosen_pool = want_positive ? pos_pool : neg_pool;
    out.item = chosen_pool[std::uniform_int_distribution<std::size_t>(0, chosen_pool.size() - 1)(rng)];
    out.positive = want_positive;
    out.rendered_history = target_history;
    if (want_positive) {
        // drop the sampled item from the first turn so the answer cannot leak
        out.rendered_history.erase(
            std::remove(out.rendered_history.begin(), out.rendered_history.end(), out.item),
            out.rendered_history.end());
    }
    return out;
}

TwoTurnExample build_two_turn(int target_user, const std::vector<int>& neighbors,
                              const std::vector<std::vector<int>>& histories,
                              const ItemCatalog& catalog, ProfileProvider& profile_source,
                              const TemplateRegistry& reg, std::uint64_t seed, Rng& rng) {
    const auto& target_history = histories.at(std::size_t(target_user));
    std::vector<std::vector<int>> nbr_hist;
    for (int n : neighbors) nbr_hist.push_back(histories.at(std::size_t(n)));

    SecondTurnSample sample = sample_second_turn(target_history, nbr_hist, rng);
    if (sample.skipped) throw ConfigError("user " + std::to_string(target_user) + " unservable");

    TwoTurnExample ex;
    ex.target_user = target_user;
    ex.neighbor_ids = neighbors;
    ex.neighbor_histories = nbr_hist;
    ex.sampled_item = sample.item;
    ex.positive = sample.positive;
    ex.rendered_history = truncate_history(sample.rendered_history);

    ex.q_fir = reg.get("two_turn_q1").render(
        {{"user_id", std::to_string(target_user)},
         {"target_history", render_history_text(ex.rendered_history, catalog)},
         {"neighbor_histories", neighbor_histories_text(neighbors, histories, catalog)}});

    // target user's profile first, then neighbors in index order
    std::string profiles;
    auto add_profile = [&](int uid) {
        std::string p = profile_source.generate(SubjectKind::User, uid,
                                                build_inference_prompt(uid, {}, histories, catalog, reg),
                                                seed);
        if (!profiles.empty()) profiles += " ";
        profiles += reg.get("profile_line").render({{"user_id", std::to_string(uid)}, {"profile", p}});
    };
    add_profile(target_user);
    for (int n : neighbors) add_profile(n);
    ex.r_fir = profiles;

    ex.q_sec = reg.get("two_turn_q2").render(
        {{"user_id", std::to_string(target_user)},
         {"item_title", catalog.items.at(std::size_t(sample.item)).title}});
    ex.r_sec = sample.positive ? "Yes" : "No";
    return ex;
}

MaskedSequence render_masked(const TwoTurnExample& example, const Vocabulary& vocab) {
    MaskedSequence seq;
    seq.tokens.push_back(Vocabulary::kBos);
    seq.mask.push_back(0);
    auto append = [&](const std::string& text, int mask_value) {
        seq.turn_boundaries.push_back(int(seq.tokens.size()));
        for (int id : vocab.encode(text)) {
            seq.tokens.push_back(id);
            seq.mask.push_back(mask_value);
        }
    };
    append(example.q_fir, 0);
    append(example.r_fir, 1);
    append(example.q_sec, 0);
    append(example.r_sec, 1);
    seq.tokens.push_back(Vocabulary::kEos);
    seq.mask.push_back(0);
    return seq;
}

std::string build_inference_prompt(int target_user, const std::vector<int>& neighbors,
                                   const std::vector<std::vector<int>>& histories,
                                   const ItemCatalog& catalog, const TemplateRegistry& reg) {
    return reg.get("inference").render(
        {{"user_id", std::to_string(target_user)},
         {"target_history",
          render_history_text(truncate_history(histories.at(std::size_t(target_user))), catalog)},
         {"neighbor_histories", neighbor_histories_text(neighbors, histories, catalog)}});
}

std::string build_item_profile_prompt(int item, ItemProfileMode mode, const ItemCatalog& catalog,
                                      const std::vector<int>& source_ids,
                                      const std::vector<std::string>& source_profiles,
                                      const TemplateRegistry& reg) {
    if (source_ids.empty() || source_profiles.empty())
        throw UnservableItemError("item " + std::to_string(item) + " has no profile sources");
    std::string profiles;
    for (std::size_t i = 0; i < source_profiles.size(); ++i)
        profiles += (i ? " | " : "") + source_profiles[i];
    const std::string& title = catalog.items.at(std::size_t(item)).title;
    if (mode == ItemProfileMode::FromInteractors) {
        return reg.get("item_from_interactors").render({{"item_title", title}, {"profiles", profiles}});
    }
    std::string titles;
    for (std::size_t i = 0; i < source_ids.size(); ++i)
        titles += (i ? "; " : "") + ("\"" + catalog.items.at(std::size_t(source_ids[i])).title + "\"");
    return reg.get("item_from_similar").render(
        {{"item_title", title}, {"similar_titles", titles}, {"profiles", profiles}});
}

namespace {
std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) out += (i ? " " : "") + toks[i];
    return out;
}
}  // namespace

std::string corrupt_truncate(const std::string& text, double keep_ratio) {
    auto toks = tokenize_words(text);
    const std::size_t keep = std::size_t(std::ceil(double(toks.size()) * keep_ratio));
    toks.resize(std::min(toks.size(), keep));
    return join_tokens(toks);
}

std::string corrupt_repeat_ngram(const std::string& text, Rng& rng) {
    auto toks = tokenize_words(text);
    if (toks.size() < 2) return join_tokens(toks) + " " + join_tokens(toks);
    const std::size_t n = std::min<std::size_t>(3, toks.size());
    std::uniform_int_distribution<std::size_t> pos(0, toks.size() - n);
    const std::size_t p = pos(rng);
    std::vector<std::string> gram(toks.begin() + long(p), toks.begin() + long(p + n));
    std::vector<std::string> out = toks;
    for (int r = 0; r < 3; ++r) out.insert(out.begin() + long(p + n), gram.begin(), gram.end());
    return join_tokens(out);
}

std::string corrupt_shuffle(const std::string& text, Rng& rng) {
    auto toks = tokenize_words(text);
    for (std::size_t i = toks.size(); i > 1; --i)
        std::swap(toks[i - 1], toks[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    return join_tokens(toks);
}

std::string corrupt_delete(const std::string& text, Rng& rng) {
    auto toks = tokenize_words(text);
    std::vector<std::string> out;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto& t : toks)
        if (u01(rng) >= 0.4) out.push_back(t);
    if (out.empty() && !toks.empty()) out.push_back(toks.front());
    return join_tokens(out);
}

std::vector<PreferencePair> build_preference_pairs(const std::vector<int>& users,
                                                   const std::vector<std::string>& user_profiles,
                                                   const NeighborIndex& neighbors,
                                                   const std::vector<std::string>& inference_prompts,
                                                   const PreferencePairConfig& cfg, Rng& rng) {
    std::vector<PreferencePair> pairs;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int u : users) {
        PreferencePair pair;
        pair.user = u;
        pair.q = inference_prompts.at(std::size_t(u));
        pair.r_plus = user_profiles.at(std::size_t(u));
        const auto& nbrs = neighbors.neighbors.at(std::size_t(u));
        const bool substitute = !nbrs.empty() && u01(rng) < cfg.substitution_fraction;
        if (substitute) {
            pair.negative_kind = "profile_substitution";
            pair.r_minus = user_profiles.at(std::size_t(nbrs.front()));
        } else {
            pair.negative_kind = "diverse_low_quality";
            switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
                case 0: pair.r_minus = corrupt_truncate(pair.r_plus, cfg.truncate_keep_ratio); break;
                case 1: pair.r_minus = corrupt_repeat_ngram(pair.r_plus, rng); break;
                case 2: pair.r_minus = corrupt_shuffle(pair.r_plus, rng); break;
                default: pair.r_minus = corrupt_delete(pair.r_plus, rng); break;
            }
        }
        if (pair.r_minus == pair.r_plus) {
            // degenerate corruption (or identical neighbor profile): force a visible defect
            pair.r_minus = corrupt_truncate(pair.r_plus, 0.4);
            if (pair.r_minus == pair.r_plus) pair.r_minus = pair.r_plus + " " + pair.r_plus;
            pair.negative_kind = "diverse_low_quality";
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

void save_two_turn_jsonl(const std::vector<TwoTurnExample>& corpus, const std::string& path) {
    std::ofstream out(path);
    for (const auto& ex : corpus) {
        json j{{"q_fir", ex.q_fir},     {"r_fir", ex.r_fir},
               {"q_sec", ex.q_sec},     {"r_sec", ex.r_sec},
               {"target_user", ex.target_user}, {"neighbors", ex.neighbor_ids},
               {"rendered_history", ex.rendered_history},
               {"neighbor_histories", ex.neighbor_histories},
               {"sampled_item", ex.sampled_item}, {"positive", ex.positive}};
        out << j.dump() << '\n';
    }
}

std::vector<TwoTurnExample> load_two_turn_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<TwoTurnExample> corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        TwoTurnExample ex;
        ex.q_fir = j.at("q_fir");
        ex.r_fir = j.at("r_fir");
        ex.q_sec = j.at("q_sec");
        ex.r_sec = j.at("r_sec");
        ex.target_user = j.at("target_user");
        ex.neighbor_ids = j.at("neighbors").get<std::vector<int>>();
        ex.rendered_history = j.at("rendered_history").get<std::vector<int>>();
        ex.neighbor_histories = j.at("neighbor_histories").get<std::vector<std::vector<int>>>();
        ex.sampled_item = j.at("sampled_item");
        ex.positive = j.at("positive");
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

void save_preference_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ofstream out(path);
    for (const auto& p : pairs) {
        out << json{{"q", p.q}, {"r_plus", p.r_plus}, {"r_minus", p.r_minus},
                    {"negative_kind", p.negative_kind}, {"user", p.user}}
                   .dump()
            << '\n';
    }
}

std::vector<PreferencePair> load_preference_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<PreferencePair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PreferencePair p;
        p.q = j.at("q");
        p.r_plus = j.at("r_plus");
        p.r_minus = j.at("r_minus");
        p.negative_kind = j.at("negative_kind");
        p.user = j.at("user");
        if (p.r_plus == p.r_minus) throw ParseError("degenerate preference pair for user " +
                                                    std::to_string(p.user));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace reclm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "reclm/instruction.hpp"
#include "reclm/profiles.hpp"

using namespace reclm;

namespace {

ItemCatalog unique_catalog(int n) {
    ItemCatalog cat;
    for (int i = 0; i < n; ++i) cat.items.push_back({"itemtitle" + std::to_string(i) + "x", {}, {}});
    return cat;
}

struct FixedProvider : ProfileProvider {
    std::string generate(SubjectKind, int subject_id, const std::string&, std::uint64_t) override {
        return "profile of subject " + std::to_string(subject_id);
    }
    std::string id() const override { return "fixed"; }
};

SyntheticData forge_world(std::uint64_t seed = 23) {
    SyntheticConfig cfg;
    cfg.n_users = 40;
    cfg.n_items = 30;
    cfg.n_cold_items = 3;
    cfg.density = 0.2;
    return generate_synthetic(cfg, seed);
}

}  // namespace

TEST_CASE("template rendering fills every slot and the registry rejects duplicates") {
    auto reg = TemplateRegistry::defaults();
    auto text = reg.get("kd_query").render({{"user_id", "7"}, {"history", "\"a\"; \"b\""}});
    CHECK(text.find('{') == std::string::npos);
    CHECK(text.find("7") != std::string::npos);
    CHECK_THROWS_AS(reg.put(reg.get("kd_query")), ConfigError);
}

TEST_CASE("kd instruction renders the history and carries the teacher profile") {
    auto cat = unique_catalog(5);
    FixedProvider teacher;
    auto reg = TemplateRegistry::defaults();
    auto kd = build_kd_instruction(3, {2}, cat, teacher, reg, 1);
    CHECK(kd.q.find("itemtitle2x") != std::string::npos);
    CHECK(kd.r_target == "profile of subject 3");
    CHECK_THROWS_AS(build_kd_instruction(3, {}, cat, teacher, reg, 1), ConfigError);
}

TEST_CASE("oracle teacher profile names the user's tags") {
    auto data = forge_world();
    OracleProvider oracle(data.world);
    auto reg = TemplateRegistry::defaults();
    auto hist = data.log.user_histories();
    auto kd = build_kd_instruction(0, hist[0], data.catalog, oracle, reg, 1);
    for (int t : data.world.user_tags[0])
        CHECK(kd.r_target.find(data.world.tag_vocab[std::size_t(t)]) != std::string::npos);
}

TEST_CASE("ten thousand renderings contain zero unfilled placeholders") {
    auto data = forge_world();
    OracleProvider oracle(data.world);
    auto reg = TemplateRegistry::defaults();
    auto hist = data.log.user_histories();
    Rng rng(6);
    int rendered = 0;
    while (rendered < 10000) {
        for (int u = 0; u < data.log.n_users && rendered < 10000; ++u) {
            if (hist[std::size_t(u)].empty()) continue;
            auto kd = build_kd_instruction(u, hist[std::size_t(u)], data.catalog, oracle, reg,
                                           std::uint64_t(rendered));
            CHECK(kd.q.find('{') == std::string::npos);
            ++rendered;
            std::vector<int> nbrs{(u + 1) % data.log.n_users, (u + 2) % data.log.n_users};
            auto prompt = build_inference_prompt(u, nbrs, hist, data.catalog, reg);
            CHECK(prompt.find('{') == std::string::npos);
            ++rendered;
        }
    }
}

TEST_CASE("second-turn sampling: forced positive and negative choices") {
    std::vector<int> vt{0};
    std::vector<std::vector<int>> vn{{0, 1}};
    bool saw_pos = false, saw_neg = false;
    for (std::uint64_t s = 0; s < 64 && !(saw_pos && saw_neg); ++s) {
        Rng rng(s);
        auto smp = sample_second_turn(vt, vn, rng);
        REQUIRE_FALSE(smp.skipped);
        if (smp.positive) {
            CHECK(smp.item == 0);
            CHECK(smp.rendered_history.empty());
            saw_pos = true;
        } else {
            CHECK(smp.item == 1);
            CHECK(smp.rendered_history == vt);
            saw_neg = true;
        }
    }
    CHECK(saw_pos);
    CHECK(saw_neg);
}

TEST_CASE("polarity flips when the requested pool is empty and skips when both are") {
    SUBCASE("only the positive pool exists") {
        std::vector<int> vt{0, 1};
        std::vector<std::vector<int>> vn{{0}, {1}};
        for (std::uint64_t s = 0; s < 20; ++s) {
            Rng rng(s);
            auto smp = sample_second_turn(vt, vn, rng);
            CHECK(smp.positive);
        }
    }
    SUBCASE("only the negative pool exists") {
        std::vector<int> vt{9};
        std::vector<std::vector<int>> vn{{0, 1}};
        for (std::uint64_t s = 0; s < 20; ++s) {
            Rng rng(s);
            auto smp = sample_second_turn(vt, vn, rng);
            CHECK_FALSE(smp.positive);
        }
    }
    SUBCASE("no candidates at all skips the user") {
        Rng rng(0);
        auto smp = sample_second_turn({0}, {{}}, rng);
        CHECK(smp.skipped);
    }
}

TEST_CASE("over 10k draws the positive fraction honors the fair coin") {
    std::vector<int> vt{0, 1, 2};
    std::vector<std::vector<int>> vn{{0, 1, 5, 6}, {2, 7}};
    Rng rng(123);
    int positives = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        if (sample_second_turn(vt, vn, rng).positive) ++positives;
    const double frac = double(positives) / double(n);
    CHECK(frac >= 0.48);
    CHECK(frac <= 0.52);
}

TEST_CASE("two-turn examples satisfy the leakage and label invariants") {
    auto data = forge_world();
    auto hist = data.log.user_histories();
    OracleProvider oracle(data.world);
    auto reg = TemplateRegistry::defaults();
    Rng rng(77);
    int built = 0;
    for (int round = 0; round < 60; ++round) {
        for (int u = 0; u < data.log.n_users; ++u) {
            std::vector<int> nbrs{(u + 1) % data.log.n_users, (u + 3) % data.log.n_users};
            TwoTurnExample ex;
            try {
                ex = build_two_turn(u, nbrs, hist, data.catalog, oracle, reg, std::uint64_t(round),
                                    rng);
            } catch (const ConfigError&) {
                continue;  // unservable user
            }
            ++built;
            // re-derive the invariants from metadata alone
            std::set<int> vt(hist[std::size_t(u)].begin(), hist[std::size_t(u)].end());
            std::set<int> pool;
            for (const auto& h : ex.neighbor_histories) pool.insert(h.begin(), h.end());
            CHECK(pool.count(ex.sampled_item) == 1);
            if (ex.positive) {
                CHECK(vt.count(ex.sampled_item) == 1);
                CHECK(std::count(ex.rendered_history.begin(), ex.rendered_history.end(),
                                 ex.sampled_item) == 0);
                CHECK(ex.r_sec == "Yes");
            } else {
                CHECK(vt.count(ex.sampled_item) == 0);
                CHECK(ex.r_sec == "No");
            }
            // R_fir holds one profile line per user in {u_t} + neighbors
            std::size_t lines = 0, at = 0;
            while ((at = ex.r_fir.find("This user is mainly interested", at)) != std::string::npos) {
                ++lines;
                ++at;
            }
            CHECK(lines == nbrs.size() + 1);
        }
    }
    CHECK(built > 1000);
}

TEST_CASE("masked rendering marks exactly the response spans") {
    auto data = forge_world();
    auto hist = data.log.user_histories();
    OracleProvider oracle(data.world);
    auto reg = TemplateRegistry::defaults();
    Rng rng(5);
    TwoTurnExample ex;
    for (int u = 0;; ++u) {
        try {
            ex = build_two_turn(u, {(u + 1) % data.log.n_users}, hist, data.catalog, oracle, reg, 0,
                                rng);
            break;
        } catch (const ConfigError&) {
        }
    }
    std::vector<std::string> corpus{ex.q_fir, ex.r_fir, ex.q_sec, ex.r_sec};
    auto vocab = Vocabulary::build(corpus);
    auto seq = render_masked(ex, vocab);

    REQUIRE(seq.tokens.size() == seq.mask.size());
    REQUIRE(seq.turn_boundaries.size() == 4);

    // independent re-tokenization oracle for the mask mass
    const std::size_t want =
        vocab.encode(ex.r_fir).size() + vocab.encode(ex.r_sec).size();
    std::size_t got = 0;
    for (int m : seq.mask) got += std::size_t(m);
    CHECK(got == want);

    SUBCASE("changing a query token leaves the mask unchanged") {
        TwoTurnExample mutated = ex;
        mutated.q_fir += " extraword";
        auto seq2 = render_masked(mutated, vocab);
        std::size_t got2 = 0;
        for (int m : seq2.mask) got2 += std::size_t(m);
        CHECK(got2 == got);
    }
    SUBCASE("degenerate empty R_fir leaves only the R_sec span masked") {
        TwoTurnExample empty = ex;
        empty.r_fir.clear();
        auto seq2 = render_masked(empty, vocab);
        std::size_t got2 = 0;
        for (int m : seq2.mask) got2 += std::size_t(m);
        CHECK(got2 == vocab.encode(ex.r_sec).size());
    }
}

TEST_CASE("inference prompt properties") {
    auto cat = unique_catalog(40);
    std::vector<std::vector<int>> hist(6);
    for (int u = 0; u < 6; ++u)
        for (int j = 0; j < 4; ++j) hist[std::size_t(u)].push_back(u * 4 + j);
    auto reg = TemplateRegistry::defaults();

    SUBCASE("zero neighbors shows only the target history") {
        auto p = build_inference_prompt(0, {}, hist, cat, reg);
        for (int v : hist[0]) CHECK(p.find(cat.items[std::size_t(v)].title) != std::string::npos);
        for (int v : hist[1]) CHECK(p.find(cat.items[std::size_t(v)].title) == std::string::npos);
    }
    SUBCASE("pure function of its inputs") {
        CHECK(build_inference_prompt(2, {1, 3}, hist, cat, reg) ==
              build_inference_prompt(2, {1, 3}, hist, cat, reg));
    }
    SUBCASE("length grows monotonically with neighbor count") {
        std::size_t prev = 0;
        for (int k = 0; k <= 5; ++k) {
            std::vector<int> nbrs;
            for (int j = 1; j <= k; ++j) nbrs.push_back(j);
            auto p = build_inference_prompt(0, nbrs, hist, cat, reg);
            CHECK(p.size() > prev);
            prev = p.size();
        }
    }
    SUBCASE("histories render at most the 20 most recent items") {
        std::vector<std::vector<int>> long_hist(1);
        for (int v = 0; v < 30; ++v) long_hist[0].push_back(v);
        auto p = build_inference_prompt(0, {}, long_hist, cat, reg);
        for (int v = 0; v < 10; ++v)
            CHECK(p.find(cat.items[std::size_t(v)].title) == std::string::npos);
        for (int v = 10; v < 30; ++v)
            CHECK(p.find(cat.items[std::size_t(v)].title) != std::string::npos);
    }
}

TEST_CASE("item profile prompts embed their sources and reject empty ones") {
    auto cat = unique_catalog(8);
    auto reg = TemplateRegistry::defaults();
    SUBCASE("interactor mode lists every source profile") {
        std::vector<std::string> profiles{"pro one", "pro two", "pro three"};
        auto p = build_item_profile_prompt(2, ItemProfileMode::FromInteractors, cat, {0, 1, 3},
                                           profiles, reg);
        CHECK(p.find(cat.items[2].title) != std::string::npos);
        for (const auto& s : profiles) CHECK(p.find(s) != std::string::npos);
    }
    SUBCASE("similar-item mode lists titles and profiles") {
        auto p = build_item_profile_prompt(5, ItemProfileMode::FromSimilarItems, cat, {1, 2},
                                           {"pa", "pb"}, reg);
        CHECK(p.find(cat.items[1].title) != std::string::npos);
        CHECK(p.find(cat.items[2].title) != std::string::npos);
        CHECK(p.find("pa") != std::string::npos);
    }
    SUBCASE("no sources raises the unservable error") {
        CHECK_THROWS_AS(
            build_item_profile_prompt(5, ItemProfileMode::FromInteractors, cat, {}, {}, reg),
            UnservableItemError);
    }
}

TEST_CASE("truncation corruption keeps the ceiling of half the tokens") {
    const std::string text = "one two three four five";
    auto out = corrupt_truncate(text, 0.5);
    CHECK(tokenize_words(out).size() == 3);  // ceil(5/2)
    CHECK(tokenize_words(corrupt_truncate("one two", 0.5)).size() == 1);
}

TEST_CASE("preference pairs") {
    const int n_users = 50;
    std::vector<int> users(n_users);
    std::iota(users.begin(), users.end(), 0);
    std::vector<std::string> profiles, prompts;
    for (int u = 0; u < n_users; ++u) {
        profiles.push_back("distinct profile words for user number " + std::to_string(u) +
                           " covering several interests");
        prompts.push_back("prompt " + std::to_string(u));
    }
    NeighborIndex nbrs;
    for (int u = 0; u < n_users; ++u) nbrs.neighbors.push_back({(u + 1) % n_users});
    Rng rng(8);

    SUBCASE("substitution negatives reuse the neighbor profile verbatim") {
        PreferencePairConfig cfg;
        cfg.substitution_fraction = 1.0;
        auto pairs = build_preference_pairs(users, profiles, nbrs, prompts, cfg, rng);
        REQUIRE(pairs.size() == std::size_t(n_users));
        for (const auto& p : pairs) {
            CHECK(p.negative_kind == "profile_substitution");
            CHECK(p.r_minus == profiles[std::size_t((p.user + 1) % n_users)]);
        }
    }
    SUBCASE("a thousand pairs never equate the two responses") {
        PreferencePairConfig cfg;
        std::vector<PreferencePair> all;
        for (int round = 0; round < 20; ++round) {
            auto pairs = build_preference_pairs(users, profiles, nbrs, prompts, cfg, rng);
            all.insert(all.end(), pairs.begin(), pairs.end());
        }
        REQUIRE(all.size() == 1000);
        for (const auto& p : all) {
            CHECK(p.r_plus != p.r_minus);
            CHECK(p.q == prompts[std::size_t(p.user)]);
        }
    }
    SUBCASE("users without neighbors get diverse-only negatives") {
        NeighborIndex none;
        for (int u = 0; u < n_users; ++u) none.neighbors.push_back({});
        PreferencePairConfig cfg;
        cfg.substitution_fraction = 1.0;
        auto pairs = build_preference_pairs(users, profiles, none, prompts, cfg, rng);
        for (const auto& p : pairs) CHECK(p.negative_kind == "diverse_low_quality");
    }
}

TEST_CASE("instruction artifacts round-trip through jsonl") {
    namespace fs = std::filesystem;
    auto data = forge_world();
    auto hist = data.log.user_histories();
    OracleProvider oracle(data.world);
    auto reg = TemplateRegistry::defaults();
    Rng rng(4);
    std::vector<TwoTurnExample> corpus;
    for (int u = 0; u < data.log.n_users && corpus.size() < 10; ++u) {
        try {
            corpus.push_back(build_two_turn(u, {(u + 1) % data.log.n_users}, hist, data.catalog,
                                            oracle, reg, 0, rng));
        } catch (const ConfigError&) {
        }
    }
    REQUIRE(corpus.size() == 10);
    const auto cpath = (fs::temp_directory_path() / "reclm_two_turn.jsonl").string();
    save_two_turn_jsonl(corpus, cpath);
    auto back = load_two_turn_jsonl(cpath);
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(back[i].q_fir == corpus[i].q_fir);
        CHECK(back[i].r_fir == corpus[i].r_fir);
        CHECK(back[i].q_sec == corpus[i].q_sec);
        CHECK(back[i].r_sec == corpus[i].r_sec);
        CHECK(back[i].sampled_item == corpus[i].sampled_item);
        CHECK(back[i].positive == corpus[i].positive);
        CHECK(back[i].rendered_history == corpus[i].rendered_history);
        CHECK(back[i].neighbor_histories == corpus[i].neighbor_histories);
    }

    std::vector<PreferencePair> pairs{{"q", "plus text", "minus text", "profile_substitution", 3}};
    const auto ppath = (fs::temp_directory_path() / "reclm_pairs.jsonl").string();
    save_preference_pairs_jsonl(pairs, ppath);
    auto pback = load_preference_pairs_jsonl(ppath);
    REQUIRE(pback.size() == 1);
    CHECK(pback[0].q == "q");
    CHECK(pback[0].r_plus == "plus text");
    CHECK(pback[0].r_minus == "minus text");
    CHECK(pback[0].negative_kind == "profile_substitution");
    CHECK(pback[0].user == 3);
}

TEST_CASE("template registry persists to a directory and loads back") {
    namespace fs = std::filesystem;
    auto reg = TemplateRegistry::defaults();
    const auto dir = (fs::temp_directory_path() / "reclm_templates").string();
    fs::remove_all(dir);
    reg.save_dir(dir);
    auto back = TemplateRegistry::load_dir(dir);
    CHECK(back.get("kd_query").text == reg.get("kd_query").text);
    CHECK(back.get("inference").text == reg.get("inference").text);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "reclm/policy_lm.hpp"

using namespace reclm;

namespace {

Vocabulary tiny_vocab() {
    return Vocabulary::build({"the quick brown fox jumps over a lazy dog near the old red barn",
                              "profiles describe interests in sports music film and travel"});
}

PolicyModel micro_model(std::uint64_t seed = 3) {
    PolicyConfig cfg;
    cfg.embed_dim = 6;
    cfg.hidden_dim = 8;
    cfg.context_len = 96;
    cfg.seed = seed;
    return PolicyModel(tiny_vocab(), cfg);
}

std::vector<int> random_tokens(const Vocabulary& vocab, Rng& rng, int len) {
    std::uniform_int_distribution<int> pick(0, vocab.size() - 1);
    std::vector<int> out;
    for (int i = 0; i < len; ++i) out.push_back(pick(rng));
    return out;
}

}  // namespace

TEST_CASE("vocabulary round-trips in-vocab text and falls back to bytes") {
    auto vocab = tiny_vocab();
    const std::string text = "the quick fox";
    CHECK(vocab.decode(vocab.encode(text)) == text);
    // out-of-vocab words survive through byte fallback
    const std::string oov = "zyzzyva";
    CHECK(vocab.decode(vocab.encode(oov)) == oov);
    CHECK(vocab.word_id("zyzzyva") == -1);
}

TEST_CASE("zeroed output layer yields the uniform distribution") {
    auto model = micro_model();
    model.out_weight().w.setZero();
    model.out_bias().w.setZero();
    const double uniform = -std::log(double(model.vocab().size()));
    Rng rng(1);
    auto tokens = random_tokens(model.vocab(), rng, 12);
    Vec lp = model.forward_logprobs(tokens);
    REQUIRE(lp.size() == 12);
    for (int t = 0; t < lp.size(); ++t) CHECK(lp(t) == doctest::Approx(uniform).epsilon(1e-12));
}

TEST_CASE("every conditional distribution sums to one") {
    auto model = micro_model();
    Rng rng(2);
    auto tokens = random_tokens(model.vocab(), rng, 10);
    Mat rows = model.forward_logprob_rows(tokens);
    REQUIRE(rows.rows() == 10);
    for (int t = 0; t < rows.rows(); ++t)
        CHECK(rows.row(t).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("sequence log-probability matches a stepwise decoder loop on 100 sequences") {
    auto model = micro_model();
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto tokens = random_tokens(model.vocab(), rng, 2 + trial % 7);
        Vec lp = model.forward_logprobs(tokens);

        // independent oracle: re-run the model on each prefix and read the
        // final conditional each time
        double oracle = 0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            std::vector<int> prefix(tokens.begin(), tokens.begin() + long(t) + 1);
            Mat rows = model.forward_logprob_rows(prefix);
            oracle += rows(rows.rows() - 1, tokens[t]);
        }
        CHECK(lp.sum() == doctest::Approx(oracle).epsilon(1e-10));
    }
}

TEST_CASE("overlong input is rejected") {
    auto model = micro_model();
    std::vector<int> tokens(std::size_t(model.config().context_len) + 1, 3);
    CHECK_THROWS_AS(model.forward_logprobs(tokens), ConfigError);
}

TEST_CASE("all-ones mask reduces the masked loss to standard cross-entropy") {
    auto model = micro_model();
    Rng rng(6);
    MaskedSequence seq;
    seq.tokens = random_tokens(model.vocab(), rng, 9);
    seq.mask.assign(9, 1);
    const double masked = model.masked_loss({seq});
    const double ce = -model.forward_logprobs(seq.tokens).mean();
    CHECK(masked == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("mask-0 target positions contribute exactly nothing") {
    auto model = micro_model();
    Rng rng(7);
    MaskedSequence seq;
    seq.tokens = random_tokens(model.vocab(), rng, 10);
    seq.mask = {0, 0, 1, 0, 1, 1, 0, 0, 1, 0};
    const double before = model.masked_loss({seq});
    MaskedSequence mutated = seq;
    mutated.tokens[0] = (mutated.tokens[0] + 1) % model.vocab().size();
    mutated.tokens[6] = (mutated.tokens[6] + 5) % model.vocab().size();
    // masked positions that *condition* later tokens would change the loss, so
    // only mutate mask-0 positions after the last mask-1 position
    MaskedSequence tail = seq;
    tail.tokens[9] = (tail.tokens[9] + 3) % model.vocab().size();
    CHECK(model.masked_loss({tail}) == before);
}

TEST_CASE("corpus with an all-zero mask is a config error") {
    auto model = micro_model();
    MaskedSequence seq;
    seq.tokens = {3, 4, 5};
    seq.mask = {0, 0, 0};
    CHECK_THROWS_AS(model.masked_loss({seq}), ConfigError);
    PolicyModel::MaskedTrainConfig cfg;
    CHECK_THROWS_AS(model.train_masked({seq}, cfg), ConfigError);
}

TEST_CASE("masked-loss gradient matches central differences on a micro model") {
    auto model = micro_model();
    Rng rng(8);
    MaskedSequence seq;
    seq.tokens = random_tokens(model.vocab(), rng, 8);
    seq.mask = {0, 1, 1, 0, 1, 0, 1, 1};
    double mask_count = 0;
    Vec weights = Vec::Zero(8);
    for (int t = 0; t < 8; ++t)
        if (seq.mask[std::size_t(t)]) {
            weights(t) = 1.0;
            mask_count += 1.0;
        }
    weights /= mask_count;  // grad of the mean over masked positions

    model.zero_grad();
    model.add_weighted_logprob_grad(seq.tokens, weights);

    const double h = 1e-6;
    std::uniform_int_distribution<int> flat(0, 1000000);
    int checked = 0;
    for (Param* p : model.params()) {
        for (int probe = 0; probe < 4; ++probe) {
            const int r = flat(rng) % int(p->w.rows());
            const int c = flat(rng) % int(p->w.cols());
            const double keep = p->w(r, c);
            p->w(r, c) = keep + h;
            const double up = model.masked_loss({seq});
            p->w(r, c) = keep - h;
            const double dn = model.masked_loss({seq});
            p->w(r, c) = keep;
            const double num = (up - dn) / (2 * h);
            CHECK(std::abs(p->g(r, c) - num) < 1e-4 * std::max(1.0, std::abs(num)));
            ++checked;
        }
    }
    CHECK(checked >= 10);
}

TEST_CASE("masked training is deterministic and reduces the loss") {
    auto make_corpus = [&](const PolicyModel& model) {
        std::vector<MaskedSequence> corpus;
        Rng rng(11);
        for (int i = 0; i < 12; ++i) {
            MaskedSequence seq;
            seq.tokens = random_tokens(model.vocab(), rng, 10);
            seq.mask.assign(10, 0);
            for (int t = 4; t < 10; ++t) seq.mask[std::size_t(t)] = 1;
            corpus.push_back(seq);
        }
        return corpus;
    };
    PolicyModel::MaskedTrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 4;
    cfg.learning_rate = 5e-2;
    cfg.seed = 2;

    auto m1 = micro_model();
    auto corpus = make_corpus(m1);
    auto trace1 = m1.train_masked(corpus, cfg);
    auto m2 = micro_model();
    auto trace2 = m2.train_masked(corpus, cfg);

    REQUIRE(trace1.size() == 8);
    CHECK(trace1.back() < trace1.front());
    CHECK(trace1 == trace2);
    CHECK(m1.same_parameters(m2));
}

TEST_CASE("greedy generation is deterministic") {
    auto model = micro_model();
    auto a = model.generate("the quick", 8, 0.7, 1, /*greedy=*/true);
    auto b = model.generate("the quick", 8, 0.3, 999, /*greedy=*/true);
    CHECK(a.ids == b.ids);
    CHECK(a.text == b.text);
}

TEST_CASE("sampled generation is deterministic under a fixed seed") {
    auto model = micro_model();
    auto a = model.generate("profiles describe", 10, 1.0, 42);
    auto b = model.generate("profiles describe", 10, 1.0, 42);
    CHECK(a.ids == b.ids);
}

TEST_CASE("returned log-probs equal a forward recomputation on prompt plus output") {
    auto model = micro_model();
    const std::string prompt = "interests in sports";
    auto gen = model.generate(prompt, 6, 0.8, 5);
    REQUIRE(!gen.ids.empty());
    std::vector<int> full = model.vocab().encode(prompt);
    const std::size_t prompt_len = full.size();
    full.insert(full.end(), gen.ids.begin(), gen.ids.end());
    Vec lp = model.forward_logprobs(full);
    REQUIRE(lp.size() == Eigen::Index(full.size()));
    for (std::size_t i = 0; i < gen.ids.size(); ++i)
        CHECK(gen.logprobs(Eigen::Index(i)) ==
              doctest::Approx(lp(Eigen::Index(prompt_len + i))).epsilon(1e-10));
}

TEST_CASE("max_tokens zero produces an empty generation") {
    auto model = micro_model();
    auto gen = model.generate("the", 0, 1.0, 1);
    CHECK(gen.ids.empty());
    CHECK(gen.text.empty());
    CHECK(gen.logprobs.size() == 0);
}

TEST_CASE("generation respects the context budget") {
    auto model = micro_model();
    std::vector<int> prompt(std::size_t(model.config().context_len), 3);
    CHECK_THROWS_AS(model.generate_ids(prompt, 4, 1.0, 0), ConfigError);
}

TEST_CASE("checkpoints restore the model bit-for-bit") {
    namespace fs = std::filesystem;
    auto model = micro_model();
    // train a little so parameters are not at init
    Rng rng(14);
    std::vector<MaskedSequence> corpus;
    for (int i = 0; i < 4; ++i) {
        MaskedSequence seq;
        seq.tokens = random_tokens(model.vocab(), rng, 8);
        seq.mask.assign(8, 1);
        corpus.push_back(seq);
    }
    PolicyModel::MaskedTrainConfig cfg;
    cfg.epochs = 2;
    model.train_masked(corpus, cfg);

    const auto path = (fs::temp_directory_path() / "reclm_policy_rt.ckpt").string();
    model.save(path);
    auto back = PolicyModel::load(path);
    CHECK(back.same_parameters(model));
    CHECK(back.descriptor() == model.descriptor());
    CHECK(back.vocab().size() == model.vocab().size());
    auto tokens = random_tokens(model.vocab(), rng, 11);
    Vec a = model.forward_logprobs(tokens);
    Vec b = back.forward_logprobs(tokens);
    for (int t = 0; t < a.size(); ++t) CHECK(std::memcmp(&a(t), &b(t), sizeof(double)) == 0);
}

TEST_CASE("parameter count stays desk-scale") {
    auto model = micro_model();
    CHECK(model.parameter_count() > 0);
    CHECK(model.parameter_count() < 1000000);
}

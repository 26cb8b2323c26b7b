#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "reclm/checkpoint.hpp"
#include "reclm/fusion.hpp"
#include "reclm/knn.hpp"
#include "reclm/text_encoder.hpp"

using namespace reclm;

TEST_CASE("hashed bag encoder is additive over tokens") {
    HashedBagEncoder enc(32);
    Vec joint = enc.encode("alpha beta");
    Vec parts = enc.encode("alpha") + enc.encode("beta");
    CHECK((joint - parts).norm() == 0.0);
}

TEST_CASE("identical texts produce identical embeddings") {
    HashedBagEncoder enc(16);
    CHECK(enc.encode("sports news update") == enc.encode("sports news update"));
}

TEST_CASE("different dimensions are independent encoders") {
    HashedBagEncoder a(16), b(32);
    CHECK(a.dim() == 16);
    CHECK(b.dim() == 32);
    CHECK(a.id() != b.id());
}

TEST_CASE("encode_catalog maps rows to dense item ids and rejects missing text") {
    HashedBagEncoder enc(8);
    SUBCASE("empty catalog gives a zero-row matrix") {
        ItemCatalog empty;
        auto fm = encode_catalog(enc, empty);
        CHECK(fm.features.rows() == 0);
        CHECK(fm.features.cols() == 8);
    }
    SUBCASE("rows line up with catalog order") {
        ItemCatalog cat;
        cat.items.push_back({"one", {}, {}});
        cat.items.push_back({"two", {}, {}});
        auto fm = encode_catalog(enc, cat);
        CHECK(fm.features.rows() == 2);
        CHECK((fm.features.row(0).transpose() - enc.encode("one")).norm() == 0.0);
        CHECK((fm.features.row(1).transpose() - enc.encode("two")).norm() == 0.0);
        CHECK(fm.encoder_id == enc.id());
    }
    SUBCASE("items with no text at all are reported by id") {
        ItemCatalog cat;
        cat.items.push_back({"fine", {}, {}});
        cat.items.push_back({"", {}, {}});
        try {
            encode_catalog(enc, cat);
            FAIL("expected ConfigError");
        } catch (const ConfigError& ex) {
            CHECK(std::string(ex.what()).find("1") != std::string::npos);
        }
    }
}

TEST_CASE("raw projection: identity network maps e1 to e1") {
    FusionNetworks nets = FusionNetworks::degenerate(3, 3);
    nets.t_raw = Mlp::identity(3);
    Vec e1 = Vec::Zero(3);
    e1(0) = 1.0;
    CHECK((nets.project_raw(e1) - e1).norm() == 0.0);
}

TEST_CASE("raw projection matches a hand-computed linear map") {
    FusionNetworks nets = FusionNetworks::degenerate(2, 2);
    Mat w(2, 2);
    w << 1, 0, 0, 2;
    nets.t_raw = Mlp::from_weights(w, Vec::Zero(2));
    Vec f(2);
    f << 1, 1;
    Vec out = nets.project_raw(f);
    CHECK(out(0) == doctest::Approx(1.0));
    CHECK(out(1) == doctest::Approx(2.0));
}

TEST_CASE("feature vector with a non-finite entry is rejected") {
    FusionNetworks nets = FusionNetworks::degenerate(2, 2);
    Vec f(2);
    f << std::numeric_limits<double>::quiet_NaN(), 1;
    CHECK_THROWS_AS(nets.project_raw(f), DimensionError);
}

TEST_CASE("degenerate fusion returns the base embedding exactly") {
    Rng rng(4);
    FusionNetworks nets = FusionNetworks::degenerate(4, 6);
    Mat base = Mat::Random(5, 4);
    Mat profiles = Mat::Random(5, 6);
    Mat fused = nets.fuse(base, profiles);
    CHECK((fused - base).norm() == 0.0);
}

TEST_CASE("mean fusion with identity projections averages base and profile") {
    FusionNetworks nets = FusionNetworks::degenerate(2, 2);
    nets.t_pro = Mlp::identity(2);
    Mat w(4, 2);
    w << 0.5, 0, 0, 0.5, 0.5, 0, 0, 0.5;
    nets.psi = Mlp::from_weights(w, Vec::Zero(2));
    Vec base(2), profile(2);
    base << 2, 0;
    profile << 0, 2;
    Vec fused = nets.fuse(base, profile);
    CHECK(fused(0) == doctest::Approx(1.0));
    CHECK(fused(1) == doctest::Approx(1.0));
}

TEST_CASE("fusion backward agrees with central finite differences") {
    Rng rng(9);
    FusionNetworks nets(3, 4, rng);
    Mat base = Mat::Random(4, 3);
    Mat profiles = Mat::Random(4, 4);
    Mat g_out = Mat::Random(4, 3);

    auto loss = [&]() { return (nets.fuse(base, profiles).array() * g_out.array()).sum(); };

    nets.zero_grad();
    auto [g_base, g_prof] = nets.fuse_backward(base, profiles, g_out);

    const double h = 1e-6;
    SUBCASE("input gradients") {
        for (int r = 0; r < base.rows(); ++r)
            for (int c = 0; c < base.cols(); ++c) {
                const double keep = base(r, c);
                base(r, c) = keep + h;
                const double up = loss();
                base(r, c) = keep - h;
                const double dn = loss();
                base(r, c) = keep;
                const double num = (up - dn) / (2 * h);
                CHECK(std::abs(g_base(r, c) - num) / std::max(1.0, std::abs(num)) < 1e-4);
            }
        for (int r = 0; r < profiles.rows(); ++r)
            for (int c = 0; c < profiles.cols(); ++c) {
                const double keep = profiles(r, c);
                profiles(r, c) = keep + h;
                const double up = loss();
                profiles(r, c) = keep - h;
                const double dn = loss();
                profiles(r, c) = keep;
                const double num = (up - dn) / (2 * h);
                CHECK(std::abs(g_prof(r, c) - num) / std::max(1.0, std::abs(num)) < 1e-4);
            }
    }
    SUBCASE("parameter gradients of psi and t_pro") {
        for (Param* p : nets.psi.params()) {
            for (int r = 0; r < p->w.rows(); ++r)
                for (int c = 0; c < p->w.cols(); ++c) {
                    const double keep = p->w(r, c);
                    p->w(r, c) = keep + h;
                    const double up = loss();
                    p->w(r, c) = keep - h;
                    const double dn = loss();
                    p->w(r, c) = keep;
                    const double num = (up - dn) / (2 * h);
                    CHECK(std::abs(p->g(r, c) - num) / std::max(1.0, std::abs(num)) < 1e-4);
                }
        }
        for (Param* p : nets.t_pro.params()) {
            for (int r = 0; r < p->w.rows(); ++r)
                for (int c = 0; c < p->w.cols(); ++c) {
                    const double keep = p->w(r, c);
                    p->w(r, c) = keep + h;
                    const double up = loss();
                    p->w(r, c) = keep - h;
                    const double dn = loss();
                    p->w(r, c) = keep;
                    const double num = (up - dn) / (2 * h);
                    CHECK(std::abs(p->g(r, c) - num) / std::max(1.0, std::abs(num)) < 1e-4);
                }
        }
    }
}

TEST_CASE("cosine similarity identities") {
    Vec a(2), b(2), c(2);
    a << 1, 1;
    b << 1, 0;
    c << 0, 1;
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(b, c) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.70710678).epsilon(1e-6));
}

TEST_CASE("top_k_similar: duplicated query row is the nearest neighbor") {
    Mat emb(4, 3);
    emb.setRandom();
    emb.row(2) = emb.row(0);
    auto nn = top_k_similar(emb, 0, 1);
    REQUIRE(nn.size() == 1);
    CHECK(nn[0] == 2);
}

TEST_CASE("top_k_similar matches a brute-force oracle") {
    Rng rng(21);
    Mat emb = Mat::Random(60, 5);
    for (int q = 0; q < emb.rows(); ++q) {
        auto got = top_k_similar(emb, q, 7);
        // independent oracle: stable sort all candidates by (-cos, id)
        std::vector<std::pair<double, int>> cand;
        for (int j = 0; j < emb.rows(); ++j) {
            if (j == q) continue;
            cand.push_back({cosine_similarity(emb.row(q), emb.row(j)), j});
        }
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<int> want;
        for (int i = 0; i < 7; ++i) want.push_back(cand[std::size_t(i)].second);
        CHECK(got == want);
    }
}

TEST_CASE("top_k_similar is invariant to positive row scaling") {
    Mat emb = Mat::Random(20, 4);
    auto before = top_k_similar(emb, 3, 5);
    for (int r = 0; r < emb.rows(); ++r) emb.row(r) *= double(r % 3 + 1);
    auto after = top_k_similar(emb, 3, 5);
    CHECK(before == after);
}

TEST_CASE("zero-norm rows sort below every finite similarity") {
    Mat emb = Mat::Zero(4, 2);
    emb.row(0) << 1, 0;
    emb.row(1) << 0.9, 0.1;
    emb.row(2) << 0, 0;  // zero-norm row
    emb.row(3) << -1, 0;
    auto nn = top_k_similar(emb, 0, 3);
    REQUIRE(nn.size() == 3);
    CHECK(nn[0] == 1);
    CHECK(nn[2] == 2);  // zero-norm last
}

TEST_CASE("top_k_similar rejects k >= row count") {
    Mat emb = Mat::Random(3, 2);
    CHECK_THROWS_AS(top_k_similar(emb, 0, 3), ConfigError);
}

TEST_CASE("neighbor index builds one list per row") {
    Mat emb = Mat::Random(10, 3);
    auto idx = NeighborIndex::build(emb, 4);
    REQUIRE(idx.neighbors.size() == 10);
    for (int r = 0; r < 10; ++r) CHECK(idx.neighbors[std::size_t(r)] == top_k_similar(emb, r, 4));
}

TEST_CASE("checkpoint primitives round-trip doubles bit-exactly") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "reclm_embed_ckpt.bin").string();
    Rng rng(13);
    Mat m = Mat::Random(7, 5);
    m(0, 0) = 0.1 + 0.2;  // value with a non-terminating binary expansion
    Vec v = Vec::Random(9);

    {
        auto out = ckpt::open_writer(path, {{"kind", "embed-test"}});
        ckpt::write_mat(out, m);
        ckpt::write_vec(out, v);
    }
    nlohmann::json header;
    auto in = ckpt::open_reader(path, header);
    CHECK(header.at("kind") == "embed-test");
    Mat m2 = ckpt::read_mat(in);
    Vec v2 = ckpt::read_vec(in);
    REQUIRE(m2.rows() == m.rows());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) CHECK(std::memcmp(&m(r, c), &m2(r, c), sizeof(double)) == 0);
    for (int i = 0; i < v.size(); ++i) CHECK(std::memcmp(&v(i), &v2(i), sizeof(double)) == 0);
}

TEST_CASE("mlp serialization restores spec and parameters exactly") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "reclm_embed_mlp.bin").string();
    Rng rng(5);
    Mlp mlp(MlpSpec{6, 3, {8}, Activation::Tanh}, rng);
    {
        std::ofstream out(path, std::ios::binary);
        write_mlp(out, mlp);
    }
    std::ifstream in(path, std::ios::binary);
    Mlp back = read_mlp(in);
    CHECK(back.spec() == mlp.spec());
    Mat x = Mat::Random(4, 6);
    CHECK((back.forward(x) - mlp.forward(x)).norm() == 0.0);
}

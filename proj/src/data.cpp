#include "reclm/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace reclm {

using json = nlohmann::json;

std::vector<std::vector<int>> InteractionLog::user_histories() const {
    std::vector<std::vector<std::pair<std::int64_t, int>>> tmp(n_users);
    for (const auto& e : events) tmp[e.user].push_back({e.ts, e.item});
    std::vector<std::vector<int>> out(n_users);
    for (int u = 0; u < n_users; ++u) {
        std::sort(tmp[u].begin(), tmp[u].end());
        out[u].reserve(tmp[u].size());
        for (auto& [ts, v] : tmp[u]) out[u].push_back(v);
    }
    return out;
}

std::set<int> InteractionLog::item_set() const {
    std::set<int> s;
    for (const auto& e : events) s.insert(e.item);
    return s;
}

std::string CatalogEntry::joined_text() const {
    std::string s = title;
    if (category) s += " " + *category;
    if (abstract_) s += " " + *abstract_;
    return s;
}

namespace {

struct RawEvent {
    std::int64_t user, item, ts;
};

RawEvent parse_tsv_line(const std::string& line, int lineno) {
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, '\t') || !std::getline(ss, b, '\t') || !std::getline(ss, c, '\t')) {
        throw ParseError("line " + std::to_string(lineno) + ": expected user<TAB>item<TAB>timestamp");
    }
    try {
        std::size_t pa, pb, pc;
        RawEvent e{std::stoll(a, &pa), std::stoll(b, &pb), std::stoll(c, &pc)};
        if (pa != a.size() || pb != b.size() || pc != c.size()) throw std::invalid_argument("trailing");
        if (e.user < 0 || e.item < 0) throw std::invalid_argument("negative id");
        return e;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(lineno) + ": non-integer field in '" + line + "'");
    }
}

RawEvent parse_jsonl_line(const std::string& line, int lineno) {
    try {
        json j = json::parse(line);
        RawEvent e{j.at("user").get<std::int64_t>(), j.at("item").get<std::int64_t>(),
                   j.at("ts").get<std::int64_t>()};
        if (e.user < 0 || e.item < 0) throw std::invalid_argument("negative id");
        return e;
    } catch (const json::exception& ex) {
        throw ParseError("line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const std::exception& ex) {
        throw ParseError("line " + std::to_string(lineno) + ": " + ex.what());
    }
}

}  // namespace

LoadedLog load_interactions(const std::string& path, LogFormat format) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);

    std::vector<RawEvent> raw;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        raw.push_back(format == LogFormat::Tsv ? parse_tsv_line(line, lineno)
                                               : parse_jsonl_line(line, lineno));
    }
    if (raw.empty()) throw ParseError("empty interaction file: " + path);

    // dense re-indexing by ascending original id
    std::set<std::int64_t> uids, vids;
    for (auto& e : raw) {
        uids.insert(e.user);
        vids.insert(e.item);
    }
    LoadedLog out;
    for (auto id : uids) out.remap.users.emplace(id, int(out.remap.users.size()));
    for (auto id : vids) out.remap.items.emplace(id, int(out.remap.items.size()));

    // dedup (user, item), keeping the earliest timestamp
    std::map<std::pair<int, int>, std::int64_t> earliest;
    for (auto& e : raw) {
        std::pair<int, int> key{out.remap.users.at(e.user), out.remap.items.at(e.item)};
        auto it = earliest.find(key);
        if (it == earliest.end() || e.ts < it->second) earliest[key] = e.ts;
    }
    for (auto& [key, ts] : earliest) out.log.events.push_back({key.first, key.second, ts});
    out.log.n_users = int(out.remap.users.size());
    out.log.n_items = int(out.remap.items.size());
    return out;
}

ItemCatalog load_catalog(const std::string& path, const IdRemap& remap) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    ItemCatalog catalog;
    catalog.items.resize(remap.items.size());
    std::vector<bool> seen(remap.items.size(), false);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& ex) {
            throw ParseError("line " + std::to_string(lineno) + ": " + ex.what());
        }
        auto it = remap.items.find(j.at("item").get<std::int64_t>());
        if (it == remap.items.end()) continue;  // catalog may cover more items than the log
        CatalogEntry e;
        e.title = j.at("title").get<std::string>();
        if (j.contains("category")) e.category = j["category"].get<std::string>();
        if (j.contains("abstract")) e.abstract_ = j["abstract"].get<std::string>();
        catalog.items[it->second] = std::move(e);
        seen[it->second] = true;
    }
    std::string missing;
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) missing += (missing.empty() ? "" : ",") + std::to_string(i);
    if (!missing.empty()) throw ParseError("catalog missing entries for item ids: " + missing);
    return catalog;
}

void save_interactions_tsv(const InteractionLog& log, const std::string& path) {
    std::ofstream out(path);
    for (const auto& e : log.events) out << e.user << '\t' << e.item << '\t' << e.ts << '\n';
}

void save_catalog_jsonl(const ItemCatalog& catalog, const std::string& path) {
    std::ofstream out(path);
    for (int i = 0; i < catalog.size(); ++i) {
        json j{{"item", i}, {"title", catalog.items[i].title}};
        if (catalog.items[i].category) j["category"] = *catalog.items[i].category;
        if (catalog.items[i].abstract_) j["abstract"] = *catalog.items[i].abstract_;
        out << j.dump() << '\n';
    }
}

void save_remap_jsonl(const IdRemap& remap, const std::string& path) {
    std::ofstream out(path);
    std::map<std::int64_t, int> u(remap.users.begin(), remap.users.end());
    std::map<std::int64_t, int> v(remap.items.begin(), remap.items.end());
    for (auto& [orig, dense] : u) out << json{{"kind", "user"}, {"orig", orig}, {"dense", dense}}.dump() << '\n';
    for (auto& [orig, dense] : v) out << json{{"kind", "item"}, {"orig", orig}, {"dense", dense}}.dump() << '\n';
}

DatasetSplit temporal_split(const InteractionLog& log, std::int64_t boundary) {
    std::int64_t lo = log.events.front().ts, hi = lo;
    for (const auto& e : log.events) {
        lo = std::min(lo, e.ts);
        hi = std::max(hi, e.ts);
    }
    if (boundary <= lo || boundary > hi) {
        throw ConfigError("split boundary " + std::to_string(boundary) + " outside (" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    DatasetSplit split;
    split.train.n_users = split.test.n_users = log.n_users;
    split.train.n_items = split.test.n_items = log.n_items;
    for (const auto& e : log.events) (e.ts < boundary ? split.train : split.test).events.push_back(e);

    auto train_items = split.train.item_set();
    for (const auto& e : split.test.events) {
        if (train_items.count(e.item)) split.seen_items.insert(e.item);
        else split.cold_items.insert(e.item);
    }
    return split;
}

ZeroShotView zero_shot_view(const DatasetSplit& split) {
    ZeroShotView view;
    view.full_shot_test = split.test;
    view.zero_shot_test.n_users = split.test.n_users;
    view.zero_shot_test.n_items = split.test.n_items;
    for (const auto& e : split.test.events)
        if (split.cold_items.count(e.item)) view.zero_shot_test.events.push_back(e);
    if (view.zero_shot_test.events.empty()) {
        view.empty_zero_shot_warning = true;
        std::cerr << "[reclm] warning: zero-shot test view is empty (no cold items)\n";
    }
    return view;
}

namespace {

const char* kTagWords[] = {"sports",  "finance", "music",   "travel",  "cooking", "science",
                           "movies",  "fashion", "gaming",  "health",  "politics", "art",
                           "history", "nature",  "tech",    "books",   "cars",     "space"};

std::vector<int> pick_distinct(int n, int count, Rng& rng) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> d(i, n - 1);
        std::swap(ids[i], ids[d(rng)]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.n_users < 10 || cfg.n_items < 10 || cfg.latent_dim < 2)
        throw ConfigError("synthetic world needs users >= 10, items >= 10, k >= 2");
    if (cfg.density <= 0.0 || cfg.density > 0.5)
        throw ConfigError("synthetic density must be in (0, 0.5]");
    if (cfg.n_tags < 2 || cfg.tags_per_user < 1 || cfg.tags_per_item < 1 ||
        cfg.tags_per_user > cfg.n_tags || cfg.tags_per_item > cfg.n_tags)
        throw ConfigError("invalid tag configuration");
    if (cfg.n_cold_items < 0 || cfg.n_cold_items >= cfg.n_items / 2)
        throw ConfigError("cold item block must be smaller than half the catalog");
    if (!(cfg.train_ts_begin < cfg.boundary_ts && cfg.boundary_ts < cfg.test_ts_end))
        throw ConfigError("synthetic time periods must be ordered");

    Rng rng(seed);
    SyntheticData data;
    SyntheticWorld& world = data.world;
    world.seed = seed;

    for (int t = 0; t < cfg.n_tags; ++t) {
        if (t < int(std::size(kTagWords))) world.tag_vocab.push_back(kTagWords[t]);
        else world.tag_vocab.push_back("topic" + std::to_string(t));
    }

    // nonnegative tag basis keeps every user-item affinity positive
    Mat tag_basis(cfg.n_tags, cfg.latent_dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int t = 0; t < cfg.n_tags; ++t)
        for (int k = 0; k < cfg.latent_dim; ++k) tag_basis(t, k) = std::abs(gauss(rng)) + 0.05;

    world.user_factors = Mat::Zero(cfg.n_users, cfg.latent_dim);
    world.user_tags.resize(cfg.n_users);
    for (int u = 0; u < cfg.n_users; ++u) {
        world.user_tags[u] = pick_distinct(cfg.n_tags, cfg.tags_per_user, rng);
        for (int t : world.user_tags[u]) world.user_factors.row(u) += tag_basis.row(t);
        world.user_factors.row(u) /= double(cfg.tags_per_user);
    }

    world.item_factors = Mat::Zero(cfg.n_items, cfg.latent_dim);
    world.item_tags.resize(cfg.n_items);
    for (int v = 0; v < cfg.n_items; ++v) {
        world.item_tags[v] = pick_distinct(cfg.n_tags, cfg.tags_per_item, rng);
        for (int t : world.item_tags[v]) world.item_factors.row(v) += tag_basis.row(t);
        world.item_factors.row(v) /= double(cfg.tags_per_item);
    }

    data.catalog.items.resize(cfg.n_items);
    for (int v = 0; v < cfg.n_items; ++v) {
        std::string tags;
        for (std::size_t i = 0; i < world.item_tags[v].size(); ++i)
            tags += (i ? ", " : "") + world.tag_vocab[world.item_tags[v][i]];
        CatalogEntry e;
        e.title = "Article about " + tags;
        e.category = world.tag_vocab[world.item_tags[v].front()];
        data.catalog.items[v] = std::move(e);
    }

    // cold block = the last n_cold_items ids; they appear only in the test period
    const int first_cold = cfg.n_items - cfg.n_cold_items;
    const int per_user = std::max(2, int(cfg.density * cfg.n_items));
    const int train_per_user = std::max(1, per_user * 3 / 4);

    std::uniform_int_distribution<std::int64_t> train_ts(cfg.train_ts_begin, cfg.boundary_ts - 1);
    std::uniform_int_distribution<std::int64_t> test_ts(cfg.boundary_ts, cfg.test_ts_end - 1);

    auto sample_items = [&](int u, int lo, int hi, int count, std::set<int>& taken) {
        // softmax over latent affinities, restricted to [lo, hi)
        std::vector<double> w(hi - lo);
        double mx = -1e300;
        for (int v = lo; v < hi; ++v) mx = std::max(mx, world.affinity(u, v));
        for (int v = lo; v < hi; ++v) w[v - lo] = std::exp(2.0 * (world.affinity(u, v) - mx));
        std::vector<int> picked;
        std::discrete_distribution<int> d(w.begin(), w.end());
        int attempts = 0;
        while (int(picked.size()) < count && attempts < count * 50) {
            ++attempts;
            int v = lo + d(rng);
            if (taken.insert(v).second) picked.push_back(v);
        }
        return picked;
    };

    InteractionLog& log = data.log;
    log.n_users = cfg.n_users;
    log.n_items = cfg.n_items;
    for (int u = 0; u < cfg.n_users; ++u) {
        std::set<int> taken;
        for (int v : sample_items(u, 0, first_cold, train_per_user, taken))
            log.events.push_back({u, v, train_ts(rng)});
        for (int v : sample_items(u, 0, cfg.n_items, per_user - train_per_user, taken))
            log.events.push_back({u, v, test_ts(rng)});
    }
    // make sure every cold item has at least one test interaction
    for (int v = first_cold; v < cfg.n_items; ++v) {
        bool hit = false;
        for (const auto& e : log.events)
            if (e.item == v) { hit = true; break; }
        if (!hit) {
            int best_u = 0;
            double best = -1e300;
            for (int u = 0; u < cfg.n_users; ++u)
                if (world.affinity(u, v) > best) { best = world.affinity(u, v); best_u = u; }
            log.events.push_back({best_u, v, test_ts(rng)});
        }
    }
    std::sort(log.events.begin(), log.events.end(), [](const Interaction& a, const Interaction& b) {
        return std::tie(a.user, a.item, a.ts) < std::tie(b.user, b.item, b.ts);
    });
    return data;
}

}  // namespace reclm

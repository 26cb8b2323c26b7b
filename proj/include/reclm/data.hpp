#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "reclm/core.hpp"

namespace reclm {

struct Interaction {
    int user = 0;
    int item = 0;
    std::int64_t ts = 0;
    bool operator==(const Interaction&) const = default;
};

struct InteractionLog {
    std::vector<Interaction> events;
    int n_users = 0;
    int n_items = 0;

    std::vector<std::vector<int>> user_histories() const;  // items per user, ordered by ts then item id
    std::set<int> item_set() const;
};

// original id -> dense id, kept so external files can be joined back.
struct IdRemap {
    std::unordered_map<std::int64_t, int> users;
    std::unordered_map<std::int64_t, int> items;
};

struct CatalogEntry {
    std::string title;
    std::optional<std::string> category;
    std::optional<std::string> abstract_;

    std::string joined_text() const;
};

struct ItemCatalog {
    std::vector<CatalogEntry> items;  // indexed by dense item id

    int size() const { return int(items.size()); }
};

struct DatasetSplit {
    InteractionLog train;
    InteractionLog test;
    std::set<int> seen_items;  // test items also present in train
    std::set<int> cold_items;  // test items absent from train
};

struct SyntheticConfig {
    int n_users = 100;
    int n_items = 60;
    int latent_dim = 4;
    int n_tags = 8;
    int tags_per_user = 2;
    int tags_per_item = 2;
    double density = 0.08;  // expected fraction of the item universe each user touches
    int n_cold_items = 6;
    std::int64_t train_ts_begin = 0;
    std::int64_t boundary_ts = 86400;  // train strictly before, test at or after
    std::int64_t test_ts_end = 172800;
};

struct SyntheticWorld {
    Mat user_factors;  // users x k, nonnegative so every sampled pair has positive affinity
    Mat item_factors;  // items x k
    std::vector<std::string> tag_vocab;
    std::vector<std::vector<int>> user_tags;
    std::vector<std::vector<int>> item_tags;
    std::uint64_t seed = 0;

    double affinity(int u, int v) const { return user_factors.row(u).dot(item_factors.row(v)); }
};

enum class LogFormat { Tsv, Jsonl };

struct LoadedLog {
    InteractionLog log;
    IdRemap remap;
};

LoadedLog load_interactions(const std::string& path, LogFormat format);
ItemCatalog load_catalog(const std::string& path, const IdRemap& remap);
void save_interactions_tsv(const InteractionLog& log, const std::string& path);
void save_catalog_jsonl(const ItemCatalog& catalog, const std::string& path);
void save_remap_jsonl(const IdRemap& remap, const std::string& path);

DatasetSplit temporal_split(const InteractionLog& log, std::int64_t boundary);

struct ZeroShotView {
    InteractionLog full_shot_test;
    InteractionLog zero_shot_test;
    bool empty_zero_shot_warning = false;
};
ZeroShotView zero_shot_view(const DatasetSplit& split);

struct SyntheticData {
    InteractionLog log;
    ItemCatalog catalog;
    SyntheticWorld world;
};
SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace reclm

#include "reclm/profiles.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace reclm {

using json = nlohmann::json;

const ProfileStore::Version& ProfileStore::at(int version) const {
    if (version < 0 || version >= int(versions_.size()))
        throw ConfigError("unknown profile store version " + std::to_string(version));
    return versions_[std::size_t(version)];
}

ProfileStore::Version& ProfileStore::mut(int version) {
    if (version < 0 || version >= int(versions_.size()))
        throw ConfigError("unknown profile store version " + std::to_string(version));
    Version& v = versions_[std::size_t(version)];
    if (v.sealed) throw ConfigError("version " + std::to_string(version) + " is sealed");
    return v;
}

int ProfileStore::create_version() {
    versions_.emplace_back();
    return int(versions_.size()) - 1;
}

void ProfileStore::put(int version, Profile p) {
    mut(version).profiles[{int(p.kind), p.subject_id}] = std::move(p);
}

void ProfileStore::seal(int version, bool force) {
    Version& v = versions_[std::size_t(version)];
    if (!v.failure_records.empty() && !force)
        throw ConfigError("version has " + std::to_string(v.failure_records.size()) +
                          " failures; pass force to seal anyway");
    v.sealed = true;
    active_ = version;
}

bool ProfileStore::sealed(int version) const { return at(version).sealed; }

void ProfileStore::set_active(int version) {
    if (!at(version).sealed) throw ConfigError("cannot activate an unsealed version");
    active_ = version;
}

const Profile& ProfileStore::get(int version, SubjectKind kind, int id) const {
    const auto& v = at(version);
    auto it = v.profiles.find({int(kind), id});
    if (it == v.profiles.end())
        throw MissingProfileError("no profile for " +
                                  std::string(kind == SubjectKind::User ? "user " : "item ") +
                                  std::to_string(id) + " in version " + std::to_string(version));
    return it->second;
}

bool ProfileStore::has(int version, SubjectKind kind, int id) const {
    return at(version).profiles.count({int(kind), id}) > 0;
}

std::vector<const Profile*> ProfileStore::all(int version) const {
    std::vector<const Profile*> out;
    for (const auto& [key, p] : at(version).profiles) out.push_back(&p);
    return out;
}

void ProfileStore::record_failure(int version, SubjectKind kind, int id, const std::string& why) {
    mut(version).failure_records.push_back(
        std::string(kind == SubjectKind::User ? "user " : "item ") + std::to_string(id) + ": " + why);
}

const std::vector<std::string>& ProfileStore::failures(int version) const {
    return at(version).failure_records;
}

void ProfileStore::save_version(int version, const std::string& path) const {
    const auto& v = at(version);
    std::ofstream out(path);
    for (const auto& [key, p] : v.profiles) {
        json j{{"kind", p.kind == SubjectKind::User ? "user" : "item"},
               {"id", p.subject_id},
               {"text", p.text},
               {"provider", p.provider_id},
               {"mode", p.mode}};
        if (p.embedding.size() > 0)
            j["embedding"] = std::vector<double>(p.embedding.data(),
                                                 p.embedding.data() + p.embedding.size());
        out << j.dump() << '\n';
    }
}

int ProfileStore::load_version(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    int version = create_version();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Profile p;
        p.kind = j.at("kind") == "user" ? SubjectKind::User : SubjectKind::Item;
        p.subject_id = j.at("id");
        p.text = j.at("text");
        p.provider_id = j.value("provider", "");
        p.mode = j.value("mode", "");
        if (j.contains("embedding")) {
            auto e = j["embedding"].get<std::vector<double>>();
            p.embedding = Eigen::Map<Vec>(e.data(), Eigen::Index(e.size()));
        }
        put(version, std::move(p));
    }
    seal(version);
    return version;
}

std::string OracleProvider::generate(SubjectKind kind, int subject_id, const std::string&,
                                     std::uint64_t) {
    const auto& tags = (kind == SubjectKind::User) ? world_.user_tags : world_.item_tags;
    if (subject_id < 0 || subject_id >= int(tags.size()))
        throw ProviderError("oracle: unknown subject id " + std::to_string(subject_id));
    std::string names;
    for (std::size_t i = 0; i < tags[std::size_t(subject_id)].size(); ++i)
        names += (i ? ", " : "") + world_.tag_vocab.at(std::size_t(tags[std::size_t(subject_id)][i]));
    if (kind == SubjectKind::User)
        return "This user is mainly interested in " + names + " content.";
    return "This item appeals to readers interested in " + names + ".";
}

std::string PolicyProvider::generate(SubjectKind, int subject_id, const std::string& prompt,
                                     std::uint64_t seed) {
    auto gen = model_.generate(prompt, max_tokens_, temperature_,
                               sub_rng(seed, std::uint64_t(subject_id))(), temperature_ <= 0.0);
    if (gen.text.empty()) return "(empty profile)";
    return gen.text;
}

ExternalApiProvider::Config ExternalApiProvider::Config::from_env() {
    Config cfg;
    if (const char* v = std::getenv("RECLM_API_HOST")) cfg.endpoint_host = v;
    if (const char* v = std::getenv("RECLM_API_PORT")) cfg.endpoint_port = std::atoi(v);
    if (const char* v = std::getenv("RECLM_API_PATH")) cfg.path = v;
    if (const char* v = std::getenv("RECLM_API_AUTH")) cfg.auth_header = v;
    if (const char* v = std::getenv("RECLM_API_TRANSCRIPT")) cfg.transcript_path = v;
    return cfg;
}

std::string ExternalApiProvider::generate(SubjectKind, int subject_id, const std::string& prompt,
                                          std::uint64_t) {
    if (cfg_.endpoint_host.empty()) throw ProviderError("external provider has no endpoint configured");
    httplib::Client client(cfg_.endpoint_host, cfg_.endpoint_port);
    httplib::Headers headers;
    if (!cfg_.auth_header.empty()) headers.emplace("Authorization", cfg_.auth_header);
    json body{{"prompt", prompt}, {"max_tokens", cfg_.max_tokens}, {"temperature", cfg_.temperature}};

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
        if (res && res->status == 200) {
            std::string text;
            try {
                text = json::parse(res->body).at("text").get<std::string>();
            } catch (const json::exception& ex) {
                throw ProviderError(std::string("malformed provider response: ") + ex.what());
            }
            if (!cfg_.transcript_path.empty()) {
                std::ofstream t(cfg_.transcript_path, std::ios::app);
                t << json{{"subject", subject_id}, {"request", body}, {"response", res->body}}.dump()
                  << '\n';
            }
            return text;
        }
        last_error = res ? ("http " + std::to_string(res->status)) : "connection failed";
    }
    throw ProviderError("external provider failed after retries: " + last_error);
}

int generate_user_profiles(ProfileStore& store, ProfileProvider& provider, const UserProfileJob& job,
                           std::uint64_t seed) {
    if (!job.neighbor_index || !job.histories || !job.catalog || !job.templates)
        throw ConfigError("user profile job missing inputs");
    int version = store.create_version();
    for (int u : job.users) {
        std::vector<int> neighbors = job.neighbor_index->neighbors.at(std::size_t(u));
        if (int(neighbors.size()) > job.neighbors_per_prompt)
            neighbors.resize(std::size_t(job.neighbors_per_prompt));
        try {
            std::string prompt = build_inference_prompt(u, neighbors, *job.histories, *job.catalog,
                                                        *job.templates);
            Profile p;
            p.kind = SubjectKind::User;
            p.subject_id = u;
            p.text = provider.generate(SubjectKind::User, u, prompt, seed);
            p.provider_id = provider.id();
            store.put(version, std::move(p));
        } catch (const std::exception& ex) {
            store.record_failure(version, SubjectKind::User, u, ex.what());
        }
    }
    store.seal(version, job.force_seal);
    return version;
}

int derive_item_profiles(ProfileStore& store, int user_version, ProfileProvider& provider,
                         const ItemProfileJob& job, std::uint64_t seed) {
    if (!job.train || !job.similar_items || !job.catalog || !job.templates)
        throw ConfigError("item profile job missing inputs");
    if (!store.sealed(user_version)) throw ConfigError("user profiles must be sealed first");

    const int n_items = job.train->n_items;
    // interaction counts per (item, user)
    std::vector<std::map<int, int>> interactors(static_cast<std::size_t>(n_items));
    for (const auto& e : job.train->events) ++interactors[std::size_t(e.item)][e.user];

    int version = store.create_version();
    // carry the user profiles forward so the version is self-contained
    for (const auto* p : store.all(user_version)) store.put(version, *p);

    // pass 1: warm items, so cold items can draw on their profiles regardless of id order
    for (int v = 0; v < n_items; ++v) {
        if (interactors[std::size_t(v)].empty()) continue;
        try {
            Profile p;
            p.kind = SubjectKind::Item;
            p.subject_id = v;
            p.provider_id = provider.id();
            // top interactors by count, ties by ascending user id
            std::vector<std::pair<int, int>> ranked;  // (-count, user)
            for (auto& [u, c] : interactors[std::size_t(v)]) ranked.push_back({-c, u});
            std::sort(ranked.begin(), ranked.end());
            std::vector<int> src_ids;
            std::vector<std::string> src_profiles;
            for (auto& [negc, u] : ranked) {
                if (int(src_ids.size()) >= job.top_interactors) break;
                if (!store.has(user_version, SubjectKind::User, u)) continue;
                src_ids.push_back(u);
                src_profiles.push_back(store.get(user_version, SubjectKind::User, u).text);
            }
            if (src_profiles.empty()) throw UnservableItemError("interactors lack profiles");
            std::string prompt = build_item_profile_prompt(v, ItemProfileMode::FromInteractors,
                                                           *job.catalog, src_ids, src_profiles,
                                                           *job.templates);
            p.text = provider.generate(SubjectKind::Item, v, prompt, seed);
            p.mode = "from_interactors";
            store.put(version, std::move(p));
        } catch (const std::exception& ex) {
            store.record_failure(version, SubjectKind::Item, v, ex.what());
        }
    }

    // pass 2: cold items, built from profiled similar warm items
    for (int v = 0; v < n_items; ++v) {
        if (!interactors[std::size_t(v)].empty()) continue;
        try {
            Profile p;
            p.kind = SubjectKind::Item;
            p.subject_id = v;
            p.provider_id = provider.id();
            std::vector<int> src_ids;
            std::vector<std::string> src_profiles;
            for (int s : job.similar_items->neighbors.at(std::size_t(v))) {
                if (int(src_ids.size()) >= job.similar_k) break;
                if (interactors[std::size_t(s)].empty()) continue;  // need warm sources
                if (!store.has(version, SubjectKind::Item, s)) continue;
                src_ids.push_back(s);
                src_profiles.push_back(store.get(version, SubjectKind::Item, s).text);
            }
            if (src_ids.empty())
                throw UnservableItemError("no profiled similar item for cold item " +
                                          std::to_string(v));
            std::string prompt = build_item_profile_prompt(v, ItemProfileMode::FromSimilarItems,
                                                           *job.catalog, src_ids, src_profiles,
                                                           *job.templates);
            p.text = provider.generate(SubjectKind::Item, v, prompt, seed);
            p.mode = "from_similar_items";
            store.put(version, std::move(p));
        } catch (const std::exception& ex) {
            store.record_failure(version, SubjectKind::Item, v, ex.what());
        }
    }
    store.seal(version, true);
    return version;
}

void ProfileStore::attach_embedding(int version, SubjectKind kind, int id, Vec embedding) {
    Version& v = versions_.at(std::size_t(version));
    auto it = v.profiles.find({int(kind), id});
    if (it == v.profiles.end()) throw MissingProfileError("attach_embedding: missing profile");
    it->second.embedding = std::move(embedding);
}

void embed_profiles(ProfileStore& store, int version, const TextEncoder& encoder) {
    // idempotent: text is the source of truth and the encoder is deterministic
    for (const auto* p : store.all(version))
        store.attach_embedding(version, p->kind, p->subject_id, encoder.encode(p->text));
}

ProfileEmbeddingInput profile_embedding_matrices(const ProfileStore& store, int version, int n_users,
                                                 int n_items, int d_t) {
    ProfileEmbeddingInput out;
    out.user = Mat::Zero(n_users, d_t);
    out.item = Mat::Zero(n_items, d_t);
    for (int u = 0; u < n_users; ++u) {
        const auto& p = store.get(version, SubjectKind::User, u);
        if (p.embedding.size() != d_t) throw DimensionError("user profile embedding dim mismatch");
        out.user.row(u) = p.embedding.transpose();
    }
    for (int v = 0; v < n_items; ++v) {
        const auto& p = store.get(version, SubjectKind::Item, v);
        if (p.embedding.size() != d_t) throw DimensionError("item profile embedding dim mismatch");
        out.item.row(v) = p.embedding.transpose();
    }
    return out;
}

}  // namespace reclm

#pragma once

#include <map>
#include <optional>

#include "reclm/backbones.hpp"
#include "reclm/instruction.hpp"
#include "reclm/policy_lm.hpp"
#include "reclm/provider.hpp"
#include "reclm/text_encoder.hpp"

namespace reclm {

struct Profile {
    SubjectKind kind = SubjectKind::User;
    int subject_id = -1;
    std::string text;
    Vec embedding;  // empty until embed_profiles runs
    std::string provider_id;
    std::string mode;  // item profiles: "from_interactors" | "from_similar_items"
};

// Versioned store; a sealed version never changes.
class ProfileStore {
  public:
    int create_version();          // returns the new version tag
    void put(int version, Profile p);
    void seal(int version, bool force = false);
    bool sealed(int version) const;
    int active_version() const { return active_; }
    void set_active(int version);

    const Profile& get(int version, SubjectKind kind, int id) const;
    bool has(int version, SubjectKind kind, int id) const;
    std::vector<const Profile*> all(int version) const;

    // Embeddings are a deterministic function of sealed text, so attaching them
    // is permitted post-seal and is idempotent.
    void attach_embedding(int version, SubjectKind kind, int id, Vec embedding);

    void record_failure(int version, SubjectKind kind, int id, const std::string& why);
    const std::vector<std::string>& failures(int version) const;

    void save_version(int version, const std::string& path) const;  // JSONL
    int load_version(const std::string& path);  // returns the created version

  private:
    struct Version {
        std::map<std::pair<int, int>, Profile> profiles;  // (kind, id)
        std::vector<std::string> failure_records;
        bool sealed = false;
    };
    std::vector<Version> versions_;
    int active_ = -1;

    const Version& at(int version) const;
    Version& mut(int version);
};

// Teacher stand-in: emits profile text straight from the synthetic world's tags.
class OracleProvider : public ProfileProvider {
  public:
    OracleProvider(const SyntheticWorld& world) : world_(world) {}
    std::string generate(SubjectKind kind, int subject_id, const std::string& prompt,
                         std::uint64_t seed) override;
    std::string id() const override { return "oracle-v1"; }

  private:
    const SyntheticWorld& world_;
};

// Generates with a policy checkpoint on the given prompt (greedy by default).
class PolicyProvider : public ProfileProvider {
  public:
    PolicyProvider(const PolicyModel& model, int max_tokens = 24, double temperature = 0.0)
        : model_(model), max_tokens_(max_tokens), temperature_(temperature) {}
    std::string generate(SubjectKind kind, int subject_id, const std::string& prompt,
                         std::uint64_t seed) override;
    std::string id() const override { return "policy:" + model_.descriptor(); }

  private:
    const PolicyModel& model_;
    int max_tokens_;
    double temperature_;
};

// Remote LLM endpoint speaking {prompt, max_tokens, temperature} -> {text}.
// Requests and responses are appended to a transcript file for offline replay.
class ExternalApiProvider : public ProfileProvider {
  public:
    struct Config {
        std::string endpoint_host;  // e.g. "profile-service.internal"
        int endpoint_port = 80;
        std::string path = "/v1/generate";
        std::string auth_header;  // sent as Authorization when non-empty
        int max_tokens = 128;
        double temperature = 0.0;
        int max_retries = 3;
        std::string transcript_path;

        static Config from_env();  // RECLM_API_HOST / _PORT / _PATH / _AUTH / _TRANSCRIPT
    };

    explicit ExternalApiProvider(Config cfg) : cfg_(std::move(cfg)) {}
    std::string generate(SubjectKind kind, int subject_id, const std::string& prompt,
                         std::uint64_t seed) override;
    std::string id() const override { return "external-api"; }
    bool deterministic() const override { return false; }

  private:
    Config cfg_;
};

struct UserProfileJob {
    std::vector<int> users;
    const NeighborIndex* neighbor_index = nullptr;
    const std::vector<std::vector<int>>* histories = nullptr;
    const ItemCatalog* catalog = nullptr;
    const TemplateRegistry* templates = nullptr;
    int neighbors_per_prompt = 3;
    bool force_seal = false;
};

int generate_user_profiles(ProfileStore& store, ProfileProvider& provider, const UserProfileJob& job,
                           std::uint64_t seed);

struct ItemProfileJob {
    const InteractionLog* train = nullptr;
    const NeighborIndex* similar_items = nullptr;  // over item embeddings
    const ItemCatalog* catalog = nullptr;
    const TemplateRegistry* templates = nullptr;
    int top_interactors = 5;
    int similar_k = 3;
};

// Adds item profiles to a new version built on top of a sealed user version.
int derive_item_profiles(ProfileStore& store, int user_version, ProfileProvider& provider,
                         const ItemProfileJob& job, std::uint64_t seed);

void embed_profiles(ProfileStore& store, int version, const TextEncoder& encoder);

// Assembles p_u / p_v matrices for the fusion path; missing ids raise.
ProfileEmbeddingInput profile_embedding_matrices(const ProfileStore& store, int version,
                                                 int n_users, int n_items, int d_t);

}  // namespace reclm

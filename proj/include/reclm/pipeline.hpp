#pragma once

#include <nlohmann/json.hpp>

#include "reclm/eval.hpp"
#include "reclm/ppo.hpp"
#include "reclm/profiles.hpp"

namespace reclm {

struct MissingDependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    struct Dataset {
        bool synthetic = true;
        SyntheticConfig synth;
        std::string interactions_path;  // real-data mode
        std::string catalog_path;
        std::string format = "tsv";  // "tsv" | "jsonl"
        std::int64_t boundary_ts = 86400;
    };
    struct BackboneSection {
        std::string name = "lightgcn";
        int d = 32;
        int layers = 2;
    };
    struct EncoderSection {
        int d_t = 64;
    };
    struct InstructionSection {
        int k_neighbors = 3;
        int corpus_examples = 200;
        int preference_pairs = 120;
    };
    struct PolicySection {
        int embed_dim = 32;
        int hidden_dim = 64;
        int context_len = 512;
        int epochs = 5;
        int batch_size = 8;
        double learning_rate = 1e-2;
        int max_vocab = 20000;
        int profile_max_tokens = 24;
    };
    struct EvalSection {
        std::vector<int> ks{20, 40};
        int timing_epochs = 5;
    };

    Dataset dataset;
    BackboneSection backbone;
    EncoderSection encoder;
    TrainConfig train_cf;
    InstructionSection instruction;
    PolicySection policy;
    RewardModel::TrainConfig reward;
    PpoConfig ppo;
    EvalSection eval;
    std::uint64_t seed = 0;
    std::string output_dir = "run";

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;  // fully resolved, including defaults
    void validate() const;
};

struct StageManifest {
    std::string stage;
    std::map<std::string, std::string> input_hashes;   // artifact path -> hex hash
    std::map<std::string, std::string> output_hashes;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::string tool_version;
};

class Pipeline {
  public:
    explicit Pipeline(ExperimentConfig cfg);

    static const std::vector<std::string>& stage_names();

    // Runs one stage; throws MissingDependencyError naming the producer when an
    // input artifact is absent. Dry runs print the plan without side effects.
    void run_stage(const std::string& name, bool dry_run = false);
    void run_all(bool dry_run = false);

    bool stage_complete(const std::string& name) const;
    std::string artifact(const std::string& rel) const;  // absolute path in the run dir

  private:
    ExperimentConfig cfg_;

    struct StageDef {
        std::string name;
        std::vector<std::string> inputs;   // artifact paths relative to output_dir
        std::vector<std::string> outputs;
        void (Pipeline::*run)();
    };
    std::vector<StageDef> defs_;
    const std::vector<StageDef>& stages() const { return defs_; }
    const StageDef& stage(const std::string& name) const;
    std::string producer_of(const std::string& rel) const;

    void write_manifest(const StageDef& def, double wall_seconds) const;
    bool manifest_matches(const StageDef& def) const;

    void stage_prepare_data();
    void stage_train_cf();
    void stage_mine_neighbors();
    void stage_build_instructions();
    void stage_train_policy();
    void stage_train_reward();
    void stage_ppo_refine();
    void stage_generate_profiles();
    void stage_train_augmented();
    void stage_evaluate();
    void stage_ablate();
    void stage_timing();

    // shared loaders
    struct LoadedData {
        DatasetSplit split;
        ItemCatalog catalog;
        SyntheticWorld world;  // empty for real datasets
        bool has_world = false;
    };
    LoadedData load_data() const;
    TextFeatureMatrix load_features(const ItemCatalog& catalog) const;
    std::vector<std::string> inference_prompt_pool(const LoadedData& data,
                                                   const NeighborIndex& index,
                                                   std::vector<int>* users_out = nullptr) const;
    NeighborIndex load_user_neighbors() const;
    NeighborIndex load_item_neighbors() const;
    int generate_profiles_with(const PolicyModel& policy, const LoadedData& data,
                               ProfileStore& store) const;
    RecommenderModel train_augmented_with(const ProfileEmbeddingInput& profiles,
                                          const LoadedData& data, bool augment_users,
                                          bool augment_items) const;
};

void save_neighbor_index(const NeighborIndex& index, const std::string& path);
NeighborIndex load_neighbor_index(const std::string& path);

nlohmann::json world_to_json(const SyntheticWorld& world);
SyntheticWorld world_from_json(const nlohmann::json& j);

std::string hash_hex(std::uint64_t h);

}  // namespace reclm

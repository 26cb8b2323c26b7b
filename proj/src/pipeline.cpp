#include "reclm/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "reclm/checkpoint.hpp"

namespace fs = std::filesystem;

namespace reclm {

using json = nlohmann::json;

constexpr const char* kToolVersion = "recslm-0.1.0";

std::string hash_hex(std::uint64_t h) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("unknown key '" + key + "' at " + where);
    }
}

std::uint64_t stage_seed(std::uint64_t global, const std::string& stage) {
    return sub_rng(global, fnv1a(stage))();
}

void ensure_parent(const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_keys(j, "<root>", {"dataset", "backbone", "encoder", "train_cf", "instruction", "policy",
                             "reward", "ppo", "eval", "seed", "output_dir"});
    ExperimentConfig c;
    c.seed = j.value("seed", std::uint64_t(0));
    c.output_dir = j.value("output_dir", std::string("run"));

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        check_keys(d, "dataset", {"synthetic", "interactions_path", "catalog_path", "format",
                                  "boundary_ts"});
        c.dataset.synthetic = d.contains("synthetic");
        if (c.dataset.synthetic) {
            const json& s = d["synthetic"];
            check_keys(s, "dataset.synthetic",
                       {"n_users", "n_items", "latent_dim", "n_tags", "tags_per_user",
                        "tags_per_item", "density", "n_cold_items", "train_ts_begin", "boundary_ts",
                        "test_ts_end"});
            auto& sc = c.dataset.synth;
            sc.n_users = s.value("n_users", sc.n_users);
            sc.n_items = s.value("n_items", sc.n_items);
            sc.latent_dim = s.value("latent_dim", sc.latent_dim);
            sc.n_tags = s.value("n_tags", sc.n_tags);
            sc.tags_per_user = s.value("tags_per_user", sc.tags_per_user);
            sc.tags_per_item = s.value("tags_per_item", sc.tags_per_item);
            sc.density = s.value("density", sc.density);
            sc.n_cold_items = s.value("n_cold_items", sc.n_cold_items);
            sc.train_ts_begin = s.value("train_ts_begin", sc.train_ts_begin);
            sc.boundary_ts = s.value("boundary_ts", sc.boundary_ts);
            sc.test_ts_end = s.value("test_ts_end", sc.test_ts_end);
        } else {
            c.dataset.interactions_path = d.value("interactions_path", std::string());
            c.dataset.catalog_path = d.value("catalog_path", std::string());
            c.dataset.format = d.value("format", std::string("tsv"));
            c.dataset.boundary_ts = d.value("boundary_ts", c.dataset.boundary_ts);
        }
    }
    if (j.contains("backbone")) {
        const json& b = j["backbone"];
        check_keys(b, "backbone", {"name", "d", "layers"});
        c.backbone.name = b.value("name", c.backbone.name);
        c.backbone.d = b.value("d", c.backbone.d);
        c.backbone.layers = b.value("layers", c.backbone.layers);
    }
    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        check_keys(e, "encoder", {"d_t"});
        c.encoder.d_t = e.value("d_t", c.encoder.d_t);
    }
    if (j.contains("train_cf")) {
        const json& t = j["train_cf"];
        check_keys(t, "train_cf", {"batch_size", "learning_rate", "l2", "epochs", "ssl_weight",
                                   "edge_dropout", "noise_eps", "temperature"});
        c.train_cf.batch_size = t.value("batch_size", c.train_cf.batch_size);
        c.train_cf.learning_rate = t.value("learning_rate", c.train_cf.learning_rate);
        c.train_cf.l2 = t.value("l2", c.train_cf.l2);
        c.train_cf.epochs = t.value("epochs", c.train_cf.epochs);
        c.train_cf.ssl_weight = t.value("ssl_weight", c.train_cf.ssl_weight);
        c.train_cf.edge_dropout = t.value("edge_dropout", c.train_cf.edge_dropout);
        c.train_cf.noise_eps = t.value("noise_eps", c.train_cf.noise_eps);
        c.train_cf.temperature = t.value("temperature", c.train_cf.temperature);
    }
    if (j.contains("instruction")) {
        const json& i = j["instruction"];
        check_keys(i, "instruction", {"k_neighbors", "corpus_examples", "preference_pairs"});
        c.instruction.k_neighbors = i.value("k_neighbors", c.instruction.k_neighbors);
        c.instruction.corpus_examples = i.value("corpus_examples", c.instruction.corpus_examples);
        c.instruction.preference_pairs = i.value("preference_pairs", c.instruction.preference_pairs);
    }
    if (j.contains("policy")) {
        const json& p = j["policy"];
        check_keys(p, "policy", {"embed_dim", "hidden_dim", "context_len", "epochs", "batch_size",
                                 "learning_rate", "max_vocab", "profile_max_tokens"});
        c.policy.embed_dim = p.value("embed_dim", c.policy.embed_dim);
        c.policy.hidden_dim = p.value("hidden_dim", c.policy.hidden_dim);
        c.policy.context_len = p.value("context_len", c.policy.context_len);
        c.policy.epochs = p.value("epochs", c.policy.epochs);
        c.policy.batch_size = p.value("batch_size", c.policy.batch_size);
        c.policy.learning_rate = p.value("learning_rate", c.policy.learning_rate);
        c.policy.max_vocab = p.value("max_vocab", c.policy.max_vocab);
        c.policy.profile_max_tokens = p.value("profile_max_tokens", c.policy.profile_max_tokens);
    }
    if (j.contains("reward")) {
        const json& r = j["reward"];
        check_keys(r, "reward", {"epochs", "batch_size", "learning_rate", "holdout_fraction"});
        c.reward.epochs = r.value("epochs", c.reward.epochs);
        c.reward.batch_size = r.value("batch_size", c.reward.batch_size);
        c.reward.learning_rate = r.value("learning_rate", c.reward.learning_rate);
        c.reward.holdout_fraction = r.value("holdout_fraction", c.reward.holdout_fraction);
    }
    if (j.contains("ppo")) {
        const json& p = j["ppo"];
        check_keys(p, "ppo", {"beta", "clip", "ppo_epochs", "rollouts_per_iter", "iterations",
                              "max_tokens", "temperature", "learning_rate"});
        c.ppo.beta = p.value("beta", c.ppo.beta);
        c.ppo.clip = p.value("clip", c.ppo.clip);
        c.ppo.ppo_epochs = p.value("ppo_epochs", c.ppo.ppo_epochs);
        c.ppo.rollouts_per_iter = p.value("rollouts_per_iter", c.ppo.rollouts_per_iter);
        c.ppo.iterations = p.value("iterations", c.ppo.iterations);
        c.ppo.max_tokens = p.value("max_tokens", c.ppo.max_tokens);
        c.ppo.temperature = p.value("temperature", c.ppo.temperature);
        c.ppo.learning_rate = p.value("learning_rate", c.ppo.learning_rate);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "eval", {"ks", "timing_epochs"});
        if (e.contains("ks")) c.eval.ks = e["ks"].get<std::vector<int>>();
        c.eval.timing_epochs = e.value("timing_epochs", c.eval.timing_epochs);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("config parse error: ") + ex.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json d;
    if (dataset.synthetic) {
        d["synthetic"] = {{"n_users", dataset.synth.n_users},
                          {"n_items", dataset.synth.n_items},
                          {"latent_dim", dataset.synth.latent_dim},
                          {"n_tags", dataset.synth.n_tags},
                          {"tags_per_user", dataset.synth.tags_per_user},
                          {"tags_per_item", dataset.synth.tags_per_item},
                          {"density", dataset.synth.density},
                          {"n_cold_items", dataset.synth.n_cold_items},
                          {"train_ts_begin", dataset.synth.train_ts_begin},
                          {"boundary_ts", dataset.synth.boundary_ts},
                          {"test_ts_end", dataset.synth.test_ts_end}};
    } else {
        d = {{"interactions_path", dataset.interactions_path},
             {"catalog_path", dataset.catalog_path},
             {"format", dataset.format},
             {"boundary_ts", dataset.boundary_ts}};
    }
    return json{
        {"dataset", d},
        {"backbone", {{"name", backbone.name}, {"d", backbone.d}, {"layers", backbone.layers}}},
        {"encoder", {{"d_t", encoder.d_t}}},
        {"train_cf",
         {{"batch_size", train_cf.batch_size},
          {"learning_rate", train_cf.learning_rate},
          {"l2", train_cf.l2},
          {"epochs", train_cf.epochs},
          {"ssl_weight", train_cf.ssl_weight},
          {"edge_dropout", train_cf.edge_dropout},
          {"noise_eps", train_cf.noise_eps},
          {"temperature", train_cf.temperature}}},
        {"instruction",
         {{"k_neighbors", instruction.k_neighbors},
          {"corpus_examples", instruction.corpus_examples},
          {"preference_pairs", instruction.preference_pairs}}},
        {"policy",
         {{"embed_dim", policy.embed_dim},
          {"hidden_dim", policy.hidden_dim},
          {"context_len", policy.context_len},
          {"epochs", policy.epochs},
          {"batch_size", policy.batch_size},
          {"learning_rate", policy.learning_rate},
          {"max_vocab", policy.max_vocab},
          {"profile_max_tokens", policy.profile_max_tokens}}},
        {"reward",
         {{"epochs", reward.epochs},
          {"batch_size", reward.batch_size},
          {"learning_rate", reward.learning_rate},
          {"holdout_fraction", reward.holdout_fraction}}},
        {"ppo",
         {{"beta", ppo.beta},
          {"clip", ppo.clip},
          {"ppo_epochs", ppo.ppo_epochs},
          {"rollouts_per_iter", ppo.rollouts_per_iter},
          {"iterations", ppo.iterations},
          {"max_tokens", ppo.max_tokens},
          {"temperature", ppo.temperature},
          {"learning_rate", ppo.learning_rate}}},
        {"eval", {{"ks", eval.ks}, {"timing_epochs", eval.timing_epochs}}},
        {"seed", seed},
        {"output_dir", output_dir}};
}

void ExperimentConfig::validate() const {
    backbone_from_string(backbone.name);  // throws on unknown
    if (backbone.d < 1 || backbone.layers < 0) throw ConfigError("invalid backbone dimensions");
    if (encoder.d_t < 1) throw ConfigError("encoder.d_t must be positive");
    train_cf.validate();
    ppo.validate();
    if (instruction.k_neighbors < 1) throw ConfigError("instruction.k_neighbors must be >= 1");
    if (instruction.corpus_examples < 1) throw ConfigError("instruction.corpus_examples must be >= 1");
    if (instruction.preference_pairs < 2) throw ConfigError("instruction.preference_pairs must be >= 2");
    if (policy.embed_dim < 1 || policy.hidden_dim < 1 || policy.context_len < 8 ||
        policy.epochs < 0 || policy.batch_size < 1 || policy.learning_rate <= 0 ||
        policy.max_vocab < 1 || policy.profile_max_tokens < 1)
        throw ConfigError("invalid policy section");
    if (reward.epochs < 0 || reward.batch_size < 1 || reward.learning_rate <= 0 ||
        reward.holdout_fraction <= 0 || reward.holdout_fraction >= 1)
        throw ConfigError("invalid reward section");
    if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
    for (int k : eval.ks)
        if (k < 1) throw ConfigError("eval.ks entries must be positive");
    if (eval.timing_epochs < 1) throw ConfigError("eval.timing_epochs must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (!dataset.synthetic && (dataset.interactions_path.empty() || dataset.catalog_path.empty()))
        throw ConfigError("real dataset mode needs interactions_path and catalog_path");
    if (!dataset.synthetic && dataset.format != "tsv" && dataset.format != "jsonl")
        throw ConfigError("dataset.format must be 'tsv' or 'jsonl'");
}

void save_neighbor_index(const NeighborIndex& index, const std::string& path) {
    ensure_parent(path);
    std::ofstream out(path);
    out << json{{"neighbors", index.neighbors}}.dump() << '\n';
}

NeighborIndex load_neighbor_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    NeighborIndex idx;
    idx.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
    return idx;
}

json world_to_json(const SyntheticWorld& world) {
    std::vector<std::vector<double>> uf, vf;
    for (Eigen::Index i = 0; i < world.user_factors.rows(); ++i) {
        std::vector<double> r(std::size_t(world.user_factors.cols()));
        for (Eigen::Index k = 0; k < world.user_factors.cols(); ++k) r[std::size_t(k)] = world.user_factors(i, k);
        uf.push_back(std::move(r));
    }
    for (Eigen::Index i = 0; i < world.item_factors.rows(); ++i) {
        std::vector<double> r(std::size_t(world.item_factors.cols()));
        for (Eigen::Index k = 0; k < world.item_factors.cols(); ++k) r[std::size_t(k)] = world.item_factors(i, k);
        vf.push_back(std::move(r));
    }
    return json{{"user_factors", uf},   {"item_factors", vf}, {"tag_vocab", world.tag_vocab},
                {"user_tags", world.user_tags}, {"item_tags", world.item_tags}, {"seed", world.seed}};
}

SyntheticWorld world_from_json(const json& j) {
    SyntheticWorld w;
    auto uf = j.at("user_factors").get<std::vector<std::vector<double>>>();
    auto vf = j.at("item_factors").get<std::vector<std::vector<double>>>();
    const Eigen::Index ku = uf.empty() ? 0 : Eigen::Index(uf.front().size());
    const Eigen::Index kv = vf.empty() ? 0 : Eigen::Index(vf.front().size());
    w.user_factors.resize(Eigen::Index(uf.size()), ku);
    for (std::size_t i = 0; i < uf.size(); ++i)
        for (Eigen::Index k = 0; k < ku; ++k) w.user_factors(Eigen::Index(i), k) = uf[i][std::size_t(k)];
    w.item_factors.resize(Eigen::Index(vf.size()), kv);
    for (std::size_t i = 0; i < vf.size(); ++i)
        for (Eigen::Index k = 0; k < kv; ++k) w.item_factors(Eigen::Index(i), k) = vf[i][std::size_t(k)];
    w.tag_vocab = j.at("tag_vocab").get<std::vector<std::string>>();
    w.user_tags = j.at("user_tags").get<std::vector<std::vector<int>>>();
    w.item_tags = j.at("item_tags").get<std::vector<std::vector<int>>>();
    w.seed = j.at("seed").get<std::uint64_t>();
    return w;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::vector<std::string> data_files{"data/interactions.tsv", "data/catalog.jsonl"};
    if (cfg_.dataset.synthetic) data_files.push_back("data/world.json");
    auto plus = [](std::vector<std::string> a, std::initializer_list<const char*> b) {
        for (const char* s : b) a.emplace_back(s);
        return a;
    };
    defs_ = {
        {"prepare-data", {}, plus(data_files, {"config.resolved.json"}), &Pipeline::stage_prepare_data},
        {"train-cf", data_files, {"models/cf_base.ckpt", "reports/cf_base_loss.csv"},
         &Pipeline::stage_train_cf},
        {"mine-neighbors", plus(data_files, {"models/cf_base.ckpt"}),
         {"neighbors/users.json", "neighbors/items.json"}, &Pipeline::stage_mine_neighbors},
        {"build-instructions", plus(data_files, {"neighbors/users.json"}),
         {"instructions/corpus.jsonl", "instructions/kd.jsonl", "instructions/pairs.jsonl",
          "instructions/vocab.txt"},
         &Pipeline::stage_build_instructions},
        {"train-policy",
         {"instructions/corpus.jsonl", "instructions/kd.jsonl", "instructions/vocab.txt"},
         {"models/policy_kd.ckpt", "models/policy_naive.ckpt", "models/policy_mask.ckpt",
          "reports/policy_loss.csv"},
         &Pipeline::stage_train_policy},
        {"train-reward", {"instructions/pairs.jsonl", "models/policy_mask.ckpt"},
         {"models/reward.ckpt", "reports/reward_accuracy.csv"}, &Pipeline::stage_train_reward},
        {"ppo-refine",
         plus(data_files, {"models/policy_mask.ckpt", "models/reward.ckpt", "neighbors/users.json"}),
         {"models/policy_full.ckpt", "reports/ppo_curve.csv"}, &Pipeline::stage_ppo_refine},
        {"generate-profiles",
         plus(data_files, {"models/policy_full.ckpt", "neighbors/users.json", "neighbors/items.json"}),
         {"profiles/profiles.jsonl"}, &Pipeline::stage_generate_profiles},
        {"train-augmented", plus(data_files, {"profiles/profiles.jsonl"}),
         {"models/cf_aug.ckpt", "reports/cf_aug_loss.csv"}, &Pipeline::stage_train_augmented},
        {"evaluate",
         plus(data_files, {"models/cf_base.ckpt", "models/cf_aug.ckpt", "profiles/profiles.jsonl"}),
         {"reports/eval.csv", "reports/eval.txt"}, &Pipeline::stage_evaluate},
        {"ablate",
         plus(data_files, {"models/policy_kd.ckpt", "models/policy_naive.ckpt",
                           "models/policy_mask.ckpt", "models/policy_full.ckpt",
                           "neighbors/users.json", "neighbors/items.json",
                           "profiles/profiles.jsonl"}),
         {"reports/ablation.csv", "reports/ablation.txt"}, &Pipeline::stage_ablate},
        {"timing", plus(data_files, {"profiles/profiles.jsonl"}), {"reports/timing.csv"},
         &Pipeline::stage_timing},
    };
}

const std::vector<std::string>& Pipeline::stage_names() {
    static const std::vector<std::string> names{
        "prepare-data",   "train-cf",     "mine-neighbors", "build-instructions",
        "train-policy",   "train-reward", "ppo-refine",     "generate-profiles",
        "train-augmented", "evaluate",    "ablate",         "timing"};
    return names;
}

const Pipeline::StageDef& Pipeline::stage(const std::string& name) const {
    for (const auto& d : defs_)
        if (d.name == name) return d;
    throw ConfigError("unknown stage '" + name + "'");
}

std::string Pipeline::artifact(const std::string& rel) const {
    return (fs::path(cfg_.output_dir) / rel).string();
}

std::string Pipeline::producer_of(const std::string& rel) const {
    for (const auto& d : defs_)
        for (const auto& out : d.outputs)
            if (out == rel) return d.name;
    return "<unknown>";
}

void Pipeline::write_manifest(const StageDef& def, double wall_seconds) const {
    json m{{"stage", def.name},
           {"seed", cfg_.seed},
           {"wall_seconds", wall_seconds},
           {"tool_version", kToolVersion}};
    json inputs = json::object(), outputs = json::object();
    for (const auto& rel : def.inputs) inputs[rel] = hash_hex(hash_file(artifact(rel)));
    for (const auto& rel : def.outputs) outputs[rel] = hash_hex(hash_file(artifact(rel)));
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    const std::string path = artifact("manifests/" + def.name + ".json");
    ensure_parent(path);
    std::ofstream out(path);
    out << m.dump(2) << '\n';
}

bool Pipeline::manifest_matches(const StageDef& def) const {
    const std::string path = artifact("manifests/" + def.name + ".json");
    std::ifstream in(path);
    if (!in) return false;
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception&) {
        return false;
    }
    auto matches = [&](const json& recorded, const std::string& rel) {
        if (!recorded.contains(rel)) return false;
        if (!fs::exists(artifact(rel))) return false;
        return recorded.at(rel).get<std::string>() == hash_hex(hash_file(artifact(rel)));
    };
    for (const auto& rel : def.inputs)
        if (!matches(m.value("inputs", json::object()), rel)) return false;
    for (const auto& rel : def.outputs)
        if (!matches(m.value("outputs", json::object()), rel)) return false;
    return true;
}

bool Pipeline::stage_complete(const std::string& name) const { return manifest_matches(stage(name)); }

void Pipeline::run_stage(const std::string& name, bool dry_run) {
    const StageDef& def = stage(name);
    if (dry_run) {
        std::cout << "plan: " << def.name << (stage_complete(name) ? " (complete, would skip)" : " (would run)")
                  << "\n";
        return;
    }
    for (const auto& rel : def.inputs) {
        if (!fs::exists(artifact(rel)))
            throw MissingDependencyError("missing input '" + rel + "' for stage '" + def.name +
                                         "'; run stage '" + producer_of(rel) + "' first");
    }
    for (const auto& rel : def.outputs) ensure_parent(artifact(rel));
    std::cout << "[reclm] running stage " << def.name << "\n";
    const auto t0 = std::chrono::steady_clock::now();
    (this->*def.run)();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(def, secs);
    std::cout << "[reclm] stage " << def.name << " done in " << std::fixed << std::setprecision(2)
              << secs << "s\n";
}

void Pipeline::run_all(bool dry_run) {
    for (const auto& def : defs_) {
        if (!dry_run && stage_complete(def.name)) {
            std::cout << "[reclm] skipping completed stage " << def.name << "\n";
            continue;
        }
        run_stage(def.name, dry_run);
    }
}

// ---------------------------------------------------------------------------
// shared loaders

Pipeline::LoadedData Pipeline::load_data() const {
    LoadedData data;
    auto loaded = load_interactions(artifact("data/interactions.tsv"), LogFormat::Tsv);
    data.catalog = load_catalog(artifact("data/catalog.jsonl"), loaded.remap);
    const std::int64_t boundary =
        cfg_.dataset.synthetic ? cfg_.dataset.synth.boundary_ts : cfg_.dataset.boundary_ts;
    data.split = temporal_split(loaded.log, boundary);
    const std::string world_path = artifact("data/world.json");
    if (fs::exists(world_path)) {
        std::ifstream in(world_path);
        data.world = world_from_json(json::parse(in));
        data.has_world = true;
    }
    return data;
}

TextFeatureMatrix Pipeline::load_features(const ItemCatalog& catalog) const {
    HashedBagEncoder encoder(cfg_.encoder.d_t);
    return encode_catalog(encoder, catalog);
}

NeighborIndex Pipeline::load_user_neighbors() const {
    return load_neighbor_index(artifact("neighbors/users.json"));
}

NeighborIndex Pipeline::load_item_neighbors() const {
    return load_neighbor_index(artifact("neighbors/items.json"));
}

std::vector<std::string> Pipeline::inference_prompt_pool(const LoadedData& data,
                                                         const NeighborIndex& index,
                                                         std::vector<int>* users_out) const {
    const TemplateRegistry reg = TemplateRegistry::defaults();
    const auto histories = data.split.train.user_histories();
    std::vector<std::string> prompts;
    for (int u = 0; u < data.split.train.n_users; ++u) {
        if (histories[std::size_t(u)].empty()) continue;
        std::vector<int> nbrs = index.neighbors.at(std::size_t(u));
        if (int(nbrs.size()) > cfg_.instruction.k_neighbors)
            nbrs.resize(std::size_t(cfg_.instruction.k_neighbors));
        prompts.push_back(build_inference_prompt(u, nbrs, histories, data.catalog, reg));
        if (users_out) users_out->push_back(u);
    }
    if (prompts.empty()) throw ConfigError("no user has a training history to prompt from");
    return prompts;
}

// ---------------------------------------------------------------------------
// stages

void Pipeline::stage_prepare_data() {
    InteractionLog log;
    ItemCatalog catalog;
    if (cfg_.dataset.synthetic) {
        SyntheticData data = generate_synthetic(cfg_.dataset.synth, cfg_.seed);
        log = std::move(data.log);
        catalog = std::move(data.catalog);
        std::ofstream out(artifact("data/world.json"));
        out << world_to_json(data.world).dump() << '\n';
    } else {
        auto loaded = load_interactions(cfg_.dataset.interactions_path,
                                        cfg_.dataset.format == "tsv" ? LogFormat::Tsv
                                                                     : LogFormat::Jsonl);
        log = std::move(loaded.log);
        catalog = load_catalog(cfg_.dataset.catalog_path, loaded.remap);
        save_remap_jsonl(loaded.remap, artifact("data/remap.jsonl"));
    }
    save_interactions_tsv(log, artifact("data/interactions.tsv"));
    save_catalog_jsonl(catalog, artifact("data/catalog.jsonl"));
    std::ofstream cfg_out(artifact("config.resolved.json"));
    cfg_out << cfg_.to_json().dump(2) << '\n';
}

void Pipeline::stage_train_cf() {
    LoadedData data = load_data();
    TrainConfig tc = cfg_.train_cf;
    tc.seed = stage_seed(cfg_.seed, "train-cf");
    RecommenderModel model(backbone_from_string(cfg_.backbone.name), EmbeddingMode::IdOnly,
                           data.split.train.n_users, data.split.train.n_items, cfg_.backbone.d,
                           cfg_.encoder.d_t, cfg_.backbone.layers, tc.seed);
    auto trace = model.train(data.split, tc, nullptr, nullptr);
    model.save(artifact("models/cf_base.ckpt"));
    write_loss_trace_csv(trace, artifact("reports/cf_base_loss.csv"));
}

void Pipeline::stage_mine_neighbors() {
    LoadedData data = load_data();
    RecommenderModel base = RecommenderModel::load(artifact("models/cf_base.ckpt"));
    Encoded enc = base.encode_all(&data.split.train, nullptr, nullptr);
    const int k_users = std::min(cfg_.instruction.k_neighbors, data.split.train.n_users - 1);
    save_neighbor_index(NeighborIndex::build(enc.users, k_users), artifact("neighbors/users.json"));
    TextFeatureMatrix features = load_features(data.catalog);
    const int k_items = std::min(8, data.split.train.n_items - 1);
    save_neighbor_index(NeighborIndex::build(features.features, k_items),
                        artifact("neighbors/items.json"));
}

namespace {

void save_kd_jsonl(const std::vector<KdInstruction>& kd, const std::string& path) {
    std::ofstream out(path);
    for (const auto& k : kd)
        out << json{{"user", k.user}, {"q", k.q}, {"r", k.r_target}}.dump() << '\n';
}

std::vector<KdInstruction> load_kd_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<KdInstruction> kd;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        kd.push_back({j.at("q"), j.at("r"), j.at("user")});
    }
    return kd;
}

MaskedSequence masked_from_qr(const std::string& q, const std::string& r, const Vocabulary& vocab) {
    MaskedSequence seq;
    seq.tokens.push_back(Vocabulary::kBos);
    seq.mask.push_back(0);
    for (int t : vocab.encode(q)) {
        seq.tokens.push_back(t);
        seq.mask.push_back(0);
    }
    seq.turn_boundaries.push_back(1);
    seq.turn_boundaries.push_back(int(seq.tokens.size()));
    for (int t : vocab.encode(r)) {
        seq.tokens.push_back(t);
        seq.mask.push_back(1);
    }
    seq.tokens.push_back(Vocabulary::kEos);
    seq.mask.push_back(1);  // the model must learn to stop after the response
    return seq;
}

}  // namespace

void Pipeline::stage_build_instructions() {
    LoadedData data = load_data();
    const TemplateRegistry reg = TemplateRegistry::defaults();
    const auto histories = data.split.train.user_histories();
    NeighborIndex user_index = load_user_neighbors();

    std::unique_ptr<ProfileProvider> teacher;
    if (data.has_world) {
        teacher = std::make_unique<OracleProvider>(data.world);
    } else {
        teacher = std::make_unique<ExternalApiProvider>(ExternalApiProvider::Config::from_env());
    }
    const std::uint64_t seed = stage_seed(cfg_.seed, "build-instructions");
    Rng rng(seed);

    std::vector<int> eligible;
    for (int u = 0; u < data.split.train.n_users; ++u)
        if (!histories[std::size_t(u)].empty()) eligible.push_back(u);
    if (eligible.empty()) throw ConfigError("no user has a training history");

    std::vector<TwoTurnExample> corpus;
    int skipped = 0;
    for (int i = 0; i < cfg_.instruction.corpus_examples; ++i) {
        const int u = eligible[std::size_t(i) % eligible.size()];
        std::vector<int> nbrs = user_index.neighbors.at(std::size_t(u));
        if (int(nbrs.size()) > cfg_.instruction.k_neighbors)
            nbrs.resize(std::size_t(cfg_.instruction.k_neighbors));
        try {
            corpus.push_back(build_two_turn(u, nbrs, histories, data.catalog, *teacher, reg,
                                            seed, rng));
        } catch (const std::exception& ex) {
            ++skipped;
            std::cerr << "[reclm] corpus example for user " << u << " skipped: " << ex.what() << "\n";
        }
    }
    if (corpus.empty()) throw ConfigError("instruction corpus is empty");
    if (skipped) std::cerr << "[reclm] skipped " << skipped << " corpus examples\n";
    save_two_turn_jsonl(corpus, artifact("instructions/corpus.jsonl"));

    std::vector<KdInstruction> kd;
    for (std::size_t i = 0; i < std::min<std::size_t>(eligible.size(),
                                                      std::size_t(cfg_.instruction.corpus_examples));
         ++i) {
        const int u = eligible[i];
        kd.push_back(build_kd_instruction(u, histories[std::size_t(u)], data.catalog, *teacher, reg,
                                          seed));
    }
    save_kd_jsonl(kd, artifact("instructions/kd.jsonl"));

    // preference pairs: teacher profiles as preferred responses
    std::vector<std::string> profiles(std::size_t(data.split.train.n_users));
    std::vector<std::string> prompts(std::size_t(data.split.train.n_users));
    std::vector<int> pair_users;
    for (int u : eligible) {
        if (int(pair_users.size()) >= cfg_.instruction.preference_pairs) break;
        prompts[std::size_t(u)] = build_inference_prompt(u, {}, histories, data.catalog, reg);
        profiles[std::size_t(u)] = teacher->generate(SubjectKind::User, u, prompts[std::size_t(u)],
                                                     seed);
        pair_users.push_back(u);
    }
    auto pairs = build_preference_pairs(pair_users, profiles, user_index, prompts, {}, rng);
    save_preference_pairs_jsonl(pairs, artifact("instructions/pairs.jsonl"));

    // vocabulary over every text the models will see
    std::vector<std::string> texts;
    for (const auto& ex : corpus) {
        texts.push_back(ex.q_fir);
        texts.push_back(ex.r_fir);
        texts.push_back(ex.q_sec);
        texts.push_back(ex.r_sec);
    }
    for (const auto& k : kd) {
        texts.push_back(k.q);
        texts.push_back(k.r_target);
    }
    for (const auto& p : pairs) {
        texts.push_back(p.q);
        texts.push_back(p.r_plus);
        texts.push_back(p.r_minus);
    }
    Vocabulary vocab = Vocabulary::build(texts, std::size_t(cfg_.policy.max_vocab));
    std::ofstream vout(artifact("instructions/vocab.txt"));
    vocab.write(vout);
}

void Pipeline::stage_train_policy() {
    std::ifstream vin(artifact("instructions/vocab.txt"));
    Vocabulary vocab = Vocabulary::read(vin);
    auto corpus = load_two_turn_jsonl(artifact("instructions/corpus.jsonl"));
    auto kd = load_kd_jsonl(artifact("instructions/kd.jsonl"));

    PolicyConfig pc{cfg_.policy.embed_dim, cfg_.policy.hidden_dim, cfg_.policy.context_len,
                    stage_seed(cfg_.seed, "train-policy")};
    const int max_len = cfg_.policy.context_len - 1;
    auto fits = [&](const MaskedSequence& s) { return int(s.tokens.size()) <= max_len; };

    std::vector<MaskedSequence> kd_seqs, naive_seqs, mask_seqs;
    for (const auto& k : kd) {
        auto s = masked_from_qr(k.q, k.r_target, vocab);
        if (fits(s)) kd_seqs.push_back(std::move(s));
    }
    for (const auto& ex : corpus) {
        auto naive = masked_from_qr(ex.q_fir, ex.r_fir, vocab);
        if (fits(naive)) naive_seqs.push_back(std::move(naive));
        auto full = render_masked(ex, vocab);
        if (fits(full)) mask_seqs.push_back(std::move(full));
    }
    if (kd_seqs.empty() || naive_seqs.empty() || mask_seqs.empty())
        throw ConfigError("instruction corpus does not fit the policy context length");

    PolicyModel::MaskedTrainConfig tc{cfg_.policy.epochs, cfg_.policy.batch_size,
                                      cfg_.policy.learning_rate, pc.seed};
    std::ofstream loss_csv(artifact("reports/policy_loss.csv"));
    loss_csv << "variant,epoch,loss\n";
    auto train_variant = [&](const std::string& name, const std::vector<MaskedSequence>& seqs) {
        PolicyModel model(vocab, pc);  // identical init across variants
        auto losses = model.train_masked(seqs, tc);
        for (std::size_t e = 0; e < losses.size(); ++e)
            loss_csv << name << ',' << e << ',' << losses[e] << '\n';
        model.save(artifact("models/policy_" + name + ".ckpt"));
    };
    train_variant("kd", kd_seqs);
    train_variant("naive", naive_seqs);
    train_variant("mask", mask_seqs);
}

void Pipeline::stage_train_reward() {
    auto pairs = load_preference_pairs_jsonl(artifact("instructions/pairs.jsonl"));
    PolicyModel mask = PolicyModel::load(artifact("models/policy_mask.ckpt"));
    RewardModel reward(mask);
    RewardModel::TrainConfig tc = cfg_.reward;
    tc.seed = stage_seed(cfg_.seed, "train-reward");
    auto trace = reward.train(pairs, tc);
    reward.save(artifact("models/reward.ckpt"));
    write_accuracy_trace_csv(trace, artifact("reports/reward_accuracy.csv"));
}

void Pipeline::stage_ppo_refine() {
    LoadedData data = load_data();
    NeighborIndex index = load_user_neighbors();
    PolicyModel policy = PolicyModel::load(artifact("models/policy_mask.ckpt"));
    PolicyModel reference = PolicyModel::load(artifact("models/policy_mask.ckpt"));
    RewardModel reward = RewardModel::load(artifact("models/reward.ckpt"));
    PpoConfig pc = cfg_.ppo;
    pc.seed = stage_seed(cfg_.seed, "ppo-refine");
    PpoRefiner refiner(policy, reference, reward, pc);
    auto curve = refiner.refine(inference_prompt_pool(data, index));
    policy.save(artifact("models/policy_full.ckpt"));
    write_ppo_curve_csv(curve, artifact("reports/ppo_curve.csv"));
}

int Pipeline::generate_profiles_with(const PolicyModel& policy, const LoadedData& data,
                                     ProfileStore& store) const {
    const TemplateRegistry reg = TemplateRegistry::defaults();
    const auto histories = data.split.train.user_histories();
    NeighborIndex user_index = load_user_neighbors();
    NeighborIndex item_index = load_item_neighbors();
    PolicyProvider provider(policy, cfg_.policy.profile_max_tokens);
    const std::uint64_t seed = stage_seed(cfg_.seed, "generate-profiles");

    UserProfileJob ujob;
    std::vector<int> users(std::size_t(data.split.train.n_users));
    std::iota(users.begin(), users.end(), 0);
    ujob.users = users;
    ujob.neighbor_index = &user_index;
    ujob.histories = &histories;
    ujob.catalog = &data.catalog;
    ujob.templates = &reg;
    ujob.neighbors_per_prompt = cfg_.instruction.k_neighbors;
    ujob.force_seal = true;
    const int user_version = generate_user_profiles(store, provider, ujob, seed);

    ItemProfileJob ijob;
    ijob.train = &data.split.train;
    ijob.similar_items = &item_index;
    ijob.catalog = &data.catalog;
    ijob.templates = &reg;
    const int version = derive_item_profiles(store, user_version, provider, ijob, seed);
    HashedBagEncoder encoder(cfg_.encoder.d_t);
    embed_profiles(store, version, encoder);
    return version;
}

void Pipeline::stage_generate_profiles() {
    LoadedData data = load_data();
    PolicyModel policy = PolicyModel::load(artifact("models/policy_full.ckpt"));
    ProfileStore store;
    const int version = generate_profiles_with(policy, data, store);
    store.save_version(version, artifact("profiles/profiles.jsonl"));
}

RecommenderModel Pipeline::train_augmented_with(const ProfileEmbeddingInput& profiles,
                                                const LoadedData& data, bool augment_users,
                                                bool augment_items) const {
    TextFeatureMatrix features = load_features(data.catalog);
    TrainConfig tc = cfg_.train_cf;
    tc.seed = stage_seed(cfg_.seed, "train-augmented");
    RecommenderModel model(backbone_from_string(cfg_.backbone.name), EmbeddingMode::TextPlusProfile,
                           data.split.train.n_users, data.split.train.n_items, cfg_.backbone.d,
                           cfg_.encoder.d_t, cfg_.backbone.layers, tc.seed);
    model.set_augment_sides(augment_users, augment_items);
    model.train(data.split, tc, &features, &profiles);
    return model;
}

void Pipeline::stage_train_augmented() {
    LoadedData data = load_data();
    ProfileStore store;
    const int version = store.load_version(artifact("profiles/profiles.jsonl"));
    ProfileEmbeddingInput profiles = profile_embedding_matrices(
        store, version, data.split.train.n_users, data.split.train.n_items, cfg_.encoder.d_t);

    TextFeatureMatrix features = load_features(data.catalog);
    TrainConfig tc = cfg_.train_cf;
    tc.seed = stage_seed(cfg_.seed, "train-augmented");
    RecommenderModel model(backbone_from_string(cfg_.backbone.name), EmbeddingMode::TextPlusProfile,
                           data.split.train.n_users, data.split.train.n_items, cfg_.backbone.d,
                           cfg_.encoder.d_t, cfg_.backbone.layers, tc.seed);
    auto trace = model.train(data.split, tc, &features, &profiles);
    model.save(artifact("models/cf_aug.ckpt"));
    write_loss_trace_csv(trace, artifact("reports/cf_aug_loss.csv"));
}

void Pipeline::stage_evaluate() {
    LoadedData data = load_data();
    RecommenderModel base = RecommenderModel::load(artifact("models/cf_base.ckpt"));
    RecommenderModel aug = RecommenderModel::load(artifact("models/cf_aug.ckpt"));
    TextFeatureMatrix features = load_features(data.catalog);
    ProfileStore store;
    const int version = store.load_version(artifact("profiles/profiles.jsonl"));
    ProfileEmbeddingInput profiles = profile_embedding_matrices(
        store, version, data.split.train.n_users, data.split.train.n_items, cfg_.encoder.d_t);
    EvalInputs aug_inputs{&features, &profiles};

    std::vector<MetricReport> reports;
    MetricReport base_full = all_rank_evaluate(base, data.split, EvalSetting::FullShot, cfg_.eval.ks,
                                               {}, "base");
    MetricReport aug_full = all_rank_evaluate(aug, data.split, EvalSetting::FullShot, cfg_.eval.ks,
                                              aug_inputs, "augmented");
    MetricReport base_zero = all_rank_evaluate(base, data.split, EvalSetting::ZeroShot, cfg_.eval.ks,
                                               {}, "base");
    MetricReport base_zero_rand = random_rank_evaluate(data.split, EvalSetting::ZeroShot,
                                                       cfg_.eval.ks,
                                                       stage_seed(cfg_.seed, "evaluate"),
                                                       "base-random-fallback");
    MetricReport aug_zero = all_rank_evaluate(aug, data.split, EvalSetting::ZeroShot, cfg_.eval.ks,
                                              aug_inputs, "augmented");
    reports = {base_full, aug_full, base_zero, base_zero_rand, aug_zero};
    write_reports_csv(reports, artifact("reports/eval.csv"));

    std::ofstream txt(artifact("reports/eval.txt"));
    txt << format_report_table(reports) << "\n";
    txt << "full-shot base vs augmented:\n" << format_comparison(compare(base_full, aug_full)) << "\n";
    if (!base_zero_rand.user_ids.empty() && base_zero_rand.user_ids == aug_zero.user_ids)
        txt << "zero-shot random-fallback vs augmented:\n"
            << format_comparison(compare(base_zero_rand, aug_zero)) << "\n";
}

void Pipeline::stage_ablate() {
    LoadedData data = load_data();
    TextFeatureMatrix features = load_features(data.catalog);
    RecommenderModel base = RecommenderModel::load(artifact("models/cf_base.ckpt"));

    const std::vector<std::string> policy_variants{"kd", "naive", "mask", "full"};
    const std::map<std::string, std::string> display{
        {"kd", "GPT_KD"}, {"naive", "Naive"}, {"mask", "Mask"}, {"full", "Full"}};

    std::vector<std::unique_ptr<RecommenderModel>> models;
    std::vector<std::unique_ptr<ProfileEmbeddingInput>> profile_sets;
    std::vector<AblationVariant> variants;

    AblationVariant base_variant;
    base_variant.name = "Base";
    base_variant.model = &base;
    base_variant.random_fallback_on_cold = true;
    variants.push_back(base_variant);

    for (const auto& v : policy_variants) {
        PolicyModel policy = PolicyModel::load(artifact("models/policy_" + v + ".ckpt"));
        ProfileStore store;
        const int version = generate_profiles_with(policy, data, store);
        auto profiles = std::make_unique<ProfileEmbeddingInput>(profile_embedding_matrices(
            store, version, data.split.train.n_users, data.split.train.n_items, cfg_.encoder.d_t));
        auto model = std::make_unique<RecommenderModel>(
            train_augmented_with(*profiles, data, true, true));
        AblationVariant var;
        var.name = display.at(v);
        var.model = model.get();
        var.inputs = EvalInputs{&features, profiles.get()};
        variants.push_back(var);
        models.push_back(std::move(model));
        profile_sets.push_back(std::move(profiles));
    }

    // feature-exclusion variants reuse the Full policy's profiles
    {
        ProfileStore store;
        const int version = store.load_version(artifact("profiles/profiles.jsonl"));
        auto profiles = std::make_unique<ProfileEmbeddingInput>(profile_embedding_matrices(
            store, version, data.split.train.n_users, data.split.train.n_items, cfg_.encoder.d_t));
        for (const auto& [name, sides] :
             std::vector<std::pair<std::string, std::pair<bool, bool>>>{
                 {"w/o User Aug.", {false, true}}, {"w/o Item Aug.", {true, false}}}) {
            auto model = std::make_unique<RecommenderModel>(
                train_augmented_with(*profiles, data, sides.first, sides.second));
            AblationVariant var;
            var.name = name;
            var.model = model.get();
            var.inputs = EvalInputs{&features, profiles.get()};
            variants.push_back(var);
            models.push_back(std::move(model));
        }
        profile_sets.push_back(std::move(profiles));
    }

    AblationTable table = run_ablation(variants, data.split, cfg_.eval.ks,
                                       stage_seed(cfg_.seed, "ablate"));
    write_reports_csv(table.rows, artifact("reports/ablation.csv"));

    const int k_head = cfg_.eval.ks.front();
    auto zero_shot_recall = [&](const std::string& name) {
        for (const auto& r : table.rows)
            if (r.descriptor == name && r.setting == EvalSetting::ZeroShot)
                return r.mean_recall_at(k_head);
        throw ConfigError("missing ablation row " + name);
    };
    const double full = zero_shot_recall("Full"), mask = zero_shot_recall("Mask"),
                 naive = zero_shot_recall("Naive");
    const bool ordering_ok = full >= mask && mask >= naive;

    std::ofstream txt(artifact("reports/ablation.txt"));
    txt << format_report_table(table.rows) << "\n";
    txt << "zero-shot Recall@" << k_head << " ordering Full >= Mask >= Naive: "
        << (ordering_ok ? "holds" : "VIOLATED") << " (Full=" << full << ", Mask=" << mask
        << ", Naive=" << naive << ")\n";
    if (!ordering_ok) std::cerr << "[reclm] ablation ordering violated; see reports/ablation.txt\n";
}

void Pipeline::stage_timing() {
    LoadedData data = load_data();
    TextFeatureMatrix features = load_features(data.catalog);
    ProfileStore store;
    const int version = store.load_version(artifact("profiles/profiles.jsonl"));
    ProfileEmbeddingInput profiles = profile_embedding_matrices(
        store, version, data.split.train.n_users, data.split.train.n_items, cfg_.encoder.d_t);

    const std::uint64_t seed = stage_seed(cfg_.seed, "timing");
    TrainConfig tc = cfg_.train_cf;
    tc.seed = seed;
    RecommenderModel base(backbone_from_string(cfg_.backbone.name), EmbeddingMode::IdOnly,
                          data.split.train.n_users, data.split.train.n_items, cfg_.backbone.d,
                          cfg_.encoder.d_t, cfg_.backbone.layers, seed);
    RecommenderModel aug(backbone_from_string(cfg_.backbone.name), EmbeddingMode::TextPlusProfile,
                         data.split.train.n_users, data.split.train.n_items, cfg_.backbone.d,
                         cfg_.encoder.d_t, cfg_.backbone.layers, seed);
    EvalInputs aug_inputs{&features, &profiles};
    TimingReport report = timing_report(base, {}, aug, aug_inputs, data.split, tc,
                                        cfg_.eval.timing_epochs);

    std::ofstream out(artifact("reports/timing.csv"));
    out << "series,epoch,seconds\n";
    for (std::size_t i = 0; i < report.base_epoch_seconds.size(); ++i)
        out << "base," << i << ',' << report.base_epoch_seconds[i] << '\n';
    for (std::size_t i = 0; i < report.augmented_epoch_seconds.size(); ++i)
        out << "augmented," << i << ',' << report.augmented_epoch_seconds[i] << '\n';
    out << "base_median,," << report.base_median << '\n';
    out << "augmented_median,," << report.augmented_median << '\n';
    out << "overhead_ratio,," << report.overhead_ratio << '\n';
}

}  // namespace reclm

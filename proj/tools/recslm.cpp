#include <CLI11.hpp>
#include <iostream>

#include "reclm/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingDependency = 3;
constexpr int kExitRuntime = 4;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reclm experiment pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    bool dry_run = false;

    std::vector<CLI::App*> stage_cmds;
    for (const auto& name : reclm::Pipeline::stage_names()) {
        auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
        cmd->add_option("--config", config_path, "experiment config file (json)")->required();
        cmd->add_flag("--dry-run", dry_run, "print the plan without side effects");
        stage_cmds.push_back(cmd);
    }
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run all stages in dependency order");
    pipeline_cmd->add_option("--config", config_path, "experiment config file (json)")->required();
    pipeline_cmd->add_flag("--dry-run", dry_run, "print the plan without side effects");

    CLI11_PARSE(app, argc, argv);

    reclm::ExperimentConfig cfg;
    try {
        cfg = reclm::ExperimentConfig::load(config_path);
    } catch (const std::exception& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return kExitConfig;
    }

    try {
        reclm::Pipeline pipeline(cfg);
        if (pipeline_cmd->parsed()) {
            pipeline.run_all(dry_run);
        } else {
            for (std::size_t i = 0; i < stage_cmds.size(); ++i)
                if (stage_cmds[i]->parsed())
                    pipeline.run_stage(reclm::Pipeline::stage_names()[i], dry_run);
        }
    } catch (const reclm::MissingDependencyError& ex) {
        std::cerr << "missing dependency: " << ex.what() << "\n";
        return kExitMissingDependency;
    } catch (const reclm::ConfigError& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pageopt/config.hpp"
#include "pageopt/errors.hpp"
#include "pageopt/stages.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitSchemaViolation = 4;

struct CommonFlags {
    std::string config_path;
    long long seed = -1;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Run config file (JSON)");
    cmd->add_option("--seed", flags.seed, "Override the config seed");
    cmd->add_option("--out", flags.out_dir, "Override the output directory");
}

pageopt::RunConfig resolve(const CommonFlags& flags) {
    std::string path = flags.config_path;
    if (path.empty()) {
        const char* env = std::getenv("PAGEOPT_CONFIG");
        if (env != nullptr) path = env;
    }
    if (path.empty())
        throw pageopt::ConfigError("no config: pass --config or set PAGEOPT_CONFIG");
    return pageopt::load_run_config(path, flags.seed, flags.out_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Page-level slate optimization workbench"};
    app.require_subcommand(1);

    CommonFlags flags;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "Generate the synthetic world (world.json, catalog.json)"},
        {"collect", "Log pages under uniform, Thompson and production policies"},
        {"propensity", "Estimate slot propensities from the shuffled traffic"},
        {"attribute", "Compute session-based purchase-intent attribution"},
        {"build-dataset", "Assemble the normalized training dataset"},
        {"train", "Train the configured rankers"},
        {"rank", "Rank fresh contexts with the trained model, with score traces"},
        {"evaluate", "Ranking metrics plus DM/DR off-policy estimates"},
        {"e2e", "Run every stage in order and write summary.json"},
    };
    for (const auto& [name, help] : commands) {
        add_common(app.add_subcommand(name, help), flags);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        pageopt::RunConfig cfg = resolve(flags);
        if (command == "simulate") pageopt::stages::cmd_simulate(cfg);
        else if (command == "collect") pageopt::stages::cmd_collect(cfg);
        else if (command == "propensity") pageopt::stages::cmd_propensity(cfg);
        else if (command == "attribute") pageopt::stages::cmd_attribute(cfg);
        else if (command == "build-dataset") pageopt::stages::cmd_build_dataset(cfg);
        else if (command == "train") pageopt::stages::cmd_train(cfg);
        else if (command == "rank") pageopt::stages::cmd_rank(cfg);
        else if (command == "evaluate") {
            pageopt::stages::cmd_evaluate(cfg);
        } else if (command == "e2e") {
            pageopt::stages::cmd_e2e(cfg);
        }
        std::cout << command << ": done (out=" << cfg.out_dir << ")\n";
        return kExitOk;
    } catch (const pageopt::ConfigError& e) {
        std::cerr << "config-error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const pageopt::MissingInputError& e) {
        std::cerr << "missing-input: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const pageopt::SchemaError& e) {
        std::cerr << "schema-violation: " << e.what() << "\n";
        return kExitSchemaViolation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

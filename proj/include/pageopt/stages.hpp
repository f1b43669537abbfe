#pragma once

#include <string>

#include "json.hpp"
#include "pageopt/config.hpp"

namespace pageopt::stages {

// All artifact paths of a run live in one output directory.
struct Paths {
    std::string out;

    std::string world() const { return out + "/world.json"; }
    std::string catalog() const { return out + "/catalog.json"; }
    std::string pages() const { return out + "/pages.jsonl"; }
    std::string events() const { return out + "/events.jsonl"; }
    std::string propensity() const { return out + "/propensity.json"; }
    std::string attribution() const { return out + "/attribution.jsonl"; }
    std::string dataset() const { return out + "/dataset.jsonl"; }
    std::string norm_stats() const { return out + "/norm_stats.json"; }
    std::string checkpoint(const std::string& model) const { return out + "/" + model + ".ckpt"; }
    std::string popularity() const { return out + "/popularity.json"; }
    std::string training_report() const { return out + "/training_report.json"; }
    std::string slates() const { return out + "/slates.jsonl"; }
    std::string eval_report() const { return out + "/eval_report.json"; }
    std::string metrics_csv() const { return out + "/metrics.csv"; }
    std::string summary() const { return out + "/summary.json"; }
    std::string resolved_config() const { return out + "/resolved_config.json"; }
};

// Creates the output directory and drops the fully-resolved config (with the
// tool version) next to the artifacts. Every command calls this first.
Paths prepare_out_dir(const RunConfig& cfg);

void cmd_simulate(const RunConfig& cfg);
void cmd_collect(const RunConfig& cfg);
void cmd_propensity(const RunConfig& cfg);
void cmd_attribute(const RunConfig& cfg);
void cmd_build_dataset(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_rank(const RunConfig& cfg);
nlohmann::json cmd_evaluate(const RunConfig& cfg);
// simulate -> collect -> propensity -> attribute -> build-dataset -> train ->
// rank -> evaluate, then writes summary.json.
nlohmann::json cmd_e2e(const RunConfig& cfg);

}  // namespace pageopt::stages

#pragma once

#include <string>

#include "pageopt/collector.hpp"
#include "pageopt/pipeline.hpp"
#include "pageopt/simulator.hpp"
#include "pageopt/trnn.hpp"

namespace pageopt {

inline constexpr const char* kToolVersion = "pageopt 0.1.0";

// One structured document driving every stage. Unknown keys are rejected with
// the full key path in the error message.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "out";

    sim::SimConfig sim;

    struct CollectSection {
        int uniform_pages = 2000;
        int thompson_pages = 6000;
        int production_pages = 6000;
        collect::CollectorConfig collector;
    } collect;

    struct PipelineSection {
        double eta = 0.5;
        double epsilon = 1.0;
        // Defaults to sim.session_gap_minutes at resolve time.
        double session_gap_minutes = -1.0;
        double downsample_ratio = 1.0;
        double negative_keep_rate = 0.25;
        std::int64_t min_slot_count = 1000;
        pipe::SplitFractions split;
        double clip = 3.0;
        std::vector<int> log1p_module_columns;
    } pipeline;

    struct TrainSection {
        trnn::TrnnConfig model;
        std::vector<std::string> models{"trnn", "trnn_noips", "mlp", "popularity"};
    } train;

    struct InferSection {
        int beam_width = 3;
        int start_slot = 1;
        bool diversity = true;
    } infer;

    struct EvalSection {
        int eval_contexts = 2000;
        double dr_clip = 20.0;
        int beam_report_contexts = 200;
    } eval;

    pipe::AttributionParams attribution_params() const;
    void validate() const;
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

// Reads and fully resolves a config file; seed_override replaces the seed when
// non-negative.
RunConfig load_run_config(const std::string& path, long long seed_override,
                          const std::string& out_override);

}  // namespace pageopt

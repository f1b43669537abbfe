#include "pageopt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pageopt/errors.hpp"

namespace pageopt {
namespace {

using nlohmann::json;

// Tracks which keys were consumed; anything left over is a config error that
// names the offending path.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void read(const std::string& key, T& target) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            target = j_.at(key).get<T>();
        } catch (const std::exception& e) {
            throw ConfigError("config: bad value for " + path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key " + path_ + "." + it.key());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

sim::ExaminationShape exam_shape_from(const std::string& text) {
    if (text == "log_decay") return sim::ExaminationShape::log_decay;
    if (text == "geometric") return sim::ExaminationShape::geometric;
    if (text == "custom") return sim::ExaminationShape::custom;
    throw ConfigError("config: unknown sim.exam_shape " + text);
}

collect::DiversityStrategy strategy_from(const std::string& text) {
    if (text == "none") return collect::DiversityStrategy::none;
    if (text == "swap") return collect::DiversityStrategy::swap_adjacent;
    if (text == "demote") return collect::DiversityStrategy::demote;
    throw ConfigError("config: unknown collect.strategy " + text);
}

void parse_sim(const json& j, sim::SimConfig& cfg) {
    StrictObject o(j, "sim");
    o.read("families", cfg.families);
    o.read("modules_per_family", cfg.modules_per_family);
    o.read("slate_size", cfg.slate_size);
    o.read("buckets", cfg.buckets);
    o.read("users", cfg.users);
    o.read("pages", cfg.pages);
    if (o.has("exam_shape")) cfg.exam_shape = exam_shape_from(j.at("exam_shape").get<std::string>());
    o.read("geometric_ratio", cfg.geometric_ratio);
    o.read("custom_examination", cfg.custom_examination);
    if (const json* r = o.child("click_range")) {
        cfg.click_lo = r->at(0).get<double>();
        cfg.click_hi = r->at(1).get<double>();
    }
    if (const json* r = o.child("purchase_range")) {
        cfg.purchase_lo = r->at(0).get<double>();
        cfg.purchase_hi = r->at(1).get<double>();
    }
    if (const json* r = o.child("intent_range")) {
        cfg.intent_lo = r->at(0).get<double>();
        cfg.intent_hi = r->at(1).get<double>();
    }
    o.read("session_gap_minutes", cfg.session_gap_minutes);
    o.read("feature_noise", cfg.feature_noise);
    o.read("platforms", cfg.platforms);
    o.finish();
}

void parse_collect(const json& j, RunConfig::CollectSection& cfg) {
    StrictObject o(j, "collect");
    o.read("uniform_pages", cfg.uniform_pages);
    o.read("thompson_pages", cfg.thompson_pages);
    o.read("production_pages", cfg.production_pages);
    if (o.has("strategy"))
        cfg.collector.strategy = strategy_from(j.at("strategy").get<std::string>());
    o.read("demotion_factor", cfg.collector.demotion_factor);
    o.read("prior_alpha", cfg.collector.prior_alpha);
    o.read("prior_beta", cfg.collector.prior_beta);
    o.read("batch_period", cfg.collector.batch_period);
    o.read("propensity_samples", cfg.collector.propensity_samples);
    o.finish();
}

void parse_pipeline(const json& j, RunConfig::PipelineSection& cfg) {
    StrictObject o(j, "pipeline");
    o.read("eta", cfg.eta);
    o.read("epsilon", cfg.epsilon);
    o.read("session_gap_minutes", cfg.session_gap_minutes);
    o.read("downsample_ratio", cfg.downsample_ratio);
    o.read("negative_keep_rate", cfg.negative_keep_rate);
    o.read("min_slot_count", cfg.min_slot_count);
    if (const json* s = o.child("split")) {
        cfg.split.train = s->at(0).get<double>();
        cfg.split.validation = s->at(1).get<double>();
        cfg.split.test = s->at(2).get<double>();
    }
    o.read("clip", cfg.clip);
    o.read("log1p_module_columns", cfg.log1p_module_columns);
    o.finish();
}

void parse_train(const json& j, RunConfig::TrainSection& cfg) {
    StrictObject o(j, "train");
    trnn::TrnnConfig& m = cfg.model;
    o.read("d_h", m.d_h);
    o.read("d_f", m.d_f);
    o.read("d_m", m.d_m);
    o.read("d_o", m.d_o);
    o.read("platform_dim", m.platform_dim);
    o.read("trunk_width", m.trunk_width);
    if (const json* heads = o.child("heads")) {
        m.heads.clear();
        for (const auto& name : *heads) {
            auto h = trnn::head_from(name.get<std::string>());
            if (!h) throw ConfigError("config: unknown head train.heads=" +
                                      name.get<std::string>());
            m.heads.push_back(*h);
        }
    }
    if (o.has("objective_mode")) {
        const std::string mode = j.at("objective_mode").get<std::string>();
        if (mode == "fixed") m.objective_mode = nn::WeightMode::fixed;
        else if (mode == "learned") m.objective_mode = nn::WeightMode::learned;
        else throw ConfigError("config: unknown train.objective_mode " + mode);
    }
    o.read("fixed_weights", m.fixed_weights);
    o.read("epochs", m.epochs);
    o.read("lr", m.lr);
    o.read("batch_size", m.batch_size);
    o.read("use_ips", m.use_ips);
    o.read("softmax_rank_head", m.softmax_rank_head);
    o.read("models", cfg.models);
    o.finish();
}

void parse_infer(const json& j, RunConfig::InferSection& cfg) {
    StrictObject o(j, "infer");
    o.read("beam_width", cfg.beam_width);
    o.read("start_slot", cfg.start_slot);
    o.read("diversity", cfg.diversity);
    o.finish();
}

void parse_eval(const json& j, RunConfig::EvalSection& cfg) {
    StrictObject o(j, "eval");
    o.read("eval_contexts", cfg.eval_contexts);
    o.read("dr_clip", cfg.dr_clip);
    o.read("beam_report_contexts", cfg.beam_report_contexts);
    o.finish();
}

}  // namespace

pipe::AttributionParams RunConfig::attribution_params() const {
    pipe::AttributionParams params;
    params.eta = pipeline.eta;
    params.epsilon = pipeline.epsilon;
    params.gap_minutes = pipeline.session_gap_minutes;
    return params;
}

void RunConfig::validate() const {
    sim.validate();
    collect.collector.validate();
    if (collect.uniform_pages < 0 || collect.thompson_pages < 0 || collect.production_pages < 0)
        throw ConfigError("collect: page counts must be >= 0");
    if (!(pipeline.eta > 0.0 && pipeline.eta < 1.0))
        throw ConfigError("pipeline: eta must be in (0, 1)");
    if (!(pipeline.epsilon > 0.0)) throw ConfigError("pipeline: epsilon must be > 0");
    if (!(pipeline.session_gap_minutes > 0.0))
        throw ConfigError("pipeline: session_gap_minutes must be > 0");
    if (!(pipeline.downsample_ratio > 0.0))
        throw ConfigError("pipeline: downsample_ratio must be > 0");
    if (!(pipeline.negative_keep_rate > 0.0 && pipeline.negative_keep_rate <= 1.0))
        throw ConfigError("pipeline: negative_keep_rate must be in (0, 1]");
    train.model.validate();
    for (const std::string& name : train.models) {
        if (name != "trnn" && name != "trnn_noips" && name != "mlp" && name != "popularity")
            throw ConfigError("train: unknown model " + name);
    }
    if (infer.beam_width < 1) throw ConfigError("infer: beam_width must be >= 1");
    if (infer.start_slot < 1 || infer.start_slot > sim.slate_size)
        throw ConfigError("infer: start_slot outside [1, K]");
    if (eval.eval_contexts < 1) throw ConfigError("eval: eval_contexts must be >= 1");
    if (!(eval.dr_clip > 0.0)) throw ConfigError("eval: dr_clip must be > 0");
}

RunConfig run_config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: invalid JSON");
    RunConfig cfg;
    StrictObject root(j, "(root)");
    root.read("seed", cfg.seed);
    root.read("out_dir", cfg.out_dir);
    if (const json* s = root.child("sim")) parse_sim(*s, cfg.sim);
    if (const json* s = root.child("collect")) parse_collect(*s, cfg.collect);
    if (const json* s = root.child("pipeline")) parse_pipeline(*s, cfg.pipeline);
    if (const json* s = root.child("train")) parse_train(*s, cfg.train);
    if (const json* s = root.child("infer")) parse_infer(*s, cfg.infer);
    if (const json* s = root.child("eval")) parse_eval(*s, cfg.eval);
    root.finish();

    // Resolve derived defaults.
    cfg.sim.seed = cfg.seed;
    cfg.collect.collector.seed = cfg.seed;
    cfg.train.model.seed = cfg.seed;
    if (cfg.pipeline.session_gap_minutes <= 0.0)
        cfg.pipeline.session_gap_minutes = cfg.sim.session_gap_minutes;
    if (cfg.train.model.objective_mode == nn::WeightMode::fixed &&
        cfg.train.model.fixed_weights.empty()) {
        cfg.train.model.fixed_weights.assign(cfg.train.model.heads.size(), 1.0);
    }
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["version"] = kToolVersion;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["sim"] = {
        {"families", cfg.sim.families},
        {"modules_per_family", cfg.sim.modules_per_family},
        {"slate_size", cfg.sim.slate_size},
        {"buckets", cfg.sim.buckets},
        {"users", cfg.sim.users},
        {"pages", cfg.sim.pages},
        {"exam_shape", sim::to_string(cfg.sim.exam_shape)},
        {"geometric_ratio", cfg.sim.geometric_ratio},
        {"custom_examination", cfg.sim.custom_examination},
        {"click_range", {cfg.sim.click_lo, cfg.sim.click_hi}},
        {"purchase_range", {cfg.sim.purchase_lo, cfg.sim.purchase_hi}},
        {"intent_range", {cfg.sim.intent_lo, cfg.sim.intent_hi}},
        {"session_gap_minutes", cfg.sim.session_gap_minutes},
        {"feature_noise", cfg.sim.feature_noise},
        {"platforms", cfg.sim.platforms},
    };
    j["collect"] = {
        {"uniform_pages", cfg.collect.uniform_pages},
        {"thompson_pages", cfg.collect.thompson_pages},
        {"production_pages", cfg.collect.production_pages},
        {"strategy", collect::to_string(cfg.collect.collector.strategy)},
        {"demotion_factor", cfg.collect.collector.demotion_factor},
        {"prior_alpha", cfg.collect.collector.prior_alpha},
        {"prior_beta", cfg.collect.collector.prior_beta},
        {"batch_period", cfg.collect.collector.batch_period},
        {"propensity_samples", cfg.collect.collector.propensity_samples},
    };
    j["pipeline"] = {
        {"eta", cfg.pipeline.eta},
        {"epsilon", cfg.pipeline.epsilon},
        {"session_gap_minutes", cfg.pipeline.session_gap_minutes},
        {"downsample_ratio", cfg.pipeline.downsample_ratio},
        {"negative_keep_rate", cfg.pipeline.negative_keep_rate},
        {"min_slot_count", cfg.pipeline.min_slot_count},
        {"split", {cfg.pipeline.split.train, cfg.pipeline.split.validation, cfg.pipeline.split.test}},
        {"clip", cfg.pipeline.clip},
        {"log1p_module_columns", cfg.pipeline.log1p_module_columns},
    };
    j["train"] = cfg.train.model.to_json();
    j["train"]["models"] = cfg.train.models;
    j["infer"] = {
        {"beam_width", cfg.infer.beam_width},
        {"start_slot", cfg.infer.start_slot},
        {"diversity", cfg.infer.diversity},
    };
    j["eval"] = {
        {"eval_contexts", cfg.eval.eval_contexts},
        {"dr_clip", cfg.eval.dr_clip},
        {"beam_report_contexts", cfg.eval.beam_report_contexts},
    };
    return j.dump(2);
}

RunConfig load_run_config(const std::string& path, long long seed_override,
                          const std::string& out_override) {
    std::ifstream check(path);
    if (!check.good()) throw MissingInputError("config file not found: " + path);
    std::ostringstream buffer;
    buffer << check.rdbuf();
    RunConfig cfg = run_config_from_json(buffer.str());
    if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
        cfg.sim.seed = cfg.seed;
        cfg.collect.collector.seed = cfg.seed;
        cfg.train.model.seed = cfg.seed;
    }
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

}  // namespace pageopt

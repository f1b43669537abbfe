#include "pageopt/stages.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>

#include "pageopt/collector.hpp"
#include "pageopt/errors.hpp"
#include "pageopt/eval.hpp"
#include "pageopt/io.hpp"
#include "pageopt/simulator.hpp"
#include "pageopt/trnn.hpp"

namespace pageopt::stages {
namespace {

using nlohmann::json;

sim::World load_world(const Paths& paths) {
    return sim::world_from_json(io::read_text_file(paths.world()));
}

pipe::Dataset load_dataset(const Paths& paths) {
    pipe::Dataset dataset = pipe::norm_stats_from_json(io::read_text_file(paths.norm_stats()));
    dataset.pages = io::read_dataset_pages(paths.dataset());
    return dataset;
}

std::vector<PageContext> sample_eval_contexts(const sim::World& world, int count,
                                              std::uint64_t seed) {
    RngStream root = RngStream(seed).derive("eval-contexts");
    std::vector<PageContext> contexts;
    contexts.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        RngStream rng = root.derive("ctx", static_cast<std::uint64_t>(i));
        PageContext ctx = sim::sample_page_context(world, rng);
        ctx.context_id = i;
        contexts.push_back(std::move(ctx));
    }
    return contexts;
}

struct LoadedModels {
    std::map<std::string, std::unique_ptr<trnn::RankerModel>> by_name;
    std::unique_ptr<trnn::TrnnModel> trnn;
    std::unique_ptr<trnn::TrnnModel> trnn_noips;
    std::unique_ptr<trnn::MlpModel> mlp;
    std::unique_ptr<trnn::PopularityModel> popularity;
};

LoadedModels load_models(const RunConfig& cfg, const Paths& paths,
                         const pipe::Dataset& dataset) {
    LoadedModels models;
    for (const std::string& name : cfg.train.models) {
        if (name == "trnn") {
            models.trnn = trnn::TrnnModel::load(paths.checkpoint("trnn"));
            models.trnn->precompute_module_embeddings(dataset.catalog_features);
            models.by_name[name] = nullptr;
        } else if (name == "trnn_noips") {
            models.trnn_noips = trnn::TrnnModel::load(paths.checkpoint("trnn_noips"));
            models.trnn_noips->precompute_module_embeddings(dataset.catalog_features);
            models.by_name[name] = nullptr;
        } else if (name == "mlp") {
            models.mlp = trnn::MlpModel::load(paths.checkpoint("mlp"));
            models.mlp->precompute_module_embeddings(dataset.catalog_features);
            models.by_name[name] = nullptr;
        } else if (name == "popularity") {
            models.popularity = std::make_unique<trnn::PopularityModel>(
                trnn::PopularityModel::from_json(io::read_text_file(paths.popularity())));
            models.by_name[name] = nullptr;
        }
    }
    return models;
}

const trnn::RankerModel* model_ptr(const LoadedModels& models, const std::string& name) {
    if (name == "trnn") return models.trnn.get();
    if (name == "trnn_noips") return models.trnn_noips.get();
    if (name == "mlp") return models.mlp.get();
    if (name == "popularity") return models.popularity.get();
    return nullptr;
}

}  // namespace

Paths prepare_out_dir(const RunConfig& cfg) {
    Paths paths{cfg.out_dir};
    std::filesystem::create_directories(cfg.out_dir);
    io::write_text_file(paths.resolved_config(), run_config_to_json(cfg) + "\n");
    return paths;
}

void cmd_simulate(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    sim::World world = sim::gen_world(cfg.sim);
    io::write_text_file(paths.world(), sim::world_to_json(world) + "\n");
    io::write_text_file(paths.catalog(), io::catalog_to_json(world.catalog) + "\n");
}

void cmd_collect(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    sim::World world = load_world(paths);
    collect::CollectionPlan plan;
    plan.uniform_pages = cfg.collect.uniform_pages;
    plan.thompson_pages = cfg.collect.thompson_pages;
    plan.production_pages = cfg.collect.production_pages;
    plan.collector = cfg.collect.collector;
    collect::CollectionResult result = collect::run_collection(world, plan, cfg.seed);
    io::write_pages(paths.pages(), result.pages);
    io::write_events(paths.events(), result.events);
}

void cmd_propensity(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    std::vector<PagePresentation> pages = io::read_pages(paths.pages());
    std::vector<EngagementEvent> events = io::read_events(paths.events());
    std::vector<PagePresentation> uniform_pages;
    for (const PagePresentation& page : pages) {
        if (page.policy_tag == PolicyTag::uniform_random) uniform_pages.push_back(page);
    }
    if (uniform_pages.empty())
        throw DataError("propensity: no uniform-random pages in the log");
    pipe::EventIndex index(events, cfg.sim.slate_size);
    pipe::PropensityTable table = pipe::build_propensity_table(
        uniform_pages, index, cfg.sim.slate_size, cfg.pipeline.min_slot_count);
    io::write_text_file(paths.propensity(), pipe::propensity_to_json(table) + "\n");
}

void cmd_attribute(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    std::vector<PagePresentation> pages = io::read_pages(paths.pages());
    std::vector<EngagementEvent> events = io::read_events(paths.events());
    const pipe::AttributionMap weights =
        pipe::attribute_log(pages, events, cfg.attribution_params());
    std::string out;
    for (const auto& [key, weight] : weights) {
        json j;
        j["page_id"] = key.first;
        j["slot"] = key.second;
        j["weight"] = weight;
        out += j.dump() + "\n";
    }
    io::write_text_file(paths.attribution(), out);
}

namespace {

pipe::AttributionMap read_attribution(const std::string& path) {
    pipe::AttributionMap weights;
    for (const std::string& line : [&] {
             std::vector<std::string> lines;
             std::string text = io::read_text_file(path);
             std::size_t start = 0;
             while (start < text.size()) {
                 std::size_t end = text.find('\n', start);
                 if (end == std::string::npos) end = text.size();
                 if (end > start) lines.push_back(text.substr(start, end - start));
                 start = end + 1;
             }
             return lines;
         }()) {
        json j = json::parse(line);
        weights[{j.at("page_id").get<std::int64_t>(), j.at("slot").get<int>()}] =
            j.at("weight").get<double>();
    }
    return weights;
}

}  // namespace

void cmd_build_dataset(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    std::vector<PagePresentation> pages = io::read_pages(paths.pages());
    std::vector<EngagementEvent> events = io::read_events(paths.events());
    Catalog catalog = io::catalog_from_json(io::read_text_file(paths.catalog()));
    pipe::PropensityTable propensity =
        pipe::propensity_from_json(io::read_text_file(paths.propensity()));
    pipe::AttributionMap attribution = read_attribution(paths.attribution());

    // Training data comes from the Thompson and production phases; the
    // shuffled traffic stays out (it exists for bias estimation).
    std::vector<PagePresentation> training_pages;
    for (PagePresentation& page : pages) {
        if (page.policy_tag != PolicyTag::uniform_random)
            training_pages.push_back(std::move(page));
    }
    pipe::EventIndex index(events, cfg.sim.slate_size);
    RngStream downsample_rng = RngStream(cfg.seed).derive("downsample");
    std::vector<PagePresentation> retained =
        collect::downsample(training_pages, index.pages_with_events(),
                            cfg.pipeline.downsample_ratio, cfg.pipeline.negative_keep_rate,
                            downsample_rng);

    pipe::BuildDatasetParams params;
    params.features.clip = cfg.pipeline.clip;
    params.features.log1p_module_columns = cfg.pipeline.log1p_module_columns;
    params.split = cfg.pipeline.split;
    params.split_seed = cfg.seed;
    pipe::Dataset dataset =
        pipe::build_dataset(retained, events, catalog, propensity, attribution, params,
                            cfg.sim.platforms, cfg.sim.buckets);
    io::write_dataset(paths.dataset(), dataset);
    io::write_text_file(paths.norm_stats(), pipe::norm_stats_to_json(dataset) + "\n");
}

void cmd_train(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    pipe::Dataset dataset = load_dataset(paths);
    pipe::Dataset train = dataset.subset(pipe::kTrain);
    pipe::Dataset validation = dataset.subset(pipe::kValidation);
    trnn::DatasetDims dims = trnn::DatasetDims::from_dataset(dataset);

    json report;
    for (const std::string& name : cfg.train.models) {
        if (name == "popularity") {
            trnn::PopularityModel pop = trnn::popularity_baseline(train.pages);
            io::write_text_file(paths.popularity(), pop.to_json() + "\n");
            continue;
        }
        trnn::TrnnConfig model_cfg = cfg.train.model;
        model_cfg.seed = RngStream(cfg.seed).derive(name).next_u64();
        if (name == "trnn_noips") model_cfg.use_ips = false;
        if (name == "trnn" || name == "trnn_noips") {
            trnn::TrnnModel model(model_cfg, dims);
            trnn::TrainResult result = trnn::train_trnn(model, train, validation);
            model.save(paths.checkpoint(name));
            report[name] = result.report.to_json();
        } else if (name == "mlp") {
            trnn::MlpModel model(model_cfg, dims);
            trnn::TrainResult result = trnn::train_mlp(model, train, validation);
            model.save(paths.checkpoint(name));
            report[name] = result.report.to_json();
            report[name]["trunk_width"] = model.trunk_width();
            report[name]["param_count"] = model.params().total_size();
        }
    }
    io::write_text_file(paths.training_report(), report.dump(2) + "\n");
}

void cmd_rank(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    sim::World world = load_world(paths);
    pipe::Dataset dataset = pipe::norm_stats_from_json(io::read_text_file(paths.norm_stats()));
    Catalog catalog = io::catalog_from_json(io::read_text_file(paths.catalog()));
    auto model = trnn::TrnnModel::load(paths.checkpoint("trnn"));
    model->precompute_module_embeddings(dataset.catalog_features);

    std::vector<int> candidates;
    for (const pipe::CandidateFeatures& m : dataset.catalog_features)
        candidates.push_back(m.module_id);

    infer::RankRequest request{cfg.sim.slate_size, cfg.infer.beam_width, cfg.infer.start_slot,
                               cfg.infer.diversity};
    std::vector<PageContext> contexts =
        sample_eval_contexts(world, cfg.eval.beam_report_contexts, cfg.seed);
    std::string out;
    for (const PageContext& ctx : contexts) {
        trnn::RankInput input = trnn::rank_input_from_context(ctx, dataset.stats);
        infer::RankResult result = model->rank(input, candidates, catalog, request);
        json j;
        j["context_id"] = ctx.context_id;
        j["bucket"] = ctx.context_bucket;
        j["slots"] = result.slots;
        j["score"] = result.score;
        j["diversity_relaxed"] = result.diversity_relaxed;
        json trace = json::array();
        for (const infer::SlotTrace& t : result.trace) {
            trace.push_back({{"module_id", t.module_id},
                             {"p_purchase", t.p_purchase},
                             {"score_after", t.score_after}});
        }
        j["trace"] = trace;
        out += j.dump() + "\n";
    }
    io::write_text_file(paths.slates(), out);
}

json cmd_evaluate(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    sim::World world = load_world(paths);
    Catalog catalog = io::catalog_from_json(io::read_text_file(paths.catalog()));
    pipe::Dataset dataset = load_dataset(paths);
    pipe::PropensityTable propensity =
        pipe::propensity_from_json(io::read_text_file(paths.propensity()));
    LoadedModels models = load_models(cfg, paths, dataset);

    std::vector<const pipe::PageExample*> test_pages;
    for (const pipe::PageExample& page : dataset.pages) {
        if (page.split == pipe::kTest) test_pages.push_back(&page);
    }

    std::vector<int> candidates;
    for (const pipe::CandidateFeatures& m : dataset.catalog_features)
        candidates.push_back(m.module_id);

    const int k = cfg.sim.slate_size;
    infer::RankRequest request{k, cfg.infer.beam_width, cfg.infer.start_slot,
                               cfg.infer.diversity};
    infer::RankRequest rerank_request{k, 1, 1, false};

    std::vector<PageContext> eval_contexts =
        sample_eval_contexts(world, cfg.eval.eval_contexts, cfg.seed);

    eval::EvalReport report;
    report.config_echo = run_config_to_json(cfg);
    json summary;
    summary["version"] = kToolVersion;
    summary["counts"] = {{"dataset_pages", dataset.pages.size()},
                         {"test_pages", test_pages.size()},
                         {"eval_contexts", eval_contexts.size()}};

    // DM/DR run on a deterministic subsample so the beam-search target policy
    // stays affordable on big test splits.
    const std::size_t dmdr_limit = 2000;
    std::vector<const pipe::PageExample*> dmdr_pages(
        test_pages.begin(),
        test_pages.begin() + std::min(dmdr_limit, test_pages.size()));

    for (const std::string& name : cfg.train.models) {
        const trnn::RankerModel* model = model_ptr(models, name);
        if (model == nullptr) throw MissingInputError("evaluate: model " + name + " not loaded");

        // Classification metrics on the logged test impressions.
        std::vector<double> purchase_preds, click_preds;
        std::vector<int> purchase_labels, click_labels;
        std::vector<double> ndcg_values;
        std::vector<int> first_purchase_ranks;
        for (const pipe::PageExample* page : test_pages) {
            trnn::RankInput input = trnn::rank_input_from_example(*page);
            std::vector<int> logged;
            for (const LabeledSlot& s : page->slots) logged.push_back(s.module_id);
            std::vector<trnn::HeadProbs> probs = model->predict_slate(input, logged);
            for (std::size_t s = 0; s < logged.size(); ++s) {
                purchase_preds.push_back(probs[s].purchase_like());
                purchase_labels.push_back(page->slots[s].y_purchase);
                if (!std::isnan(probs[s].click)) {
                    click_preds.push_back(probs[s].click);
                    click_labels.push_back(page->slots[s].y_click);
                }
            }

            // Rerank the logged impression for the ranking metrics.
            std::vector<int> page_candidates = logged;
            infer::RankResult reranked =
                model->rank(input, page_candidates, catalog, rerank_request);
            std::map<int, const LabeledSlot*> by_module;
            for (const LabeledSlot& s : page->slots) by_module[s.module_id] = &s;
            std::vector<double> gains;
            int first_rank = 0;
            for (std::size_t r = 0; r < reranked.slots.size(); ++r) {
                const LabeledSlot* s = by_module.at(reranked.slots[r]);
                gains.push_back(s->y_purchase);
                if (s->y_purchase && first_rank == 0) first_rank = static_cast<int>(r) + 1;
            }
            ndcg_values.push_back(eval::ndcg_at_k(gains, k));
            if (first_rank > 0) first_purchase_ranks.push_back(first_rank);
        }
        const double ndcg =
            ndcg_values.empty()
                ? 0.0
                : std::accumulate(ndcg_values.begin(), ndcg_values.end(), 0.0) /
                      static_cast<double>(ndcg_values.size());
        eval::BinaryClassStats cls = eval::f1_auc(purchase_preds, purchase_labels);
        summary["ndcg_purchase"][name] = ndcg;
        summary["mrpr"][name] = eval::mrpr(first_purchase_ranks);
        summary["f1_purchase"][name] = cls.f1;
        if (cls.auc) summary["auc_purchase"][name] = *cls.auc;
        if (!click_preds.empty()) {
            eval::BinaryClassStats click_cls = eval::f1_auc(click_preds, click_labels);
            if (click_cls.auc) summary["auc_click"][name] = *click_cls.auc;
        }
        report.set(name + ".ndcg_purchase", ndcg,
                   static_cast<std::int64_t>(ndcg_values.size()));
        report.set(name + ".mrpr", summary["mrpr"][name].get<double>(),
                   static_cast<std::int64_t>(first_purchase_ranks.size()));
        report.set(name + ".f1_purchase", cls.f1);
        if (cls.auc) report.set(name + ".auc_purchase", *cls.auc);

        // Simulator-oracle value of the slates the model would show.
        double oracle_ctr = 0.0, oracle_ptr = 0.0;
        for (const PageContext& ctx : eval_contexts) {
            trnn::RankInput input = trnn::rank_input_from_context(ctx, dataset.stats);
            infer::RankResult ranked = model->rank(input, candidates, catalog, request);
            oracle_ctr += sim::oracle_slate_value(world, ctx.context_bucket, ranked.slots,
                                                  sim::PageMetric::ctr);
            oracle_ptr += sim::oracle_slate_value(world, ctx.context_bucket, ranked.slots,
                                                  sim::PageMetric::ptr);
        }
        oracle_ctr /= static_cast<double>(eval_contexts.size());
        oracle_ptr /= static_cast<double>(eval_contexts.size());
        summary["oracle_ctr"][name] = oracle_ctr;
        summary["oracle_ptr"][name] = oracle_ptr;
        report.set(name + ".oracle_ctr", oracle_ctr,
                   static_cast<std::int64_t>(eval_contexts.size()));
        report.set(name + ".oracle_ptr", oracle_ptr,
                   static_cast<std::int64_t>(eval_contexts.size()));

        // Unbiased off-policy estimates of the same policy from the logged
        // test pages, model as its own reward model.
        for (const auto level : {sim::PageMetric::ctr, sim::PageMetric::ptr}) {
            const bool is_ctr = level == sim::PageMetric::ctr;
            std::vector<eval::DmDrPage> dmdr;
            for (const pipe::PageExample* page : dmdr_pages) {
                trnn::RankInput input = trnn::rank_input_from_example(*page);
                eval::DmDrPage row;
                for (const LabeledSlot& s : page->slots) {
                    row.logged_slots.push_back(s.module_id);
                    row.observed.push_back(is_ctr ? s.y_click : s.y_purchase);
                }
                row.logging_propensities = page->slot_propensities;
                row.target_slots = model->rank(input, candidates, catalog, request).slots;
                auto collect_preds = [&](const std::vector<int>& slots) {
                    std::vector<double> preds;
                    for (const trnn::HeadProbs& p : model->predict_slate(input, slots)) {
                        preds.push_back(is_ctr && !std::isnan(p.click) ? p.click
                                                                       : p.purchase_like());
                    }
                    return preds;
                };
                row.model_pred_target = collect_preds(row.target_slots);
                row.model_pred_logged = collect_preds(row.logged_slots);
                dmdr.push_back(std::move(row));
            }
            const std::vector<double>& position =
                is_ctr ? propensity.click.propensity : propensity.purchase.propensity;
            const double dm = eval::dm_estimate(dmdr, position);
            eval::DrResult dr = eval::dr_estimate(dmdr, position, cfg.eval.dr_clip);
            const std::string level_name = is_ctr ? "ctr" : "ptr";
            summary["dm_" + level_name][name] = dm;
            summary["dr_" + level_name][name] = dr.clipped;
            summary["dr_" + level_name + "_unclipped"][name] = dr.unclipped;
            report.set(name + ".dm_" + level_name, dm,
                       static_cast<std::int64_t>(dmdr.size()));
            report.set(name + ".dr_" + level_name, dr.clipped,
                       static_cast<std::int64_t>(dmdr.size()), 1.96 * dr.std_error);
        }
    }

    // Beam vs greedy on the flagship model.
    if (models.trnn != nullptr) {
        const int n = std::min<int>(cfg.eval.beam_report_contexts,
                                    static_cast<int>(eval_contexts.size()));
        double greedy_phi = 0.0, beam_phi = 0.0, greedy_oracle = 0.0, beam_oracle = 0.0;
        bool dominated = true;
        for (int i = 0; i < n; ++i) {
            const PageContext& ctx = eval_contexts[static_cast<std::size_t>(i)];
            trnn::RankInput input = trnn::rank_input_from_context(ctx, dataset.stats);
            infer::RankRequest greedy_request{k, 1, cfg.infer.start_slot, cfg.infer.diversity};
            infer::RankRequest beam_request{k, 3, cfg.infer.start_slot, cfg.infer.diversity};
            infer::RankResult g = models.trnn->rank(input, candidates, catalog, greedy_request);
            infer::RankResult b = models.trnn->rank(input, candidates, catalog, beam_request);
            greedy_phi += g.score;
            beam_phi += b.score;
            dominated = dominated && b.score >= g.score;
            greedy_oracle += sim::oracle_slate_value(world, ctx.context_bucket, g.slots,
                                                     sim::PageMetric::ptr);
            beam_oracle += sim::oracle_slate_value(world, ctx.context_bucket, b.slots,
                                                   sim::PageMetric::ptr);
        }
        if (n > 0) {
            summary["beam_vs_greedy"] = {{"contexts", n},
                                         {"mean_phi_w1", greedy_phi / n},
                                         {"mean_phi_w3", beam_phi / n},
                                         {"beam_dominates_greedy", dominated},
                                         {"mean_oracle_ptr_w1", greedy_oracle / n},
                                         {"mean_oracle_ptr_w3", beam_oracle / n}};
        }
    }

    io::write_text_file(paths.eval_report(), report.to_json() + "\n");
    io::write_text_file(paths.metrics_csv(), report.to_csv());
    return summary;
}

json cmd_e2e(const RunConfig& cfg) {
    Paths paths = prepare_out_dir(cfg);
    cmd_simulate(cfg);
    cmd_collect(cfg);
    cmd_propensity(cfg);
    cmd_attribute(cfg);
    cmd_build_dataset(cfg);
    cmd_train(cfg);
    cmd_rank(cfg);
    json summary = cmd_evaluate(cfg);
    io::write_text_file(paths.summary(), summary.dump(2) + "\n");
    return summary;
}

}  // namespace pageopt::stages

#include "pageopt/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "pageopt/errors.hpp"

namespace pageopt::pipe {
namespace {

using nlohmann::json;

bool event_before(const EngagementEvent& a, const EngagementEvent& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.page_id != b.page_id) return a.page_id < b.page_id;
    if (a.slot != b.slot) return a.slot < b.slot;
    return static_cast<int>(a.event_type) < static_cast<int>(b.event_type);
}

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

}  // namespace

std::vector<Session> sessionize(std::int64_t user_id, std::vector<EngagementEvent> events,
                                double gap_minutes) {
    std::sort(events.begin(), events.end(), event_before);
    const double gap_seconds = gap_minutes * 60.0;
    std::vector<Session> sessions;
    for (const EngagementEvent& event : events) {
        if (sessions.empty() ||
            event.timestamp - sessions.back().events.back().timestamp > gap_seconds) {
            sessions.push_back({user_id, {}});
        }
        sessions.back().events.push_back(event);
    }
    return sessions;
}

double attribution_weight(const AttributionParams& params, double dt_seconds) {
    const double scale = params.epsilon * params.gap_minutes * 60.0;
    return std::pow(params.eta, dt_seconds / scale);
}

std::map<std::pair<std::int64_t, int>, double> attribute_purchase_intent(
    const Session& session, const AttributionParams& params) {
    std::map<std::pair<std::int64_t, int>, double> weights;
    for (const EngagementEvent& click : session.events) {
        if (click.event_type != EventType::click) continue;
        double best = 0.0;
        bool any = false;
        for (const EngagementEvent& purchase : session.events) {
            if (purchase.event_type != EventType::purchase) continue;
            if (purchase.timestamp < click.timestamp) continue;
            best = std::max(best,
                            attribution_weight(params, purchase.timestamp - click.timestamp));
            any = true;
        }
        if (!any) continue;
        auto key = std::make_pair(click.page_id, click.slot);
        auto it = weights.find(key);
        if (it == weights.end() || it->second < best) weights[key] = best;
    }
    return weights;
}

std::map<std::pair<std::int64_t, int>, double> attribute_log(
    const std::vector<PagePresentation>& pages, const std::vector<EngagementEvent>& events,
    const AttributionParams& params) {
    std::map<std::int64_t, std::int64_t> page_user;
    for (const PagePresentation& page : pages) page_user[page.page_id] = page.context.context_id;

    std::map<std::int64_t, std::vector<EngagementEvent>> by_user;
    for (const EngagementEvent& event : events) {
        auto it = page_user.find(event.page_id);
        if (it == page_user.end())
            throw DataError("attribute_log: event references unknown page " +
                            std::to_string(event.page_id));
        by_user[it->second].push_back(event);
    }

    std::map<std::pair<std::int64_t, int>, double> weights;
    for (auto& [user, user_events] : by_user) {
        for (const Session& session : sessionize(user, std::move(user_events), params.gap_minutes)) {
            for (const auto& [key, w] : attribute_purchase_intent(session, params)) {
                auto it = weights.find(key);
                if (it == weights.end() || it->second < w) weights[key] = w;
            }
        }
    }
    return weights;
}

const SlotOutcome EventIndex::kEmpty{};

EventIndex::EventIndex(const std::vector<EngagementEvent>& events, int slate_size)
    : slate_size_(slate_size) {
    for (const EngagementEvent& event : events) {
        if (event.slot < 1 || event.slot > slate_size) continue;
        auto& slots = by_page_[event.page_id];
        if (slots.empty()) slots.resize(static_cast<std::size_t>(slate_size));
        SlotOutcome& o = slots[static_cast<std::size_t>(event.slot - 1)];
        switch (event.event_type) {
            case EventType::click: o.clicked = true; break;
            case EventType::watch:
            case EventType::add_to_cart: o.intent = true; break;
            case EventType::purchase: o.purchased = true; break;
        }
    }
}

const SlotOutcome& EventIndex::outcome(std::int64_t page_id, int slot) const {
    auto it = by_page_.find(page_id);
    if (it == by_page_.end()) return kEmpty;
    if (slot < 1 || slot > slate_size_) return kEmpty;
    return it->second[static_cast<std::size_t>(slot - 1)];
}

bool EventIndex::page_has_click(std::int64_t page_id) const {
    auto it = by_page_.find(page_id);
    if (it == by_page_.end()) return false;
    for (const SlotOutcome& o : it->second) {
        if (o.clicked) return true;
    }
    return false;
}

bool EventIndex::page_has_any_event(std::int64_t page_id) const {
    return by_page_.count(page_id) > 0;
}

std::set<std::int64_t> EventIndex::pages_with_events() const {
    std::set<std::int64_t> pages;
    for (const auto& [page_id, slots] : by_page_) pages.insert(page_id);
    return pages;
}

PropensityColumn estimate_propensity(const std::vector<PagePresentation>& uniform_pages,
                                     const EventIndex& index, int slate_size,
                                     PropensityLevel level, std::int64_t min_count) {
    PropensityColumn col;
    col.propensity.resize(static_cast<std::size_t>(slate_size));
    col.ips.resize(static_cast<std::size_t>(slate_size));
    col.impressions.assign(static_cast<std::size_t>(slate_size), 0);
    col.positives.assign(static_cast<std::size_t>(slate_size), 0);
    for (const PagePresentation& page : uniform_pages) {
        for (int s = 1; s <= static_cast<int>(page.slots.size()) && s <= slate_size; ++s) {
            ++col.impressions[static_cast<std::size_t>(s - 1)];
            const SlotOutcome& o = index.outcome(page.page_id, s);
            const bool positive = level == PropensityLevel::click ? o.clicked : o.purchased;
            if (positive) ++col.positives[static_cast<std::size_t>(s - 1)];
        }
    }
    for (int s = 1; s <= slate_size; ++s) {
        const std::size_t i = static_cast<std::size_t>(s - 1);
        if (col.impressions[i] < min_count)
            throw DataError("estimate_propensity: slot " + std::to_string(s) + " has " +
                            std::to_string(col.impressions[i]) + " impressions, need " +
                            std::to_string(min_count));
        if (col.positives[i] == 0)
            throw DataError("estimate_propensity: slot " + std::to_string(s) +
                            " has no positive events");
    }
    const double base = static_cast<double>(col.positives[0]) /
                        static_cast<double>(col.impressions[0]);
    for (int s = 1; s <= slate_size; ++s) {
        const std::size_t i = static_cast<std::size_t>(s - 1);
        const double rate = static_cast<double>(col.positives[i]) /
                            static_cast<double>(col.impressions[i]);
        double p = s == 1 ? 1.0 : rate / base;
        p = std::min(p, 1.0);
        col.propensity[i] = p;
        col.ips[i] = 1.0 / p;
    }
    return col;
}

PropensityTable build_propensity_table(const std::vector<PagePresentation>& uniform_pages,
                                       const EventIndex& index, int slate_size,
                                       std::int64_t min_count) {
    PropensityTable table;
    table.slate_size = slate_size;
    table.click = estimate_propensity(uniform_pages, index, slate_size, PropensityLevel::click,
                                      min_count);
    table.purchase = estimate_propensity(uniform_pages, index, slate_size,
                                         PropensityLevel::purchase, min_count);
    return table;
}

namespace {

json column_to_json(const PropensityColumn& col) {
    return {{"propensity", col.propensity},
            {"ips", col.ips},
            {"impressions", col.impressions},
            {"positives", col.positives}};
}

PropensityColumn column_from_json(const json& j) {
    PropensityColumn col;
    col.propensity = j.at("propensity").get<std::vector<double>>();
    col.ips = j.at("ips").get<std::vector<double>>();
    col.impressions = j.at("impressions").get<std::vector<std::int64_t>>();
    col.positives = j.at("positives").get<std::vector<std::int64_t>>();
    return col;
}

}  // namespace

std::string propensity_to_json(const PropensityTable& table) {
    json j;
    j["slate_size"] = table.slate_size;
    j["click"] = column_to_json(table.click);
    j["purchase"] = column_to_json(table.purchase);
    return j.dump(2);
}

PropensityTable propensity_from_json(const std::string& text) {
    json j = json::parse(text);
    PropensityTable table;
    table.slate_size = j.at("slate_size").get<int>();
    table.click = column_from_json(j.at("click"));
    table.purchase = column_from_json(j.at("purchase"));
    return table;
}

double normalize_value(const ColumnStat& stat, double raw) {
    const double t = stat.log1p ? std::log1p(raw) : raw;
    const double z = (t - stat.mean) / stat.scale;
    return std::clamp(z, -stat.clip, stat.clip);
}

double denormalize_value(const ColumnStat& stat, double normalized) {
    const double t = normalized * stat.scale + stat.mean;
    return stat.log1p ? std::expm1(t) : t;
}

std::map<std::int64_t, int> split_dataset(const std::vector<std::int64_t>& page_ids,
                                          const SplitFractions& fractions, std::uint64_t seed) {
    const double sum = fractions.train + fractions.validation + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    std::vector<std::pair<std::uint64_t, std::int64_t>> hashed;
    hashed.reserve(page_ids.size());
    for (std::int64_t id : page_ids) {
        hashed.emplace_back(mix64(seed ^ mix64(static_cast<std::uint64_t>(id))), id);
    }
    std::sort(hashed.begin(), hashed.end());
    const auto n = static_cast<double>(hashed.size());
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions.validation * n));
    std::map<std::int64_t, int> assignment;
    for (std::size_t i = 0; i < hashed.size(); ++i) {
        int split = kTest;
        if (i < n_train) split = kTrain;
        else if (i < n_train + n_val) split = kValidation;
        assignment[hashed[i].second] = split;
    }
    return assignment;
}

Dataset Dataset::subset(int split) const {
    Dataset out = *this;
    out.pages.clear();
    for (const PageExample& page : pages) {
        if (page.split == split) out.pages.push_back(page);
    }
    return out;
}

std::size_t Dataset::count(int split) const {
    std::size_t n = 0;
    for (const PageExample& page : pages) n += page.split == split ? 1 : 0;
    return n;
}

namespace {

struct ColumnAccumulator {
    std::vector<double> sum, sum_sq;
    std::int64_t n = 0;

    void init(std::size_t cols) {
        sum.assign(cols, 0.0);
        sum_sq.assign(cols, 0.0);
        n = 0;
    }
    void add(const FeatureVec& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            sum[c] += row[c];
            sum_sq[c] += row[c] * row[c];
        }
        ++n;
    }
    ColumnStat stat(std::size_t c, double clip, bool log1p) const {
        ColumnStat s;
        s.clip = clip;
        s.log1p = log1p;
        if (n > 0) {
            s.mean = sum[c] / static_cast<double>(n);
            const double var = std::max(0.0, sum_sq[c] / static_cast<double>(n) - s.mean * s.mean);
            s.scale = std::max(std::sqrt(var), 1e-9);
        }
        return s;
    }
};

FeatureVec context_raw(const PageContext& ctx) {
    FeatureVec row = ctx.user_features;
    row.insert(row.end(), ctx.hero_item_features.begin(), ctx.hero_item_features.end());
    return row;
}

FeatureVec module_raw(const ModuleCandidate& module, double hist_ctr,
                      const std::vector<int>& log1p_cols) {
    FeatureVec row = module.features;
    row.push_back(hist_ctr);
    for (int c : log1p_cols) {
        if (c < 0 || c >= static_cast<int>(row.size()))
            throw ConfigError("build_dataset: log1p column " + std::to_string(c) +
                              " out of range (unknown feature)");
    }
    return row;
}

FeatureVec normalize_row(const FeatureVec& raw, const std::vector<ColumnStat>& stats) {
    FeatureVec out(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) out[c] = normalize_value(stats[c], raw[c]);
    return out;
}

}  // namespace

Dataset build_dataset(const std::vector<PagePresentation>& pages,
                      const std::vector<EngagementEvent>& events, const Catalog& catalog,
                      const PropensityTable& propensity, const AttributionMap& attribution,
                      const BuildDatasetParams& params, int platform_count, int bucket_count) {
    if (pages.empty()) throw DataError("build_dataset: no pages");
    const int slate_size = static_cast<int>(pages.front().slots.size());
    if (propensity.slate_size < slate_size)
        throw DataError("build_dataset: missing propensity for slots beyond " +
                        std::to_string(propensity.slate_size));
    EventIndex index(events, slate_size);

    std::vector<std::int64_t> page_ids;
    page_ids.reserve(pages.size());
    for (const PagePresentation& page : pages) page_ids.push_back(page.page_id);
    const auto split = split_dataset(page_ids, params.split, params.split_seed);

    // Historical module CTR from the training portion only.
    std::map<int, std::pair<std::int64_t, std::int64_t>> exposure;  // module -> (imps, clicks)
    for (const PagePresentation& page : pages) {
        if (split.at(page.page_id) != kTrain) continue;
        for (int s = 1; s <= static_cast<int>(page.slots.size()); ++s) {
            auto& [imps, clicks] = exposure[page.slots[static_cast<std::size_t>(s - 1)]];
            ++imps;
            clicks += index.outcome(page.page_id, s).clicked ? 1 : 0;
        }
    }
    auto hist_ctr = [&exposure](int module_id) {
        auto it = exposure.find(module_id);
        const std::int64_t imps = it == exposure.end() ? 0 : it->second.first;
        const std::int64_t clicks = it == exposure.end() ? 0 : it->second.second;
        return static_cast<double>(clicks + 1) / static_cast<double>(imps + 2);
    };

    // Normalization statistics on train-split rows only, after transforms.
    const std::size_t module_dim = catalog.modules().front().features.size() + 1;
    std::vector<bool> log1p_flags(module_dim, false);
    for (int c : params.features.log1p_module_columns) {
        if (c < 0 || c >= static_cast<int>(module_dim))
            throw ConfigError("build_dataset: log1p column " + std::to_string(c) +
                              " unknown (module_dim=" + std::to_string(module_dim) + ")");
        log1p_flags[static_cast<std::size_t>(c)] = true;
    }
    auto transform_module_row = [&](FeatureVec row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (log1p_flags[c]) row[c] = std::log1p(row[c]);
        }
        return row;
    };

    ColumnAccumulator ctx_acc, mod_acc;
    ctx_acc.init(context_raw(pages.front().context).size());
    mod_acc.init(module_dim);
    for (const PagePresentation& page : pages) {
        if (split.at(page.page_id) != kTrain) continue;
        ctx_acc.add(context_raw(page.context));
        for (int module_id : page.slots) {
            const ModuleCandidate* module = catalog.find_module(module_id);
            if (module == nullptr)
                throw DataError("build_dataset: unknown module " + std::to_string(module_id));
            mod_acc.add(transform_module_row(
                module_raw(*module, hist_ctr(module_id), params.features.log1p_module_columns)));
        }
    }

    Dataset dataset;
    dataset.slate_size = slate_size;
    dataset.platform_count = platform_count;
    dataset.bucket_count = bucket_count;
    dataset.family_count = static_cast<int>(catalog.families().size());
    dataset.context_dim = static_cast<int>(ctx_acc.sum.size());
    dataset.module_dim = static_cast<int>(module_dim);
    dataset.stats.context_cols.resize(ctx_acc.sum.size());
    for (std::size_t c = 0; c < ctx_acc.sum.size(); ++c) {
        dataset.stats.context_cols[c] = ctx_acc.stat(c, params.features.clip, false);
    }
    dataset.stats.module_cols.resize(module_dim);
    for (std::size_t c = 0; c < module_dim; ++c) {
        dataset.stats.module_cols[c] = mod_acc.stat(c, params.features.clip, log1p_flags[c]);
    }

    auto normalized_module = [&](const ModuleCandidate& module) {
        CandidateFeatures cf;
        cf.module_id = module.module_id;
        cf.family_id = module.family_id;
        // normalize_value applies log1p itself, so feed the raw row here.
        cf.features = normalize_row(
            module_raw(module, hist_ctr(module.module_id), params.features.log1p_module_columns),
            dataset.stats.module_cols);
        return cf;
    };

    for (const ModuleCandidate& module : catalog.modules()) {
        dataset.catalog_features.push_back(normalized_module(module));
    }

    dataset.pages.reserve(pages.size());
    for (const PagePresentation& page : pages) {
        PageExample example;
        example.page_id = page.page_id;
        example.split = split.at(page.page_id);
        example.policy_tag = page.policy_tag;
        example.bucket = page.context.context_bucket;
        example.platform = page.context.platform;
        example.context_features = normalize_row(context_raw(page.context),
                                                 dataset.stats.context_cols);
        example.slot_propensities = page.slot_propensities;
        for (int s = 1; s <= static_cast<int>(page.slots.size()); ++s) {
            const int module_id = page.slots[static_cast<std::size_t>(s - 1)];
            const ModuleCandidate* module = catalog.find_module(module_id);
            if (module == nullptr)
                throw DataError("build_dataset: unknown module " + std::to_string(module_id));
            example.candidates.push_back(normalized_module(*module));
            const SlotOutcome& o = index.outcome(page.page_id, s);
            LabeledSlot slot;
            slot.module_id = module_id;
            slot.slot = s;
            slot.y_click = o.clicked ? 1 : 0;
            slot.y_intent = o.intent ? 1 : 0;
            slot.y_purchase = o.purchased ? 1 : 0;
            auto it = attribution.find({page.page_id, s});
            slot.y_attributed_purchase = it == attribution.end() ? 0.0 : it->second;
            slot.ips_click = propensity.click.ips[static_cast<std::size_t>(s - 1)];
            slot.ips_purchase = propensity.purchase.ips[static_cast<std::size_t>(s - 1)];
            example.slots.push_back(slot);
        }
        dataset.pages.push_back(std::move(example));
    }
    return dataset;
}

namespace {

json candidate_to_json(const CandidateFeatures& cf) {
    return {{"module_id", cf.module_id}, {"family_id", cf.family_id}, {"features", cf.features}};
}

CandidateFeatures candidate_from_json(const json& j) {
    CandidateFeatures cf;
    cf.module_id = j.at("module_id").get<int>();
    cf.family_id = j.at("family_id").get<int>();
    cf.features = j.at("features").get<FeatureVec>();
    return cf;
}

json stat_to_json(const ColumnStat& s) {
    return {{"mean", s.mean}, {"scale", s.scale}, {"clip", s.clip}, {"log1p", s.log1p}};
}

ColumnStat stat_from_json(const json& j) {
    ColumnStat s;
    s.mean = j.at("mean").get<double>();
    s.scale = j.at("scale").get<double>();
    s.clip = j.at("clip").get<double>();
    s.log1p = j.at("log1p").get<bool>();
    return s;
}

}  // namespace

std::string dataset_page_to_json(const PageExample& page) {
    json j;
    j["page_id"] = page.page_id;
    j["split"] = page.split;
    j["policy_tag"] = to_string(page.policy_tag);
    j["bucket"] = page.bucket;
    j["platform"] = page.platform;
    j["context_features"] = page.context_features;
    json candidates = json::array();
    for (const CandidateFeatures& cf : page.candidates) candidates.push_back(candidate_to_json(cf));
    j["candidates"] = candidates;
    json slots = json::array();
    for (const LabeledSlot& s : page.slots) {
        slots.push_back({{"module_id", s.module_id},
                         {"slot", s.slot},
                         {"y_click", s.y_click},
                         {"y_intent", s.y_intent},
                         {"y_purchase", s.y_purchase},
                         {"y_attributed_purchase", s.y_attributed_purchase},
                         {"ips_click", s.ips_click},
                         {"ips_purchase", s.ips_purchase}});
    }
    j["slots"] = slots;
    j["slot_propensities"] = page.slot_propensities;
    return j.dump();
}

PageExample dataset_page_from_json(const std::string& line) {
    json j = json::parse(line);
    PageExample page;
    page.page_id = j.at("page_id").get<std::int64_t>();
    page.split = j.at("split").get<int>();
    auto tag = policy_tag_from(j.at("policy_tag").get<std::string>());
    if (!tag) throw SchemaError("dataset: unknown policy_tag");
    page.policy_tag = *tag;
    page.bucket = j.at("bucket").get<int>();
    page.platform = j.at("platform").get<int>();
    page.context_features = j.at("context_features").get<FeatureVec>();
    for (const auto& c : j.at("candidates")) page.candidates.push_back(candidate_from_json(c));
    for (const auto& s : j.at("slots")) {
        LabeledSlot slot;
        slot.module_id = s.at("module_id").get<int>();
        slot.slot = s.at("slot").get<int>();
        slot.y_click = s.at("y_click").get<int>();
        slot.y_intent = s.at("y_intent").get<int>();
        slot.y_purchase = s.at("y_purchase").get<int>();
        slot.y_attributed_purchase = s.at("y_attributed_purchase").get<double>();
        slot.ips_click = s.at("ips_click").get<double>();
        slot.ips_purchase = s.at("ips_purchase").get<double>();
        page.slots.push_back(slot);
    }
    page.slot_propensities = j.at("slot_propensities").get<std::vector<double>>();
    return page;
}

std::string norm_stats_to_json(const Dataset& dataset) {
    json j;
    json ctx_cols = json::array();
    for (const ColumnStat& s : dataset.stats.context_cols) ctx_cols.push_back(stat_to_json(s));
    json mod_cols = json::array();
    for (const ColumnStat& s : dataset.stats.module_cols) mod_cols.push_back(stat_to_json(s));
    j["context_cols"] = ctx_cols;
    j["module_cols"] = mod_cols;
    json catalog = json::array();
    for (const CandidateFeatures& cf : dataset.catalog_features) {
        catalog.push_back(candidate_to_json(cf));
    }
    j["catalog_features"] = catalog;
    j["slate_size"] = dataset.slate_size;
    j["context_dim"] = dataset.context_dim;
    j["module_dim"] = dataset.module_dim;
    j["family_count"] = dataset.family_count;
    j["platform_count"] = dataset.platform_count;
    j["bucket_count"] = dataset.bucket_count;
    return j.dump(2);
}

Dataset norm_stats_from_json(const std::string& text) {
    json j = json::parse(text);
    Dataset dataset;
    for (const auto& s : j.at("context_cols")) dataset.stats.context_cols.push_back(stat_from_json(s));
    for (const auto& s : j.at("module_cols")) dataset.stats.module_cols.push_back(stat_from_json(s));
    for (const auto& c : j.at("catalog_features")) {
        dataset.catalog_features.push_back(candidate_from_json(c));
    }
    dataset.slate_size = j.at("slate_size").get<int>();
    dataset.context_dim = j.at("context_dim").get<int>();
    dataset.module_dim = j.at("module_dim").get<int>();
    dataset.family_count = j.at("family_count").get<int>();
    dataset.platform_count = j.at("platform_count").get<int>();
    dataset.bucket_count = j.at("bucket_count").get<int>();
    return dataset;
}

}  // namespace pageopt::pipe

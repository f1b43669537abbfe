#include "pageopt/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "pageopt/errors.hpp"

namespace pageopt::sim {
namespace {

using nlohmann::json;

constexpr int kLatentDim = 4;
constexpr double kClickSlotDelaySeconds = 2.0;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot(const FeatureVec& a, const FeatureVec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

FeatureVec random_latent(RngStream& rng, int dim) {
    FeatureVec v(dim);
    for (double& x : v) x = rng.normal();
    return v;
}

// Squashes a latent score into [lo, hi]. The 0.75 slope keeps the sigmoid off
// its saturated tails so the planted probabilities stay spread and learnable.
double planted_prob(double score, double lo, double hi) {
    return lo + (hi - lo) * sigmoid(0.75 * score);
}

}  // namespace

std::string to_string(ExaminationShape shape) {
    switch (shape) {
        case ExaminationShape::log_decay: return "log_decay";
        case ExaminationShape::geometric: return "geometric";
        case ExaminationShape::custom: return "custom";
    }
    return "unknown";
}

void SimConfig::validate() const {
    if (families < 2) throw ConfigError("sim: families must be >= 2");
    if (modules_per_family < 1) throw ConfigError("sim: modules_per_family must be >= 1");
    if (slate_size < 1) throw ConfigError("sim: slate_size must be >= 1");
    if (families * modules_per_family < slate_size + 2)
        throw ConfigError("sim: families * modules_per_family must be >= slate_size + 2");
    if (buckets < 1) throw ConfigError("sim: buckets must be >= 1");
    if (users < 1) throw ConfigError("sim: users must be >= 1");
    if (pages < 0) throw ConfigError("sim: pages must be >= 0");
    auto check_range = [](double lo, double hi, const char* name) {
        if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi))
            throw ConfigError(std::string("sim: ") + name + " range must satisfy 0 <= lo <= hi <= 1");
    };
    check_range(click_lo, click_hi, "click");
    check_range(purchase_lo, purchase_hi, "purchase");
    check_range(intent_lo, intent_hi, "intent");
    if (exam_shape == ExaminationShape::geometric &&
        !(geometric_ratio > 0.0 && geometric_ratio <= 1.0))
        throw ConfigError("sim: geometric_ratio must be in (0, 1]");
    if (exam_shape == ExaminationShape::custom) {
        if (static_cast<int>(custom_examination.size()) != slate_size)
            throw ConfigError("sim: custom_examination must have slate_size entries");
        double prev = 1.0;
        if (custom_examination.empty() || custom_examination.front() != 1.0)
            throw ConfigError("sim: custom_examination must start at 1");
        for (double p : custom_examination) {
            if (!(p > 0.0 && p <= 1.0 && p <= prev))
                throw ConfigError("sim: custom_examination must be non-increasing in (0, 1]");
            prev = p;
        }
    }
    if (session_gap_minutes <= 0.0) throw ConfigError("sim: session_gap_minutes must be > 0");
    if (feature_noise < 0.0) throw ConfigError("sim: feature_noise must be >= 0");
    if (platforms < 1) throw ConfigError("sim: platforms must be >= 1");
}

double World::click_prob(int bucket, int module_id) const {
    auto it = true_click_prob.find({bucket, module_id});
    if (it == true_click_prob.end())
        throw DataError("unknown (bucket, module): (" + std::to_string(bucket) + ", " +
                        std::to_string(module_id) + ")");
    return it->second;
}

double World::purchase_given_click(int bucket, int module_id) const {
    auto it = true_purchase_given_click.find({bucket, module_id});
    if (it == true_purchase_given_click.end())
        throw DataError("unknown (bucket, module): (" + std::to_string(bucket) + ", " +
                        std::to_string(module_id) + ")");
    return it->second;
}

double World::intent_given_click(int bucket, int module_id) const {
    auto it = true_intent_given_click.find({bucket, module_id});
    if (it == true_intent_given_click.end())
        throw DataError("unknown (bucket, module): (" + std::to_string(bucket) + ", " +
                        std::to_string(module_id) + ")");
    return it->second;
}

double World::examination(int slot) const {
    if (slot < 1 || slot > static_cast<int>(examination_prob.size()))
        throw DataError("slot " + std::to_string(slot) + " outside examination profile");
    return examination_prob[slot - 1];
}

World gen_world(const SimConfig& cfg) {
    cfg.validate();
    World world;
    world.config = cfg;
    world.seed = cfg.seed;

    RngStream root(cfg.seed);
    RngStream rng = root.derive("world");

    std::vector<ModuleFamily> families;
    families.reserve(cfg.families);
    for (int f = 0; f < cfg.families; ++f) {
        families.push_back({f, random_latent(rng, kLatentDim)});
    }

    // Module features: first half drives clickiness, second half drives
    // purchase/intent. Both mix the family theme with per-module traits so
    // family membership carries real signal.
    std::vector<ModuleCandidate> modules;
    modules.reserve(cfg.families * cfg.modules_per_family);
    int module_id = 0;
    for (int f = 0; f < cfg.families; ++f) {
        for (int j = 0; j < cfg.modules_per_family; ++j) {
            ModuleCandidate m;
            m.module_id = module_id++;
            m.family_id = f;
            m.features.resize(2 * kLatentDim);
            for (int d = 0; d < kLatentDim; ++d) {
                m.features[d] = 0.6 * families[f].theme_features[d] + 0.8 * rng.normal();
                m.features[kLatentDim + d] = rng.normal();
            }
            modules.push_back(std::move(m));
        }
    }
    world.catalog = Catalog(std::move(families), std::move(modules));

    for (int b = 0; b < cfg.buckets; ++b) {
        world.context_buckets.push_back(b);
        world.bucket_click_pref.push_back(random_latent(rng, kLatentDim));
        world.bucket_purchase_pref.push_back(random_latent(rng, kLatentDim));
        world.bucket_intent_pref.push_back(random_latent(rng, kLatentDim));
    }

    const double norm = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
    for (int b = 0; b < cfg.buckets; ++b) {
        for (const ModuleCandidate& m : world.catalog.modules()) {
            FeatureVec click_part(m.features.begin(), m.features.begin() + kLatentDim);
            FeatureVec deal_part(m.features.begin() + kLatentDim, m.features.end());
            const double click_score = dot(world.bucket_click_pref[b], click_part) * norm;
            const double purchase_score = dot(world.bucket_purchase_pref[b], deal_part) * norm;
            const double intent_score = dot(world.bucket_intent_pref[b], deal_part) * norm;
            world.true_click_prob[{b, m.module_id}] =
                planted_prob(click_score, cfg.click_lo, cfg.click_hi);
            world.true_purchase_given_click[{b, m.module_id}] =
                planted_prob(purchase_score, cfg.purchase_lo, cfg.purchase_hi);
            world.true_intent_given_click[{b, m.module_id}] =
                planted_prob(intent_score, cfg.intent_lo, cfg.intent_hi);
        }
    }

    world.examination_prob.resize(cfg.slate_size);
    for (int s = 1; s <= cfg.slate_size; ++s) {
        double p = 1.0;
        switch (cfg.exam_shape) {
            case ExaminationShape::log_decay:
                p = 1.0 / std::log2(static_cast<double>(s) + 1.0);
                break;
            case ExaminationShape::geometric:
                p = std::pow(cfg.geometric_ratio, s - 1);
                break;
            case ExaminationShape::custom:
                p = cfg.custom_examination[s - 1];
                break;
        }
        world.examination_prob[s - 1] = p;
    }
    return world;
}

PageContext sample_page_context(const World& world, RngStream& rng) {
    const SimConfig& cfg = world.config;
    PageContext ctx;
    ctx.context_bucket = static_cast<int>(rng.next_below(cfg.buckets));
    ctx.platform = static_cast<int>(rng.next_below(cfg.platforms));

    // Hero features expose the bucket's click and purchase preferences; user
    // features expose its intent preference. Noise keeps the mapping
    // statistical rather than a lookup.
    const FeatureVec& wc = world.bucket_click_pref[ctx.context_bucket];
    const FeatureVec& wp = world.bucket_purchase_pref[ctx.context_bucket];
    const FeatureVec& wi = world.bucket_intent_pref[ctx.context_bucket];
    ctx.hero_item_features.resize(2 * kLatentDim);
    for (int d = 0; d < kLatentDim; ++d) {
        ctx.hero_item_features[d] = wc[d] + cfg.feature_noise * rng.normal();
        ctx.hero_item_features[kLatentDim + d] = wp[d] + cfg.feature_noise * rng.normal();
    }
    ctx.user_features.resize(kLatentDim);
    for (int d = 0; d < kLatentDim; ++d) {
        ctx.user_features[d] = wi[d] + cfg.feature_noise * rng.normal();
    }
    return ctx;
}

std::vector<EngagementEvent> simulate_engagement(const World& world,
                                                 const PagePresentation& page,
                                                 RngStream& rng,
                                                 double page_time_seconds) {
    const int bucket = page.context.context_bucket;
    const double gap_seconds = world.config.session_gap_minutes * 60.0;
    std::vector<EngagementEvent> events;
    for (std::size_t i = 0; i < page.slots.size(); ++i) {
        const int slot = static_cast<int>(i) + 1;
        const int module_id = page.slots[i];
        const double p_click = world.click_prob(bucket, module_id);  // throws on unknown module
        if (!rng.bernoulli(world.examination(slot))) continue;
        if (!rng.bernoulli(p_click)) continue;
        const double click_time = page_time_seconds + slot * kClickSlotDelaySeconds;
        events.push_back({page.page_id, slot, module_id, EventType::click, click_time});
        if (rng.bernoulli(world.intent_given_click(bucket, module_id))) {
            const EventType kind = rng.bernoulli(0.5) ? EventType::watch : EventType::add_to_cart;
            events.push_back({page.page_id, slot, module_id, kind,
                              click_time + rng.uniform(0.0, gap_seconds / 4.0)});
        }
        if (rng.bernoulli(world.purchase_given_click(bucket, module_id))) {
            events.push_back({page.page_id, slot, module_id, EventType::purchase,
                              click_time + rng.uniform(0.0, gap_seconds / 2.0)});
        }
    }
    std::sort(events.begin(), events.end(), [](const EngagementEvent& a, const EngagementEvent& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.slot != b.slot) return a.slot < b.slot;
        return static_cast<int>(a.event_type) < static_cast<int>(b.event_type);
    });
    return events;
}

double oracle_page_value(const World& world, const PagePresentation& page, PageMetric metric) {
    return oracle_slate_value(world, page.context.context_bucket, page.slots, metric);
}

double oracle_slate_value(const World& world, int bucket, const std::vector<int>& slots,
                          PageMetric metric) {
    double survival = 1.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const int slot = static_cast<int>(i) + 1;
        double p = world.click_prob(bucket, slots[i]);
        if (metric == PageMetric::ptr) p *= world.purchase_given_click(bucket, slots[i]);
        survival *= 1.0 - world.examination(slot) * p;
    }
    return 1.0 - survival;
}

namespace {

json prob_map_to_json(const std::map<std::pair<int, int>, double>& table) {
    json rows = json::array();
    for (const auto& [key, value] : table) {
        rows.push_back({{"bucket", key.first}, {"module_id", key.second}, {"p", value}});
    }
    return rows;
}

std::map<std::pair<int, int>, double> prob_map_from_json(const json& rows) {
    std::map<std::pair<int, int>, double> table;
    for (const auto& row : rows) {
        table[{row.at("bucket").get<int>(), row.at("module_id").get<int>()}] =
            row.at("p").get<double>();
    }
    return table;
}

}  // namespace

std::string world_to_json(const World& world) {
    const SimConfig& cfg = world.config;
    json j;
    j["seed"] = world.seed;
    j["config"] = {
        {"families", cfg.families},
        {"modules_per_family", cfg.modules_per_family},
        {"slate_size", cfg.slate_size},
        {"buckets", cfg.buckets},
        {"users", cfg.users},
        {"pages", cfg.pages},
        {"exam_shape", to_string(cfg.exam_shape)},
        {"geometric_ratio", cfg.geometric_ratio},
        {"custom_examination", cfg.custom_examination},
        {"click_range", {cfg.click_lo, cfg.click_hi}},
        {"purchase_range", {cfg.purchase_lo, cfg.purchase_hi}},
        {"intent_range", {cfg.intent_lo, cfg.intent_hi}},
        {"session_gap_minutes", cfg.session_gap_minutes},
        {"feature_noise", cfg.feature_noise},
        {"platforms", cfg.platforms},
        {"seed", cfg.seed},
    };
    json families = json::array();
    for (const ModuleFamily& f : world.catalog.families()) {
        families.push_back({{"family_id", f.family_id}, {"theme_features", f.theme_features}});
    }
    json modules = json::array();
    for (const ModuleCandidate& m : world.catalog.modules()) {
        modules.push_back({{"module_id", m.module_id},
                           {"family_id", m.family_id},
                           {"features", m.features}});
    }
    j["catalog"] = {{"families", families}, {"modules", modules}};
    j["context_buckets"] = world.context_buckets;
    j["true_click_prob"] = prob_map_to_json(world.true_click_prob);
    j["true_purchase_given_click"] = prob_map_to_json(world.true_purchase_given_click);
    j["true_intent_given_click"] = prob_map_to_json(world.true_intent_given_click);
    j["examination_prob"] = world.examination_prob;
    j["bucket_click_pref"] = world.bucket_click_pref;
    j["bucket_purchase_pref"] = world.bucket_purchase_pref;
    j["bucket_intent_pref"] = world.bucket_intent_pref;
    return j.dump();
}

World world_from_json(const std::string& text) {
    json j = json::parse(text);
    World world;
    const json& c = j.at("config");
    SimConfig cfg;
    cfg.families = c.at("families").get<int>();
    cfg.modules_per_family = c.at("modules_per_family").get<int>();
    cfg.slate_size = c.at("slate_size").get<int>();
    cfg.buckets = c.at("buckets").get<int>();
    cfg.users = c.at("users").get<int>();
    cfg.pages = c.at("pages").get<int>();
    const std::string shape = c.at("exam_shape").get<std::string>();
    if (shape == "log_decay") cfg.exam_shape = ExaminationShape::log_decay;
    else if (shape == "geometric") cfg.exam_shape = ExaminationShape::geometric;
    else if (shape == "custom") cfg.exam_shape = ExaminationShape::custom;
    else throw SchemaError("world.json: unknown exam_shape " + shape);
    cfg.geometric_ratio = c.at("geometric_ratio").get<double>();
    cfg.custom_examination = c.at("custom_examination").get<std::vector<double>>();
    cfg.click_lo = c.at("click_range")[0].get<double>();
    cfg.click_hi = c.at("click_range")[1].get<double>();
    cfg.purchase_lo = c.at("purchase_range")[0].get<double>();
    cfg.purchase_hi = c.at("purchase_range")[1].get<double>();
    cfg.intent_lo = c.at("intent_range")[0].get<double>();
    cfg.intent_hi = c.at("intent_range")[1].get<double>();
    cfg.session_gap_minutes = c.at("session_gap_minutes").get<double>();
    cfg.feature_noise = c.at("feature_noise").get<double>();
    cfg.platforms = c.at("platforms").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    world.config = cfg;
    world.seed = j.at("seed").get<std::uint64_t>();

    std::vector<ModuleFamily> families;
    for (const auto& f : j.at("catalog").at("families")) {
        families.push_back({f.at("family_id").get<int>(),
                            f.at("theme_features").get<FeatureVec>()});
    }
    std::vector<ModuleCandidate> modules;
    for (const auto& m : j.at("catalog").at("modules")) {
        modules.push_back({m.at("module_id").get<int>(), m.at("family_id").get<int>(),
                           m.at("features").get<FeatureVec>()});
    }
    world.catalog = Catalog(std::move(families), std::move(modules));
    world.context_buckets = j.at("context_buckets").get<std::vector<int>>();
    world.true_click_prob = prob_map_from_json(j.at("true_click_prob"));
    world.true_purchase_given_click = prob_map_from_json(j.at("true_purchase_given_click"));
    world.true_intent_given_click = prob_map_from_json(j.at("true_intent_given_click"));
    world.examination_prob = j.at("examination_prob").get<std::vector<double>>();
    world.bucket_click_pref = j.at("bucket_click_pref").get<std::vector<FeatureVec>>();
    world.bucket_purchase_pref = j.at("bucket_purchase_pref").get<std::vector<FeatureVec>>();
    world.bucket_intent_pref = j.at("bucket_intent_pref").get<std::vector<FeatureVec>>();
    return world;
}

}  // namespace pageopt::sim

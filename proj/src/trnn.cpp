#include "pageopt/trnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pageopt/errors.hpp"
#include "pageopt/eval.hpp"

namespace pageopt::trnn {

using nn::Tensor;
using nn::Vec;

std::string to_string(Head head) {
    switch (head) {
        case Head::click: return "click";
        case Head::intent: return "intent";
        case Head::attributed_purchase: return "attributed_purchase";
    }
    return "unknown";
}

std::optional<Head> head_from(const std::string& text) {
    if (text == "click") return Head::click;
    if (text == "intent") return Head::intent;
    if (text == "attributed_purchase") return Head::attributed_purchase;
    return std::nullopt;
}

DatasetDims DatasetDims::from_dataset(const pipe::Dataset& dataset) {
    DatasetDims dims;
    dims.context_dim = dataset.context_dim;
    dims.module_dim = dataset.module_dim;
    dims.family_count = dataset.family_count;
    dims.platform_count = dataset.platform_count;
    dims.bucket_count = dataset.bucket_count;
    dims.slate_size = dataset.slate_size;
    return dims;
}

void TrnnConfig::validate() const {
    if (d_h < 1 || d_f < 1 || d_m < 1 || d_o < 1 || platform_dim < 1 || trunk_width < 1)
        throw ConfigError("train: all dimensions must be >= 1");
    if (d_h != d_o)
        throw ConfigError("train: d_h must equal d_o (h_x initializes the LSTM hidden state)");
    if (heads.empty()) throw ConfigError("train: need at least one head");
    for (std::size_t i = 0; i < heads.size(); ++i) {
        for (std::size_t j = i + 1; j < heads.size(); ++j) {
            if (heads[i] == heads[j]) throw ConfigError("train: duplicate head");
        }
    }
    if (objective_mode == nn::WeightMode::fixed && fixed_weights.size() != heads.size())
        throw ConfigError("train: fixed_weights must have one entry per head");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

int TrnnConfig::head_index(Head head) const {
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i] == head) return static_cast<int>(i);
    }
    return -1;
}

nlohmann::json TrnnConfig::to_json() const {
    nlohmann::json j;
    j["d_h"] = d_h;
    j["d_f"] = d_f;
    j["d_m"] = d_m;
    j["d_o"] = d_o;
    j["platform_dim"] = platform_dim;
    j["trunk_width"] = trunk_width;
    std::vector<std::string> head_names;
    for (Head h : heads) head_names.push_back(to_string(h));
    j["heads"] = head_names;
    j["objective_mode"] = objective_mode == nn::WeightMode::fixed ? "fixed" : "learned";
    j["fixed_weights"] = fixed_weights;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["use_ips"] = use_ips;
    j["softmax_rank_head"] = softmax_rank_head;
    return j;
}

TrnnConfig TrnnConfig::from_json(const nlohmann::json& j) {
    TrnnConfig cfg;
    cfg.d_h = j.at("d_h").get<int>();
    cfg.d_f = j.at("d_f").get<int>();
    cfg.d_m = j.at("d_m").get<int>();
    cfg.d_o = j.at("d_o").get<int>();
    cfg.platform_dim = j.at("platform_dim").get<int>();
    cfg.trunk_width = j.at("trunk_width").get<int>();
    cfg.heads.clear();
    for (const auto& name : j.at("heads")) {
        auto h = head_from(name.get<std::string>());
        if (!h) throw SchemaError("config: unknown head " + name.get<std::string>());
        cfg.heads.push_back(*h);
    }
    cfg.objective_mode = j.at("objective_mode").get<std::string>() == "fixed"
                             ? nn::WeightMode::fixed
                             : nn::WeightMode::learned;
    cfg.fixed_weights = j.at("fixed_weights").get<std::vector<double>>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.use_ips = j.at("use_ips").get<bool>();
    cfg.softmax_rank_head = j.at("softmax_rank_head").get<bool>();
    return cfg;
}

double HeadProbs::purchase_like() const {
    if (!std::isnan(attributed_purchase)) return attributed_purchase;
    if (!std::isnan(click)) return click;
    throw DataError("HeadProbs: no usable head");
}

double HeadProbs::by_head(Head head) const {
    switch (head) {
        case Head::click: return click;
        case Head::intent: return intent;
        case Head::attributed_purchase: return attributed_purchase;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

RankInput rank_input_from_example(const pipe::PageExample& page) {
    RankInput input;
    input.context_id = page.page_id;
    input.context_features = page.context_features;
    input.platform = page.platform;
    input.bucket = page.bucket;
    return input;
}

RankInput rank_input_from_context(const PageContext& ctx, const pipe::NormStats& stats) {
    RankInput input;
    input.context_id = ctx.context_id;
    FeatureVec raw = ctx.user_features;
    raw.insert(raw.end(), ctx.hero_item_features.begin(), ctx.hero_item_features.end());
    if (raw.size() != stats.context_cols.size())
        throw DataError("rank_input_from_context: context feature width mismatch");
    input.context_features.resize(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) {
        input.context_features[c] = pipe::normalize_value(stats.context_cols[c], raw[c]);
    }
    input.platform = ctx.platform;
    input.bucket = ctx.context_bucket;
    return input;
}

infer::RankResult RankerModel::rank(const RankInput& input, const std::vector<int>& candidates,
                                    const Catalog& catalog,
                                    const infer::RankRequest& request) const {
    auto scorer = make_scorer(input);
    return infer::rank_page(*scorer, candidates, catalog, request);
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json j;
    nlohmann::json rows = nlohmann::json::array();
    for (const EpochStats& e : epochs) {
        nlohmann::json row;
        row["epoch"] = e.epoch;
        row["train_loss"] = e.train_loss;
        row["validation_loss"] = e.validation_loss;
        if (e.validation_click_auc) row["validation_click_auc"] = *e.validation_click_auc;
        if (e.validation_purchase_auc)
            row["validation_purchase_auc"] = *e.validation_purchase_auc;
        rows.push_back(row);
    }
    j["epochs"] = rows;
    j["best_epoch"] = best_epoch;
    j["best_validation_loss"] = best_validation_loss;
    return j;
}

// ---------------------------------------------------------------------------
// Shared forward/backward building blocks.

namespace {

struct EncoderCache {
    Vec in, a0, hx;
};

// in -> dense -> tanh -> dense -> tanh
void encoder_forward(const nn::ParamStore& params, const Vec& in, EncoderCache* cache, Vec& hx) {
    Vec z0, a0, z1;
    nn::dense_forward(in, params.at("encoder.l0.W").value, params.at("encoder.l0.b").value.data,
                      z0);
    nn::tanh_forward(z0, a0);
    nn::dense_forward(a0, params.at("encoder.l1.W").value, params.at("encoder.l1.b").value.data,
                      z1);
    nn::tanh_forward(z1, hx);
    if (cache != nullptr) {
        cache->in = in;
        cache->a0 = std::move(a0);
        cache->hx = hx;
    }
}

void encoder_backward(nn::ParamStore& params, const EncoderCache& cache, const Vec& dhx,
                      Vec& din) {
    Vec dz1, da0, dz0;
    nn::tanh_backward(cache.hx, dhx, dz1);
    nn::dense_backward(cache.a0, params.at("encoder.l1.W").value, dz1, &da0,
                       &params.at("encoder.l1.W").grad, &params.at("encoder.l1.b").grad.data);
    nn::tanh_backward(cache.a0, da0, dz0);
    nn::dense_backward(cache.in, params.at("encoder.l0.W").value, dz0, &din,
                       &params.at("encoder.l0.W").grad, &params.at("encoder.l0.b").grad.data);
}

struct ModnetCache {
    Vec in, z0, a0;
};

// features -> dense -> relu -> dense (linear embedding output)
void modnet_forward(const nn::ParamStore& params, const Vec& features, ModnetCache* cache,
                    Vec& hm) {
    Vec z0, a0;
    nn::dense_forward(features, params.at("modnet.l0.W").value,
                      params.at("modnet.l0.b").value.data, z0);
    nn::relu_forward(z0, a0);
    nn::dense_forward(a0, params.at("modnet.l1.W").value, params.at("modnet.l1.b").value.data,
                      hm);
    if (cache != nullptr) {
        cache->in = features;
        cache->z0 = std::move(z0);
        cache->a0 = std::move(a0);
    }
}

void modnet_backward(nn::ParamStore& params, const ModnetCache& cache, const Vec& dhm) {
    Vec da0, dz0;
    nn::dense_backward(cache.a0, params.at("modnet.l1.W").value, dhm, &da0,
                       &params.at("modnet.l1.W").grad, &params.at("modnet.l1.b").grad.data);
    nn::relu_backward(cache.z0, da0, dz0);
    // Module features are data, not parameters; no input gradient needed.
    nn::dense_backward(cache.in, params.at("modnet.l0.W").value, dz0, nullptr,
                       &params.at("modnet.l0.W").grad, &params.at("modnet.l0.b").grad.data);
}

struct TrunkCache {
    Vec in, z0, a0, z1, a1;
};

// concat input -> dense -> relu -> dense -> relu
void trunk_forward(const nn::ParamStore& params, const Vec& in, TrunkCache* cache, Vec& out) {
    Vec z0, a0, z1;
    nn::dense_forward(in, params.at("trunk.l0.W").value, params.at("trunk.l0.b").value.data, z0);
    nn::relu_forward(z0, a0);
    nn::dense_forward(a0, params.at("trunk.l1.W").value, params.at("trunk.l1.b").value.data, z1);
    nn::relu_forward(z1, out);
    if (cache != nullptr) {
        cache->in = in;
        cache->z0 = std::move(z0);
        cache->a0 = std::move(a0);
        cache->z1 = std::move(z1);
        cache->a1 = out;
    }
}

void trunk_backward(nn::ParamStore& params, const TrunkCache& cache, const Vec& da1, Vec& din) {
    Vec dz1, da0, dz0;
    nn::relu_backward(cache.z1, da1, dz1);
    nn::dense_backward(cache.a0, params.at("trunk.l1.W").value, dz1, &da0,
                       &params.at("trunk.l1.W").grad, &params.at("trunk.l1.b").grad.data);
    nn::relu_backward(cache.z0, da0, dz0);
    nn::dense_backward(cache.in, params.at("trunk.l0.W").value, dz0, &din,
                       &params.at("trunk.l0.W").grad, &params.at("trunk.l0.b").grad.data);
}

double head_logit(const nn::ParamStore& params, const std::string& head_name, const Vec& trunk_out) {
    Vec y;
    nn::dense_forward(trunk_out, params.at("head." + head_name + ".W").value,
                      params.at("head." + head_name + ".b").value.data, y);
    return y[0];
}

void head_backward(nn::ParamStore& params, const std::string& head_name, const Vec& trunk_out,
                   double dlogit, Vec& dtrunk) {
    Vec dy{dlogit};
    nn::dense_backward(trunk_out, params.at("head." + head_name + ".W").value, dy, &dtrunk,
                       &params.at("head." + head_name + ".W").grad,
                       &params.at("head." + head_name + ".b").grad.data);
}

Vec encoder_input(const nn::ParamStore& params, const RankInput& input) {
    Vec in = input.context_features;
    Vec plat_row;
    nn::embedding_forward(params.at("platform_emb").value, input.platform, plat_row);
    in.insert(in.end(), plat_row.begin(), plat_row.end());
    return in;
}

// Per-slot label and loss weights for one head. IPS multiplies the engagement
// term of the loss; the no-engagement term is capped at weight 1 so inverse
// weights cannot inflate the absence of a signal.
struct SlotTarget {
    double label = 0.0;
    double pos_weight = 1.0;
    double neg_weight = 1.0;
};

SlotTarget slot_target(const TrnnConfig& cfg, const LabeledSlot& slot, Head head) {
    SlotTarget t;
    switch (head) {
        case Head::click:
            t.label = slot.y_click;
            t.pos_weight = cfg.use_ips ? slot.ips_click : 1.0;
            break;
        case Head::intent:
            t.label = slot.y_intent;
            t.pos_weight = cfg.use_ips ? slot.ips_click : 1.0;
            break;
        case Head::attributed_purchase:
            t.label = slot.y_attributed_purchase;
            t.pos_weight = cfg.use_ips ? slot.ips_purchase : 1.0;
            break;
    }
    t.neg_weight = std::min(t.pos_weight, 1.0);
    return t;
}

void register_encoder(nn::ParamStore& params, int in_dim, int d_h, RngStream& rng) {
    nn::init_uniform_fan_in(params.create("encoder.l0.W",
                                          {static_cast<std::size_t>(in_dim),
                                           static_cast<std::size_t>(d_h)})
                                .value,
                            static_cast<std::size_t>(in_dim), rng);
    params.create("encoder.l0.b", {static_cast<std::size_t>(d_h)});
    nn::init_uniform_fan_in(params.create("encoder.l1.W",
                                          {static_cast<std::size_t>(d_h),
                                           static_cast<std::size_t>(d_h)})
                                .value,
                            static_cast<std::size_t>(d_h), rng);
    params.create("encoder.l1.b", {static_cast<std::size_t>(d_h)});
}

void register_modnet(nn::ParamStore& params, int module_dim, int d_m, RngStream& rng) {
    nn::init_uniform_fan_in(params.create("modnet.l0.W",
                                          {static_cast<std::size_t>(module_dim),
                                           static_cast<std::size_t>(d_m)})
                                .value,
                            static_cast<std::size_t>(module_dim), rng);
    params.create("modnet.l0.b", {static_cast<std::size_t>(d_m)});
    nn::init_uniform_fan_in(params.create("modnet.l1.W",
                                          {static_cast<std::size_t>(d_m),
                                           static_cast<std::size_t>(d_m)})
                                .value,
                            static_cast<std::size_t>(d_m), rng);
    params.create("modnet.l1.b", {static_cast<std::size_t>(d_m)});
}

void register_trunk_heads(nn::ParamStore& params, const TrnnConfig& cfg, int trunk_in, int width,
                          RngStream& rng) {
    nn::init_uniform_fan_in(params.create("trunk.l0.W",
                                          {static_cast<std::size_t>(trunk_in),
                                           static_cast<std::size_t>(width)})
                                .value,
                            static_cast<std::size_t>(trunk_in), rng);
    params.create("trunk.l0.b", {static_cast<std::size_t>(width)});
    nn::init_uniform_fan_in(params.create("trunk.l1.W",
                                          {static_cast<std::size_t>(width),
                                           static_cast<std::size_t>(width)})
                                .value,
                            static_cast<std::size_t>(width), rng);
    params.create("trunk.l1.b", {static_cast<std::size_t>(width)});
    for (Head h : cfg.heads) {
        nn::init_uniform_fan_in(params.create("head." + to_string(h) + ".W",
                                              {static_cast<std::size_t>(width), 1})
                                    .value,
                                static_cast<std::size_t>(width), rng);
        params.create("head." + to_string(h) + ".b", {1});
    }
    if (cfg.softmax_rank_head) {
        nn::init_uniform_fan_in(params.create("head.rank.W",
                                              {static_cast<std::size_t>(width), 1})
                                    .value,
                                static_cast<std::size_t>(width), rng);
        params.create("head.rank.b", {1});
    }
    if (cfg.objective_mode == nn::WeightMode::learned) {
        params.create("objective_log_vars", {cfg.heads.size()});
    }
}

HeadProbs probs_from_logits(const TrnnConfig& cfg, const std::vector<double>& logits) {
    HeadProbs p;
    for (std::size_t i = 0; i < cfg.heads.size(); ++i) {
        const double prob = nn::sigmoid(logits[i]);
        switch (cfg.heads[i]) {
            case Head::click: p.click = prob; break;
            case Head::intent: p.intent = prob; break;
            case Head::attributed_purchase: p.attributed_purchase = prob; break;
        }
    }
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// TRNN

TrnnModel::TrnnModel(const TrnnConfig& cfg, const DatasetDims& dims) : cfg_(cfg), dims_(dims) {
    cfg_.validate();
    if (dims.context_dim < 1 || dims.module_dim < 1 || dims.family_count < 1 ||
        dims.platform_count < 1)
        throw ConfigError("trnn: dataset dims incomplete");
    RngStream rng = RngStream(cfg.seed).derive("trnn-init");
    const int enc_in = dims.context_dim + cfg.platform_dim;
    register_encoder(params_, enc_in, cfg.d_h, rng);
    nn::init_normal(params_.create("platform_emb",
                                   {static_cast<std::size_t>(dims.platform_count),
                                    static_cast<std::size_t>(cfg.platform_dim)})
                        .value,
                    0.1, rng);
    nn::init_normal(params_.create("family_emb",
                                   {static_cast<std::size_t>(dims.family_count),
                                    static_cast<std::size_t>(cfg.d_f)})
                        .value,
                    0.1, rng);
    nn::init_normal(params_.create("start_token", {1, static_cast<std::size_t>(cfg.d_f)}).value,
                    0.1, rng);
    nn::init_uniform_fan_in(params_.create("lstm.Wih",
                                           {static_cast<std::size_t>(cfg.d_f),
                                            4 * static_cast<std::size_t>(cfg.d_h)})
                                .value,
                            static_cast<std::size_t>(cfg.d_f), rng);
    nn::init_uniform_fan_in(params_.create("lstm.Whh",
                                           {static_cast<std::size_t>(cfg.d_h),
                                            4 * static_cast<std::size_t>(cfg.d_h)})
                                .value,
                            static_cast<std::size_t>(cfg.d_h), rng);
    {
        nn::Param& b = params_.create("lstm.b", {4 * static_cast<std::size_t>(cfg.d_h)});
        // Forget-gate bias starts at +1.
        for (int j = 0; j < cfg.d_h; ++j) b.value.data[static_cast<std::size_t>(cfg.d_h + j)] = 1.0;
    }
    register_modnet(params_, dims.module_dim, cfg.d_m, rng);
    register_trunk_heads(params_, cfg_, cfg.d_h + cfg.d_m, cfg.trunk_width, rng);
}

Vec TrnnModel::encode_page(const RankInput& input) const {
    Vec hx;
    encoder_forward(params_, encoder_input(params_, input), nullptr, hx);
    return hx;
}

void TrnnModel::precompute_module_embeddings(const std::vector<pipe::CandidateFeatures>& modules) {
    module_cache_.clear();
    module_family_.clear();
    for (const pipe::CandidateFeatures& m : modules) {
        Vec hm;
        modnet_forward(params_, m.features, nullptr, hm);
        module_cache_[m.module_id] = std::move(hm);
        module_family_[m.module_id] = m.family_id;
    }
}

const Vec& TrnnModel::cached_embedding(int module_id) const {
    auto it = module_cache_.find(module_id);
    if (it == module_cache_.end())
        throw DataError("trnn: module " + std::to_string(module_id) +
                        " missing from embedding cache");
    return it->second;
}

Vec TrnnModel::module_embedding(const FeatureVec& features) const {
    Vec hm;
    modnet_forward(params_, features, nullptr, hm);
    return hm;
}

TrnnModel::DecodeState TrnnModel::begin_decode(const RankInput& input) const {
    DecodeState state;
    Vec hx = encode_page(input);
    Vec c0(static_cast<std::size_t>(cfg_.d_h), 0.0);
    Vec start;
    nn::embedding_forward(params_.at("start_token").value, 0, start);
    nn::lstm_forward(start, hx, c0, params_.at("lstm.Wih").value, params_.at("lstm.Whh").value,
                     params_.at("lstm.b").value.data, state.h, state.c, nullptr);
    return state;
}

TrnnModel::DecodeState TrnnModel::advance_decode(const DecodeState& state,
                                                 int chosen_module) const {
    auto fam = module_family_.find(chosen_module);
    if (fam == module_family_.end())
        throw DataError("trnn: module " + std::to_string(chosen_module) +
                        " missing from family map");
    Vec fam_row;
    nn::embedding_forward(params_.at("family_emb").value, fam->second, fam_row);
    DecodeState next;
    nn::lstm_forward(fam_row, state.h, state.c, params_.at("lstm.Wih").value,
                     params_.at("lstm.Whh").value, params_.at("lstm.b").value.data, next.h,
                     next.c, nullptr);
    return next;
}

HeadProbs TrnnModel::score_module(const DecodeState& state, int module_id) const {
    Vec in = state.h;
    const Vec& hm = cached_embedding(module_id);
    in.insert(in.end(), hm.begin(), hm.end());
    Vec trunk_out;
    trunk_forward(params_, in, nullptr, trunk_out);
    std::vector<double> logits;
    logits.reserve(cfg_.heads.size());
    for (Head h : cfg_.heads) logits.push_back(head_logit(params_, to_string(h), trunk_out));
    return probs_from_logits(cfg_, logits);
}

std::vector<HeadProbs> TrnnModel::predict_slate(const RankInput& input,
                                                const std::vector<int>& slots) const {
    std::vector<HeadProbs> out;
    DecodeState state = begin_decode(input);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        out.push_back(score_module(state, slots[i]));
        if (i + 1 < slots.size()) state = advance_decode(state, slots[i]);
    }
    return out;
}

namespace {

struct TrnnScorerState : infer::ScorerState {
    TrnnModel::DecodeState state;
    std::unique_ptr<infer::ScorerState> clone() const override {
        auto copy = std::make_unique<TrnnScorerState>();
        copy->state = state;
        return copy;
    }
};

class TrnnScorer : public infer::SlateScorer {
public:
    TrnnScorer(const TrnnModel& model, RankInput input)
        : model_(model), input_(std::move(input)) {}

    std::unique_ptr<infer::ScorerState> begin() const override {
        auto s = std::make_unique<TrnnScorerState>();
        s->state = model_.begin_decode(input_);
        return s;
    }

    std::vector<double> beam_probs(const infer::ScorerState& state,
                                   std::span<const int> candidates, int) const override {
        const auto& s = static_cast<const TrnnScorerState&>(state);
        std::vector<double> probs;
        probs.reserve(candidates.size());
        for (int id : candidates) probs.push_back(model_.score_module(s.state, id).purchase_like());
        return probs;
    }

    std::unique_ptr<infer::ScorerState> advance(const infer::ScorerState& state, int chosen,
                                                int) const override {
        const auto& s = static_cast<const TrnnScorerState&>(state);
        auto next = std::make_unique<TrnnScorerState>();
        next->state = model_.advance_decode(s.state, chosen);
        return next;
    }

private:
    const TrnnModel& model_;
    RankInput input_;
};

}  // namespace

std::unique_ptr<infer::SlateScorer> TrnnModel::make_scorer(const RankInput& input) const {
    return std::make_unique<TrnnScorer>(*this, input);
}

namespace {

nlohmann::json dims_to_json(const DatasetDims& dims) {
    return {{"context_dim", dims.context_dim},     {"module_dim", dims.module_dim},
            {"family_count", dims.family_count},   {"platform_count", dims.platform_count},
            {"bucket_count", dims.bucket_count},   {"slate_size", dims.slate_size}};
}

DatasetDims dims_from_json(const nlohmann::json& j) {
    DatasetDims dims;
    dims.context_dim = j.at("context_dim").get<int>();
    dims.module_dim = j.at("module_dim").get<int>();
    dims.family_count = j.at("family_count").get<int>();
    dims.platform_count = j.at("platform_count").get<int>();
    dims.bucket_count = j.at("bucket_count").get<int>();
    dims.slate_size = j.at("slate_size").get<int>();
    return dims;
}

void copy_params(const nn::ParamStore& from, nn::ParamStore& to) {
    for (const std::string& name : from.names()) {
        const Tensor& src = from.at(name).value;
        Tensor& dst = to.at(name).value;
        if (src.shape != dst.shape)
            throw SchemaError("checkpoint: shape mismatch for " + name);
        dst.data = src.data;
    }
}

}  // namespace

void TrnnModel::save(const std::string& path) const {
    nlohmann::json hyper;
    hyper["model"] = "trnn";
    hyper["config"] = cfg_.to_json();
    hyper["dims"] = dims_to_json(dims_);
    nn::save_checkpoint(params_, hyper, cfg_.seed, path);
}

std::unique_ptr<TrnnModel> TrnnModel::load(const std::string& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.hyperparameters.at("model").get<std::string>() != "trnn")
        throw SchemaError("checkpoint: not a trnn model: " + path);
    auto model = std::make_unique<TrnnModel>(
        TrnnConfig::from_json(ckpt.hyperparameters.at("config")),
        dims_from_json(ckpt.hyperparameters.at("dims")));
    copy_params(ckpt.store, model->params_);
    return model;
}

// ---------------------------------------------------------------------------
// MLP baseline

int mlp_width_for_budget(const TrnnConfig& cfg, const DatasetDims& dims) {
    const auto q = static_cast<long long>(cfg.heads.size());
    const long long enc_in = dims.context_dim + cfg.platform_dim;
    const long long shared = enc_in * cfg.d_h + cfg.d_h            // encoder.l0
                             + cfg.d_h * cfg.d_h + cfg.d_h         // encoder.l1
                             + dims.platform_count * cfg.platform_dim
                             + dims.module_dim * cfg.d_m + cfg.d_m  // modnet.l0
                             + cfg.d_m * cfg.d_m + cfg.d_m;         // modnet.l1
    const long long trnn_total =
        shared + dims.family_count * cfg.d_f + cfg.d_f              // family emb + start token
        + cfg.d_f * 4 * cfg.d_h + cfg.d_h * 4 * cfg.d_h + 4 * cfg.d_h
        + (cfg.d_h + cfg.d_m) * cfg.trunk_width + cfg.trunk_width
        + cfg.trunk_width * cfg.trunk_width + cfg.trunk_width
        + q * (cfg.trunk_width + 1);

    const long long mlp_in = cfg.d_h + cfg.d_m + dims.slate_size;
    long long best_width = 1;
    long long best_gap = std::numeric_limits<long long>::max();
    for (long long w = 1; w <= 4096; ++w) {
        const long long total = shared + mlp_in * w + w + w * w + w + q * (w + 1);
        const long long gap = std::llabs(total - trnn_total);
        if (gap < best_gap) {
            best_gap = gap;
            best_width = w;
        }
    }
    return static_cast<int>(best_width);
}

MlpModel::MlpModel(const TrnnConfig& cfg, const DatasetDims& dims) : cfg_(cfg), dims_(dims) {
    cfg_.validate();
    mlp_trunk_width_ = mlp_width_for_budget(cfg, dims);
    RngStream rng = RngStream(cfg.seed).derive("mlp-init");
    const int enc_in = dims.context_dim + cfg.platform_dim;
    register_encoder(params_, enc_in, cfg.d_h, rng);
    nn::init_normal(params_.create("platform_emb",
                                   {static_cast<std::size_t>(dims.platform_count),
                                    static_cast<std::size_t>(cfg.platform_dim)})
                        .value,
                    0.1, rng);
    register_modnet(params_, dims.module_dim, cfg.d_m, rng);
    register_trunk_heads(params_, cfg_, cfg.d_h + cfg.d_m + dims.slate_size, mlp_trunk_width_,
                         rng);
}

void MlpModel::precompute_module_embeddings(const std::vector<pipe::CandidateFeatures>& modules) {
    module_cache_.clear();
    module_family_.clear();
    for (const pipe::CandidateFeatures& m : modules) {
        Vec hm;
        modnet_forward(params_, m.features, nullptr, hm);
        module_cache_[m.module_id] = std::move(hm);
        module_family_[m.module_id] = m.family_id;
    }
}

nn::Vec MlpModel::encode(const RankInput& input) const {
    Vec hx;
    encoder_forward(params_, encoder_input(params_, input), nullptr, hx);
    return hx;
}

HeadProbs MlpModel::score_module(const RankInput& input, int module_id, int slot) const {
    if (slot < 1) throw DataError("mlp: slot is 1-based");
    auto it = module_cache_.find(module_id);
    if (it == module_cache_.end())
        throw DataError("mlp: module " + std::to_string(module_id) +
                        " missing from embedding cache");
    Vec in = encode(input);
    in.insert(in.end(), it->second.begin(), it->second.end());
    Vec slot_onehot(static_cast<std::size_t>(dims_.slate_size), 0.0);
    if (slot <= dims_.slate_size) slot_onehot[static_cast<std::size_t>(slot - 1)] = 1.0;
    in.insert(in.end(), slot_onehot.begin(), slot_onehot.end());
    Vec trunk_out;
    trunk_forward(params_, in, nullptr, trunk_out);
    std::vector<double> logits;
    for (Head h : cfg_.heads) logits.push_back(head_logit(params_, to_string(h), trunk_out));
    return probs_from_logits(cfg_, logits);
}

std::vector<HeadProbs> MlpModel::predict_slate(const RankInput& input,
                                               const std::vector<int>& slots) const {
    std::vector<HeadProbs> out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        out.push_back(score_module(input, slots[i], static_cast<int>(i) + 1));
    }
    return out;
}

namespace {

struct MlpScorerState : infer::ScorerState {
    std::unique_ptr<infer::ScorerState> clone() const override {
        return std::make_unique<MlpScorerState>();
    }
};

class MlpScorer : public infer::SlateScorer {
public:
    MlpScorer(const MlpModel& model, RankInput input) : model_(model), input_(std::move(input)) {}

    std::unique_ptr<infer::ScorerState> begin() const override {
        return std::make_unique<MlpScorerState>();
    }
    std::vector<double> beam_probs(const infer::ScorerState&, std::span<const int> candidates,
                                   int slot) const override {
        std::vector<double> probs;
        probs.reserve(candidates.size());
        for (int id : candidates) {
            probs.push_back(model_.score_module(input_, id, slot).purchase_like());
        }
        return probs;
    }
    std::unique_ptr<infer::ScorerState> advance(const infer::ScorerState&, int, int) const override {
        return std::make_unique<MlpScorerState>();
    }

private:
    const MlpModel& model_;
    RankInput input_;
};

}  // namespace

std::unique_ptr<infer::SlateScorer> MlpModel::make_scorer(const RankInput& input) const {
    return std::make_unique<MlpScorer>(*this, input);
}

void MlpModel::save(const std::string& path) const {
    nlohmann::json hyper;
    hyper["model"] = "mlp";
    hyper["config"] = cfg_.to_json();
    hyper["dims"] = dims_to_json(dims_);
    nn::save_checkpoint(params_, hyper, cfg_.seed, path);
}

std::unique_ptr<MlpModel> MlpModel::load(const std::string& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.hyperparameters.at("model").get<std::string>() != "mlp")
        throw SchemaError("checkpoint: not an mlp model: " + path);
    auto model = std::make_unique<MlpModel>(
        TrnnConfig::from_json(ckpt.hyperparameters.at("config")),
        dims_from_json(ckpt.hyperparameters.at("dims")));
    copy_params(ckpt.store, model->params_);
    return model;
}

// ---------------------------------------------------------------------------
// Training

// Shared epoch/batch loop. The model-specific part is the per-page forward and
// backward pass; gradients are scaled by multiplier / (pages_in_batch * K).
class Trainer {
public:
    virtual ~Trainer() = default;

    struct PageLosses {
        Vec head_loss_sum;  // per head, summed over slots
        double rank_loss_sum = 0.0;
        int slots = 0;
    };

    // grad_scale[i] applies to head i's per-slot dlogit; rank_scale to the
    // optional softmax ranking loss. Pass empty grad_scale for forward-only.
    virtual PageLosses page_pass(const pipe::PageExample& page, const Vec& grad_scale,
                                 double rank_scale) = 0;

    virtual nn::ParamStore& params() = 0;
    virtual const TrnnConfig& config() const = 0;
    virtual void refresh_cache() = 0;
    virtual std::vector<HeadProbs> predictions(const pipe::PageExample& page) = 0;

    TrainResult run(const pipe::Dataset& train, const pipe::Dataset& validation);

private:
    double dataset_loss(const std::vector<const pipe::PageExample*>& pages);
};

double Trainer::dataset_loss(const std::vector<const pipe::PageExample*>& pages) {
    const TrnnConfig& cfg = config();
    const std::size_t q = cfg.heads.size();
    Vec head_sums(q, 0.0);
    double rank_sum = 0.0;
    std::int64_t slot_count = 0;
    for (const pipe::PageExample* page : pages) {
        PageLosses losses = page_pass(*page, {}, 0.0);
        for (std::size_t i = 0; i < q; ++i) head_sums[i] += losses.head_loss_sum[i];
        rank_sum += losses.rank_loss_sum;
        slot_count += losses.slots;
    }
    if (slot_count == 0) return 0.0;
    Vec head_means(q);
    for (std::size_t i = 0; i < q; ++i) {
        head_means[i] = head_sums[i] / static_cast<double>(slot_count);
    }
    nn::ObjectiveWeights weights{cfg.objective_mode, cfg.fixed_weights};
    nn::Param* log_vars =
        cfg.objective_mode == nn::WeightMode::learned ? &params().at("objective_log_vars")
                                                      : nullptr;
    // Forward-only aggregate: discard the s-gradient it accumulates.
    Vec saved;
    if (log_vars != nullptr) saved = log_vars->grad.data;
    nn::AggregateResult agg = nn::aggregate_loss(head_means, weights, log_vars);
    if (log_vars != nullptr) log_vars->grad.data = saved;
    double total = agg.loss;
    if (cfg.softmax_rank_head) total += rank_sum / static_cast<double>(slot_count);
    return total;
}

TrainResult Trainer::run(const pipe::Dataset& train, const pipe::Dataset& validation) {
    const TrnnConfig& cfg = config();
    if (train.pages.empty()) throw DataError("train: empty training dataset");
    const std::size_t q = cfg.heads.size();

    std::vector<const pipe::PageExample*> train_pages;
    for (const pipe::PageExample& page : train.pages) train_pages.push_back(&page);
    std::vector<const pipe::PageExample*> val_pages;
    for (const pipe::PageExample& page : validation.pages) val_pages.push_back(&page);

    nn::ObjectiveWeights weights{cfg.objective_mode, cfg.fixed_weights};
    nn::AdamConfig adam;
    adam.lr = cfg.lr;

    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    std::map<std::string, Vec> best_params;
    RngStream shuffle_root = RngStream(cfg.seed).derive("epochs");

    const int click_head = cfg.head_index(Head::click);
    const int ap_head = cfg.head_index(Head::attributed_purchase);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_pages.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream epoch_rng = shuffle_root.derive("order", static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);

        refresh_cache();
        double epoch_loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            params().zero_grad();

            nn::Param* log_vars = cfg.objective_mode == nn::WeightMode::learned
                                      ? &params().at("objective_log_vars")
                                      : nullptr;
            Vec multipliers(q);
            for (std::size_t i = 0; i < q; ++i) {
                multipliers[i] = cfg.objective_mode == nn::WeightMode::fixed
                                     ? cfg.fixed_weights[i]
                                     : std::exp(-log_vars->value.data[i]);
            }

            std::int64_t slot_count = 0;
            for (std::size_t t = start; t < end; ++t) {
                slot_count +=
                    static_cast<std::int64_t>(train_pages[order[t]]->slots.size());
            }
            const double denom = static_cast<double>(std::max<std::int64_t>(slot_count, 1));

            Vec grad_scale(q);
            for (std::size_t i = 0; i < q; ++i) grad_scale[i] = multipliers[i] / denom;

            Vec head_sums(q, 0.0);
            double rank_sum = 0.0;
            for (std::size_t t = start; t < end; ++t) {
                PageLosses losses =
                    page_pass(*train_pages[order[t]], grad_scale, 1.0 / denom);
                for (std::size_t i = 0; i < q; ++i) head_sums[i] += losses.head_loss_sum[i];
                rank_sum += losses.rank_loss_sum;
            }
            Vec head_means(q);
            for (std::size_t i = 0; i < q; ++i) head_means[i] = head_sums[i] / denom;
            nn::AggregateResult agg = nn::aggregate_loss(head_means, weights, log_vars);
            double batch_loss = agg.loss;
            if (cfg.softmax_rank_head) batch_loss += rank_sum / denom;

            nn::adam_step(params(), adam);
            epoch_loss_sum += batch_loss;
            ++batches;
        }

        refresh_cache();
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches > 0 ? epoch_loss_sum / batches : 0.0;
        stats.validation_loss = val_pages.empty() ? stats.train_loss : dataset_loss(val_pages);

        if (!val_pages.empty()) {
            std::vector<double> click_preds, purchase_preds;
            std::vector<int> click_labels, purchase_labels;
            for (const pipe::PageExample* page : val_pages) {
                std::vector<HeadProbs> probs = predictions(*page);
                for (std::size_t s = 0; s < page->slots.size(); ++s) {
                    if (click_head >= 0) {
                        click_preds.push_back(probs[s].click);
                        click_labels.push_back(page->slots[s].y_click);
                    }
                    if (ap_head >= 0 || click_head >= 0) {
                        purchase_preds.push_back(probs[s].purchase_like());
                        purchase_labels.push_back(page->slots[s].y_purchase);
                    }
                }
            }
            if (!click_preds.empty()) {
                stats.validation_click_auc = eval::f1_auc(click_preds, click_labels).auc;
            }
            if (!purchase_preds.empty()) {
                stats.validation_purchase_auc =
                    eval::f1_auc(purchase_preds, purchase_labels).auc;
            }
        }

        if (stats.validation_loss < best_loss) {
            best_loss = stats.validation_loss;
            result.report.best_epoch = epoch;
            best_params.clear();
            for (const std::string& name : params().names()) {
                best_params[name] = params().at(name).value.data;
            }
        }
        result.report.epochs.push_back(stats);
    }

    result.report.best_validation_loss = best_loss;
    for (auto& [name, data] : best_params) {
        params().at(name).value.data = data;
    }
    refresh_cache();
    return result;
}

class TrnnTrainer : public Trainer {
public:
    TrnnTrainer(TrnnModel& model, const pipe::Dataset& dataset)
        : model_(model), dataset_(dataset) {}

    nn::ParamStore& params() override { return model_.params_; }
    const TrnnConfig& config() const override { return model_.cfg_; }
    void refresh_cache() override {
        model_.precompute_module_embeddings(dataset_.catalog_features);
    }
    std::vector<HeadProbs> predictions(const pipe::PageExample& page) override {
        std::vector<int> slots;
        for (const LabeledSlot& s : page.slots) slots.push_back(s.module_id);
        return model_.predict_slate(rank_input_from_example(page), slots);
    }

    PageLosses page_pass(const pipe::PageExample& page, const Vec& grad_scale,
                         double rank_scale) override;

private:
    TrnnModel& model_;
    const pipe::Dataset& dataset_;
};

Trainer::PageLosses TrnnTrainer::page_pass(const pipe::PageExample& page, const Vec& grad_scale,
                                           double rank_scale) {
    const TrnnConfig& cfg = model_.cfg_;
    nn::ParamStore& params = model_.params_;
    const bool with_grads = !grad_scale.empty();
    const std::size_t k = page.slots.size();
    const std::size_t q = cfg.heads.size();

    PageLosses out;
    out.head_loss_sum.assign(q, 0.0);
    out.slots = static_cast<int>(k);

    RankInput input = rank_input_from_example(page);

    // Forward. Slot j is scored with the LSTM state that has consumed the
    // start token and the families of slots 1..j-1 (teacher forcing).
    EncoderCache enc_cache;
    Vec hx;
    encoder_forward(params, encoder_input(params, input), &enc_cache, hx);

    std::vector<nn::LstmCache> lstm_caches(k);
    std::vector<Vec> states_h(k), states_c(k);
    Vec h = hx;
    Vec c(static_cast<std::size_t>(cfg.d_h), 0.0);
    std::vector<int> lstm_input_family(k, -1);  // -1 marks the start token
    for (std::size_t j = 0; j < k; ++j) {
        Vec x_in;
        if (j == 0) {
            nn::embedding_forward(params.at("start_token").value, 0, x_in);
        } else {
            lstm_input_family[j] = page.candidates[j - 1].family_id;
            nn::embedding_forward(params.at("family_emb").value, lstm_input_family[j], x_in);
        }
        Vec h_next, c_next;
        nn::lstm_forward(x_in, h, c, params.at("lstm.Wih").value, params.at("lstm.Whh").value,
                         params.at("lstm.b").value.data, h_next, c_next, &lstm_caches[j]);
        h = std::move(h_next);
        c = std::move(c_next);
        states_h[j] = h;
        states_c[j] = c;
    }

    struct SlotForward {
        ModnetCache modnet;
        Vec hm;
        TrunkCache trunk;
        std::vector<double> logits;
        std::vector<double> dlogits;
        // Ablation ranking head: per remaining candidate.
        std::vector<ModnetCache> rank_modnets;
        std::vector<Vec> rank_hms;
        std::vector<TrunkCache> rank_trunks;
        std::vector<double> rank_logits;
        std::vector<double> rank_dlogits;
    };
    std::vector<SlotForward> slot_fwd(k);

    for (std::size_t j = 0; j < k; ++j) {
        SlotForward& sf = slot_fwd[j];
        modnet_forward(params, page.candidates[j].features, &sf.modnet, sf.hm);
        Vec in = states_h[j];
        in.insert(in.end(), sf.hm.begin(), sf.hm.end());
        Vec trunk_out;
        trunk_forward(params, in, &sf.trunk, trunk_out);
        sf.logits.resize(q);
        sf.dlogits.assign(q, 0.0);
        for (std::size_t i = 0; i < q; ++i) {
            sf.logits[i] = head_logit(params, to_string(cfg.heads[i]), trunk_out);
            const SlotTarget target = slot_target(cfg, page.slots[j], cfg.heads[i]);
            double dlogit = 0.0;
            out.head_loss_sum[i] += nn::weighted_binary_ce(
                sf.logits[i], target.label, target.pos_weight, target.neg_weight,
                with_grads ? &dlogit : nullptr);
            sf.dlogits[i] = dlogit;
        }

        if (cfg.softmax_rank_head) {
            // Softmax over the not-yet-placed logged candidates; target is the
            // module the logging policy actually put at this slot.
            const std::size_t remaining = k - j;
            sf.rank_logits.resize(remaining);
            sf.rank_modnets.resize(remaining);
            sf.rank_hms.resize(remaining);
            sf.rank_trunks.resize(remaining);
            for (std::size_t r = 0; r < remaining; ++r) {
                modnet_forward(params, page.candidates[j + r].features, &sf.rank_modnets[r],
                               sf.rank_hms[r]);
                Vec rank_in = states_h[j];
                rank_in.insert(rank_in.end(), sf.rank_hms[r].begin(), sf.rank_hms[r].end());
                Vec rank_out;
                trunk_forward(params, rank_in, &sf.rank_trunks[r], rank_out);
                sf.rank_logits[r] = head_logit(params, "rank", rank_out);
            }
            const double w = cfg.use_ips ? page.slots[j].ips_click : 1.0;
            sf.rank_dlogits.assign(remaining, 0.0);
            Vec dl(remaining, 0.0);
            out.rank_loss_sum +=
                nn::softmax_ce(sf.rank_logits, 0, w, with_grads ? &dl : nullptr);
            sf.rank_dlogits = dl;
        }
    }

    if (!with_grads) return out;

    // Backward through the heads, trunk and module network per slot, chaining
    // dh back through the LSTM steps in reverse.
    std::vector<Vec> dstate_h(k);
    for (std::size_t j = 0; j < k; ++j) dstate_h[j].assign(states_h[j].size(), 0.0);

    for (std::size_t j = 0; j < k; ++j) {
        SlotForward& sf = slot_fwd[j];
        Vec dtrunk_out(sf.trunk.a1.size(), 0.0);
        for (std::size_t i = 0; i < q; ++i) {
            const double d = sf.dlogits[i] * grad_scale[i];
            if (d != 0.0) head_backward(params, to_string(cfg.heads[i]), sf.trunk.a1, d, dtrunk_out);
        }
        Vec din;
        trunk_backward(params, sf.trunk, dtrunk_out, din);
        const std::size_t dh = states_h[j].size();
        for (std::size_t t = 0; t < dh; ++t) dstate_h[j][t] += din[t];
        Vec dhm(din.begin() + static_cast<std::ptrdiff_t>(dh), din.end());
        modnet_backward(params, sf.modnet, dhm);

        if (cfg.softmax_rank_head) {
            for (std::size_t r = 0; r < sf.rank_logits.size(); ++r) {
                const double d = sf.rank_dlogits[r] * rank_scale;
                if (d == 0.0) continue;
                Vec drank_out(sf.rank_trunks[r].a1.size(), 0.0);
                head_backward(params, "rank", sf.rank_trunks[r].a1, d, drank_out);
                Vec drin;
                trunk_backward(params, sf.rank_trunks[r], drank_out, drin);
                for (std::size_t t = 0; t < dh; ++t) dstate_h[j][t] += drin[t];
                Vec drhm(drin.begin() + static_cast<std::ptrdiff_t>(dh), drin.end());
                modnet_backward(params, sf.rank_modnets[r], drhm);
            }
        }
    }

    Vec dh_next(static_cast<std::size_t>(cfg.d_h), 0.0);
    Vec dc_next(static_cast<std::size_t>(cfg.d_h), 0.0);
    for (std::size_t jj = k; jj-- > 0;) {
        Vec dh_total = dstate_h[jj];
        for (std::size_t t = 0; t < dh_total.size(); ++t) dh_total[t] += dh_next[t];
        Vec dx, dh_prev, dc_prev;
        nn::lstm_backward(lstm_caches[jj], params.at("lstm.Wih").value,
                          params.at("lstm.Whh").value, dh_total, dc_next,
                          params.at("lstm.Wih").grad, params.at("lstm.Whh").grad,
                          params.at("lstm.b").grad.data, dx, dh_prev, dc_prev);
        if (jj == 0) {
            nn::embedding_backward(params.at("start_token").grad, 0, dx);
        } else {
            nn::embedding_backward(params.at("family_emb").grad, lstm_input_family[jj], dx);
        }
        dh_next = std::move(dh_prev);
        dc_next = std::move(dc_prev);
    }

    // dh_next now holds the gradient wrt h_x; c_0 is a constant zero vector.
    Vec denc_in;
    encoder_backward(params, enc_cache, dh_next, denc_in);
    Vec dplat(denc_in.begin() + static_cast<std::ptrdiff_t>(input.context_features.size()),
              denc_in.end());
    nn::embedding_backward(params.at("platform_emb").grad, input.platform, dplat);

    return out;
}

class MlpTrainer : public Trainer {
public:
    MlpTrainer(MlpModel& model, const pipe::Dataset& dataset) : model_(model), dataset_(dataset) {}

    nn::ParamStore& params() override { return model_.params_; }
    const TrnnConfig& config() const override { return model_.cfg_; }
    void refresh_cache() override {
        model_.precompute_module_embeddings(dataset_.catalog_features);
    }
    std::vector<HeadProbs> predictions(const pipe::PageExample& page) override {
        std::vector<int> slots;
        for (const LabeledSlot& s : page.slots) slots.push_back(s.module_id);
        return model_.predict_slate(rank_input_from_example(page), slots);
    }

    PageLosses page_pass(const pipe::PageExample& page, const Vec& grad_scale,
                         double rank_scale) override;

private:
    MlpModel& model_;
    const pipe::Dataset& dataset_;
};

Trainer::PageLosses MlpTrainer::page_pass(const pipe::PageExample& page, const Vec& grad_scale,
                                          double rank_scale) {
    (void)rank_scale;  // the point-wise baseline has no ranking head
    const TrnnConfig& cfg = model_.cfg_;
    nn::ParamStore& params = model_.params_;
    const bool with_grads = !grad_scale.empty();
    const std::size_t k = page.slots.size();
    const std::size_t q = cfg.heads.size();

    PageLosses out;
    out.head_loss_sum.assign(q, 0.0);
    out.slots = static_cast<int>(k);

    RankInput input = rank_input_from_example(page);
    EncoderCache enc_cache;
    Vec hx;
    encoder_forward(params, encoder_input(params, input), &enc_cache, hx);
    Vec dhx(hx.size(), 0.0);

    for (std::size_t j = 0; j < k; ++j) {
        ModnetCache modnet_cache;
        Vec hm;
        modnet_forward(params, page.candidates[j].features, &modnet_cache, hm);
        Vec in = hx;
        in.insert(in.end(), hm.begin(), hm.end());
        Vec slot_onehot(static_cast<std::size_t>(model_.dims_.slate_size), 0.0);
        slot_onehot[j] = 1.0;
        in.insert(in.end(), slot_onehot.begin(), slot_onehot.end());
        TrunkCache trunk_cache;
        Vec trunk_out;
        trunk_forward(params, in, &trunk_cache, trunk_out);

        Vec dtrunk_out(trunk_out.size(), 0.0);
        for (std::size_t i = 0; i < q; ++i) {
            const double logit = head_logit(params, to_string(cfg.heads[i]), trunk_out);
            const SlotTarget target = slot_target(cfg, page.slots[j], cfg.heads[i]);
            double dlogit = 0.0;
            out.head_loss_sum[i] += nn::weighted_binary_ce(
                logit, target.label, target.pos_weight, target.neg_weight,
                with_grads ? &dlogit : nullptr);
            if (with_grads && dlogit != 0.0) {
                head_backward(params, to_string(cfg.heads[i]), trunk_out,
                              dlogit * grad_scale[i], dtrunk_out);
            }
        }
        if (!with_grads) continue;
        Vec din;
        trunk_backward(params, trunk_cache, dtrunk_out, din);
        for (std::size_t t = 0; t < hx.size(); ++t) dhx[t] += din[t];
        Vec dhm(din.begin() + static_cast<std::ptrdiff_t>(hx.size()),
                din.begin() + static_cast<std::ptrdiff_t>(hx.size() + hm.size()));
        modnet_backward(params, modnet_cache, dhm);
    }

    if (with_grads) {
        Vec denc_in;
        encoder_backward(params, enc_cache, dhx, denc_in);
        Vec dplat(denc_in.begin() + static_cast<std::ptrdiff_t>(input.context_features.size()),
                  denc_in.end());
        nn::embedding_backward(params.at("platform_emb").grad, input.platform, dplat);
    }
    return out;
}

TrainResult train_trnn(TrnnModel& model, const pipe::Dataset& train,
                       const pipe::Dataset& validation) {
    TrnnTrainer trainer(model, train);
    return trainer.run(train, validation);
}

TrainResult train_mlp(MlpModel& model, const pipe::Dataset& train,
                      const pipe::Dataset& validation) {
    MlpTrainer trainer(model, train);
    return trainer.run(train, validation);
}

// ---------------------------------------------------------------------------
// Popularity baseline

double PopularityModel::score(int bucket, int module_id) const {
    auto it = counts_.find({bucket, module_id});
    const std::int64_t imps = it == counts_.end() ? 0 : it->second.first;
    const std::int64_t clicks = it == counts_.end() ? 0 : it->second.second;
    return static_cast<double>(clicks + 1) / static_cast<double>(imps + 2);
}

std::vector<int> PopularityModel::ranking(int bucket, const std::vector<int>& candidates) const {
    std::vector<int> order = candidates;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = score(bucket, a);
        const double sb = score(bucket, b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return order;
}

std::vector<HeadProbs> PopularityModel::predict_slate(const RankInput& input,
                                                      const std::vector<int>& slots) const {
    std::vector<HeadProbs> out;
    for (int id : slots) {
        HeadProbs p;
        p.click = score(input.bucket, id);
        out.push_back(p);
    }
    return out;
}

namespace {

struct PopScorerState : infer::ScorerState {
    std::unique_ptr<infer::ScorerState> clone() const override {
        return std::make_unique<PopScorerState>();
    }
};

class PopScorer : public infer::SlateScorer {
public:
    PopScorer(const PopularityModel& model, int bucket) : model_(model), bucket_(bucket) {}
    std::unique_ptr<infer::ScorerState> begin() const override {
        return std::make_unique<PopScorerState>();
    }
    std::vector<double> beam_probs(const infer::ScorerState&, std::span<const int> candidates,
                                   int) const override {
        std::vector<double> probs;
        for (int id : candidates) probs.push_back(model_.score(bucket_, id));
        return probs;
    }
    std::unique_ptr<infer::ScorerState> advance(const infer::ScorerState&, int, int) const override {
        return std::make_unique<PopScorerState>();
    }

private:
    const PopularityModel& model_;
    int bucket_;
};

}  // namespace

std::unique_ptr<infer::SlateScorer> PopularityModel::make_scorer(const RankInput& input) const {
    return std::make_unique<PopScorer>(*this, input.bucket);
}

std::string PopularityModel::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [key, counts] : counts_) {
        rows.push_back({{"bucket", key.first},
                        {"module_id", key.second},
                        {"impressions", counts.first},
                        {"clicks", counts.second}});
    }
    nlohmann::json j;
    j["counts"] = rows;
    return j.dump(2);
}

PopularityModel PopularityModel::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    PopularityModel model;
    for (const auto& row : j.at("counts")) {
        model.counts_[{row.at("bucket").get<int>(), row.at("module_id").get<int>()}] = {
            row.at("impressions").get<std::int64_t>(), row.at("clicks").get<std::int64_t>()};
    }
    return model;
}

PopularityModel popularity_baseline(const std::vector<pipe::PageExample>& pages) {
    if (pages.empty()) throw DataError("popularity_baseline: no pages");
    PopularityModel model;
    for (const pipe::PageExample& page : pages) {
        for (const LabeledSlot& slot : page.slots) {
            auto& [imps, clicks] = model.counts_[{page.bucket, slot.module_id}];
            ++imps;
            clicks += slot.y_click;
        }
    }
    return model;
}

}  // namespace pageopt::trnn

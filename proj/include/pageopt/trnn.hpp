#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pageopt/domain.hpp"
#include "pageopt/inference.hpp"
#include "pageopt/neuro.hpp"
#include "pageopt/pipeline.hpp"

namespace pageopt::trnn {

enum class Head { click, intent, attributed_purchase };

std::string to_string(Head head);
std::optional<Head> head_from(const std::string& text);

struct DatasetDims {
    int context_dim = 0;
    int module_dim = 0;
    int family_count = 0;
    int platform_count = 0;
    int bucket_count = 0;
    int slate_size = 0;

    static DatasetDims from_dataset(const pipe::Dataset& dataset);
};

struct TrnnConfig {
    int d_h = 50;  // page hidden = LSTM hidden; must equal d_o
    int d_f = 50;  // family embedding
    int d_m = 50;  // module embedding
    int d_o = 50;  // LSTM output
    int platform_dim = 4;
    int trunk_width = 64;
    std::vector<Head> heads{Head::click, Head::intent, Head::attributed_purchase};
    nn::WeightMode objective_mode = nn::WeightMode::learned;
    std::vector<double> fixed_weights;  // one per head when fixed
    int epochs = 10;
    double lr = 0.001;
    int batch_size = 32;
    std::uint64_t seed = 1;
    bool use_ips = true;
    // Ablation: adds a softmax-CE ranking loss over the page's remaining
    // logged candidates at every slot (target = the logged module).
    bool softmax_rank_head = false;

    void validate() const;
    int head_index(Head head) const;  // -1 when absent
    nlohmann::json to_json() const;
    static TrnnConfig from_json(const nlohmann::json& j);
};

// Per-head probabilities for one (context, module, slot). NaN marks a head the
// model was not trained with.
struct HeadProbs {
    double click = std::numeric_limits<double>::quiet_NaN();
    double intent = std::numeric_limits<double>::quiet_NaN();
    double attributed_purchase = std::numeric_limits<double>::quiet_NaN();

    // What the beam objective and PTR-style evaluation consume: the purchase
    // head when trained, otherwise the click head.
    double purchase_like() const;
    double by_head(Head head) const;
};

// Everything needed to score or rank one page, normalized the same way the
// training data was.
struct RankInput {
    std::int64_t context_id = 0;
    FeatureVec context_features;
    int platform = 0;
    int bucket = 0;
};

RankInput rank_input_from_example(const pipe::PageExample& page);
RankInput rank_input_from_context(const PageContext& ctx, const pipe::NormStats& stats);

// Common surface of the TRNN, the MLP baseline and the popularity baseline:
// teacher-forced prediction along a given slate, and slate construction.
class RankerModel {
public:
    virtual ~RankerModel() = default;
    virtual std::string name() const = 0;
    virtual std::vector<HeadProbs> predict_slate(const RankInput& input,
                                                 const std::vector<int>& slots) const = 0;
    // A slate scorer bound to this context; feeds the beam search.
    virtual std::unique_ptr<infer::SlateScorer> make_scorer(const RankInput& input) const = 0;

    infer::RankResult rank(const RankInput& input, const std::vector<int>& candidates,
                           const Catalog& catalog, const infer::RankRequest& request) const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    std::optional<double> validation_click_auc;
    std::optional<double> validation_purchase_auc;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;
    double best_validation_loss = 0.0;
    nlohmann::json to_json() const;
};

// Two-stage recurrent ranker: page encoder -> LSTM over family embeddings of
// the previously placed modules -> concatenation with precomputed module
// embeddings -> shared MLP trunk with one logistic head per objective.
class TrnnModel : public RankerModel {
public:
    TrnnModel(const TrnnConfig& cfg, const DatasetDims& dims);

    std::string name() const override { return "trnn"; }
    const TrnnConfig& config() const { return cfg_; }
    const DatasetDims& dims() const { return dims_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // h_x for a context; the hidden initialization of the decoder.
    nn::Vec encode_page(const RankInput& input) const;

    // Rebuilds the module_id -> h_m cache. Must cover every module that will
    // be scored; call again after any parameter change.
    void precompute_module_embeddings(const std::vector<pipe::CandidateFeatures>& modules);
    const nn::Vec& cached_embedding(int module_id) const;
    // Same network as the cache, computed on the spot.
    nn::Vec module_embedding(const FeatureVec& features) const;

    struct DecodeState {
        nn::Vec h, c;
    };
    // Encoder + LSTM step on the start token: ready to score slot 1.
    DecodeState begin_decode(const RankInput& input) const;
    DecodeState advance_decode(const DecodeState& state, int chosen_module) const;
    HeadProbs score_module(const DecodeState& state, int module_id) const;

    std::vector<HeadProbs> predict_slate(const RankInput& input,
                                         const std::vector<int>& slots) const override;
    std::unique_ptr<infer::SlateScorer> make_scorer(const RankInput& input) const override;

    void save(const std::string& path) const;
    static std::unique_ptr<TrnnModel> load(const std::string& path);

private:
    friend class TrnnTrainer;
    TrnnConfig cfg_;
    DatasetDims dims_;
    nn::ParamStore params_;
    std::map<int, nn::Vec> module_cache_;
    std::map<int, int> module_family_;
};

// Point-wise baseline: same page encoder and module network, slot position as
// a one-hot input feature, no recurrence. The trunk width is chosen so the
// parameter count lands within a few percent of the TRNN's.
class MlpModel : public RankerModel {
public:
    MlpModel(const TrnnConfig& cfg, const DatasetDims& dims);

    std::string name() const override { return "mlp"; }
    const TrnnConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    int trunk_width() const { return mlp_trunk_width_; }

    void precompute_module_embeddings(const std::vector<pipe::CandidateFeatures>& modules);
    HeadProbs score_module(const RankInput& input, int module_id, int slot) const;

    std::vector<HeadProbs> predict_slate(const RankInput& input,
                                         const std::vector<int>& slots) const override;
    std::unique_ptr<infer::SlateScorer> make_scorer(const RankInput& input) const override;

    void save(const std::string& path) const;
    static std::unique_ptr<MlpModel> load(const std::string& path);

private:
    friend class MlpTrainer;
    nn::Vec encode(const RankInput& input) const;
    TrnnConfig cfg_;
    DatasetDims dims_;
    int mlp_trunk_width_ = 0;
    nn::ParamStore params_;
    std::map<int, nn::Vec> module_cache_;
    std::map<int, int> module_family_;
};

// Chooses an MLP trunk width whose total parameter count best matches the
// TRNN's for the same dims.
int mlp_width_for_budget(const TrnnConfig& cfg, const DatasetDims& dims);

struct TrainResult {
    TrainReport report;
};

// Teacher-forced training along the logged slot order, IPS-weighted losses
// aggregated across heads; returns the best-validation-loss parameters in the
// model. Deterministic for a fixed config seed.
TrainResult train_trnn(TrnnModel& model, const pipe::Dataset& train, const pipe::Dataset& validation);
TrainResult train_mlp(MlpModel& model, const pipe::Dataset& train, const pipe::Dataset& validation);

// Empirical per-(bucket, module) click rate with add-one smoothing:
// (clicks + 1) / (impressions + 2).
class PopularityModel : public RankerModel {
public:
    PopularityModel() = default;
    std::string name() const override { return "popularity"; }

    double score(int bucket, int module_id) const;
    // Modules of one bucket ordered by smoothed CTR (descending, ties by id).
    std::vector<int> ranking(int bucket, const std::vector<int>& candidates) const;

    std::vector<HeadProbs> predict_slate(const RankInput& input,
                                         const std::vector<int>& slots) const override;
    std::unique_ptr<infer::SlateScorer> make_scorer(const RankInput& input) const override;

    std::string to_json() const;
    static PopularityModel from_json(const std::string& text);

    friend PopularityModel popularity_baseline(const std::vector<pipe::PageExample>& pages);

private:
    std::map<std::pair<int, int>, std::pair<std::int64_t, std::int64_t>> counts_;
};

PopularityModel popularity_baseline(const std::vector<pipe::PageExample>& pages);

}  // namespace pageopt::trnn

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pageopt/domain.hpp"

namespace pageopt::pipe {

// One user's events with every inter-event gap at most T minutes.
struct Session {
    std::int64_t user_id = 0;
    std::vector<EngagementEvent> events;
};

// Splits one user's events into sessions. The gap boundary is inclusive: a
// gap of exactly T minutes stays within the session.
std::vector<Session> sessionize(std::int64_t user_id, std::vector<EngagementEvent> events,
                                double gap_minutes);

struct AttributionParams {
    double eta = 0.5;       // decay factor, in (0, 1)
    double epsilon = 1.0;   // time-scale multiplier, > 0
    double gap_minutes = 30.0;  // T, shared with sessionization
};

// Weight of a click that precedes a purchase by dt: eta^(dt / (epsilon * T)).
double attribution_weight(const AttributionParams& params, double dt_seconds);

// For each click in the session that precedes at least one purchase, the
// maximum decay weight over the purchases that follow it. Keyed by
// (page_id, slot) of the click.
std::map<std::pair<std::int64_t, int>, double> attribute_purchase_intent(
    const Session& session, const AttributionParams& params);

// Convenience: sessionize + attribute across a whole log. Pages supply the
// page_id -> user mapping (context_id is the user identity).
std::map<std::pair<std::int64_t, int>, double> attribute_log(
    const std::vector<PagePresentation>& pages, const std::vector<EngagementEvent>& events,
    const AttributionParams& params);

// Per-page slot outcome flags, built once from the event log.
struct SlotOutcome {
    bool clicked = false;
    bool intent = false;
    bool purchased = false;
};

class EventIndex {
public:
    EventIndex(const std::vector<EngagementEvent>& events, int slate_size);

    const SlotOutcome& outcome(std::int64_t page_id, int slot) const;  // 1-based slot
    bool page_has_click(std::int64_t page_id) const;
    bool page_has_any_event(std::int64_t page_id) const;
    std::set<std::int64_t> pages_with_events() const;

private:
    int slate_size_;
    std::map<std::int64_t, std::vector<SlotOutcome>> by_page_;
    static const SlotOutcome kEmpty;
};

// Relative examination probability per slot, estimated on shuffled traffic:
// propensity(s) = rate(s) / rate(1). IPS entries are the exact reciprocals.
struct PropensityColumn {
    std::vector<double> propensity;  // index s-1, value 1 at s = 1
    std::vector<double> ips;
    std::vector<std::int64_t> impressions;
    std::vector<std::int64_t> positives;
};

struct PropensityTable {
    PropensityColumn click;
    PropensityColumn purchase;
    int slate_size = 0;
};

enum class PropensityLevel { click, purchase };

PropensityColumn estimate_propensity(const std::vector<PagePresentation>& uniform_pages,
                                     const EventIndex& index, int slate_size,
                                     PropensityLevel level, std::int64_t min_count = 1000);

PropensityTable build_propensity_table(const std::vector<PagePresentation>& uniform_pages,
                                       const EventIndex& index, int slate_size,
                                       std::int64_t min_count = 1000);

std::string propensity_to_json(const PropensityTable& table);
PropensityTable propensity_from_json(const std::string& text);

// Per-column normalization: optional log1p, then standardize with train-split
// statistics, then clip to [-clip, clip].
struct ColumnStat {
    double mean = 0.0;
    double scale = 1.0;
    double clip = 3.0;
    bool log1p = false;
};

double normalize_value(const ColumnStat& stat, double raw);
// Inverse on non-clipped values.
double denormalize_value(const ColumnStat& stat, double normalized);

struct NormStats {
    std::vector<ColumnStat> context_cols;
    std::vector<ColumnStat> module_cols;
};

struct CandidateFeatures {
    int module_id = 0;
    int family_id = 0;
    FeatureVec features;  // normalized module features + historical CTR
};

// Split ids: 0 train, 1 validation, 2 test.
inline constexpr int kTrain = 0;
inline constexpr int kValidation = 1;
inline constexpr int kTest = 2;

struct PageExample {
    std::int64_t page_id = 0;
    int split = kTrain;
    PolicyTag policy_tag = PolicyTag::thompson;
    int bucket = 0;
    int platform = 0;
    FeatureVec context_features;  // normalized user + hero features
    std::vector<CandidateFeatures> candidates;  // logged slate order
    std::vector<LabeledSlot> slots;
    std::vector<double> slot_propensities;  // logging-policy action propensities
};

struct Dataset {
    std::vector<PageExample> pages;
    NormStats stats;
    // Normalized features for the whole catalog, for ranking fresh contexts.
    std::vector<CandidateFeatures> catalog_features;
    int slate_size = 0;
    int context_dim = 0;
    int module_dim = 0;
    int family_count = 0;
    int platform_count = 0;
    int bucket_count = 0;

    Dataset subset(int split) const;
    std::size_t count(int split) const;
};

struct FeatureConfig {
    double clip = 3.0;
    // Raw module-feature columns (before the appended historical CTR) that
    // get a log1p transform; values must be > -1.
    std::vector<int> log1p_module_columns;
};

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

// Deterministic disjoint split: page ids are ordered by hash(seed, id) and cut
// at the fraction boundaries, so sizes are exact up to rounding.
std::map<std::int64_t, int> split_dataset(const std::vector<std::int64_t>& page_ids,
                                          const SplitFractions& fractions, std::uint64_t seed);

struct BuildDatasetParams {
    FeatureConfig features;
    SplitFractions split;
    std::uint64_t split_seed = 1;
};

using AttributionMap = std::map<std::pair<std::int64_t, int>, double>;

// Turns logged pages into training examples: labels from the event log,
// attributed purchase intent from the precomputed map (see attribute_log),
// IPS weights from the propensity table, features normalized with train-split
// statistics only.
Dataset build_dataset(const std::vector<PagePresentation>& pages,
                      const std::vector<EngagementEvent>& events, const Catalog& catalog,
                      const PropensityTable& propensity, const AttributionMap& attribution,
                      const BuildDatasetParams& params, int platform_count, int bucket_count);

std::string dataset_page_to_json(const PageExample& page);
PageExample dataset_page_from_json(const std::string& line);
std::string norm_stats_to_json(const Dataset& dataset);
// Restores stats/dims/catalog features into an otherwise page-less dataset.
Dataset norm_stats_from_json(const std::string& text);

}  // namespace pageopt::pipe

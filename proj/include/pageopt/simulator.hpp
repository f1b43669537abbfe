#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pageopt/domain.hpp"
#include "pageopt/rng.hpp"

namespace pageopt::sim {

enum class ExaminationShape { log_decay, geometric, custom };

std::string to_string(ExaminationShape shape);

struct SimConfig {
    int families = 8;
    int modules_per_family = 5;
    int slate_size = 6;  // K
    int buckets = 4;
    int users = 500;
    int pages = 10000;
    ExaminationShape exam_shape = ExaminationShape::log_decay;
    double geometric_ratio = 0.7;
    std::vector<double> custom_examination;
    // Ranges of the planted ground-truth probabilities.
    double click_lo = 0.02, click_hi = 0.30;
    double purchase_lo = 0.05, purchase_hi = 0.50;
    double intent_lo = 0.10, intent_hi = 0.60;
    double session_gap_minutes = 30.0;
    double feature_noise = 0.3;
    int platforms = 3;
    std::uint64_t seed = 1;

    // Throws ConfigError on a violated invariant.
    void validate() const;
};

// The synthetic environment. Ground-truth probabilities are planted as
// learnable functions of per-bucket latent vectors and module features, then
// frozen into per-(bucket, module) tables: every estimator and model in the
// repo is checked against these tables.
struct World {
    SimConfig config;
    Catalog catalog;
    std::vector<int> context_buckets;
    // Keyed (bucket, module_id).
    std::map<std::pair<int, int>, double> true_click_prob;
    std::map<std::pair<int, int>, double> true_purchase_given_click;
    std::map<std::pair<int, int>, double> true_intent_given_click;
    // examination_prob[s-1] = P_e(s), non-increasing, P_e(1) = 1.
    std::vector<double> examination_prob;
    // Latent vectors behind the tables; retained so contexts can be sampled.
    std::vector<FeatureVec> bucket_click_pref;
    std::vector<FeatureVec> bucket_purchase_pref;
    std::vector<FeatureVec> bucket_intent_pref;
    std::uint64_t seed = 0;

    double click_prob(int bucket, int module_id) const;
    double purchase_given_click(int bucket, int module_id) const;
    double intent_given_click(int bucket, int module_id) const;
    double examination(int slot) const;  // 1-based slot
};

enum class PageMetric { ctr, ptr };

World gen_world(const SimConfig& cfg);

// Draws bucket, platform and feature vectors; context_id is left for the
// caller (it carries user identity).
PageContext sample_page_context(const World& world, RngStream& rng);

// Position-based engagement model: slot s is examined with P_e(s); an examined
// module is clicked with its true click probability; intent and purchase fire
// only conditional on the click. Returned events are sorted by timestamp.
std::vector<EngagementEvent> simulate_engagement(const World& world,
                                                 const PagePresentation& page,
                                                 RngStream& rng,
                                                 double page_time_seconds);

// Exact page value: 1 - prod_s (1 - P_e(s) * p_event(module at s)).
double oracle_page_value(const World& world, const PagePresentation& page, PageMetric metric);

// Same closed form for a bare slate (no presentation wrapper needed).
double oracle_slate_value(const World& world, int bucket, const std::vector<int>& slots,
                          PageMetric metric);

// world.json round-trip.
std::string world_to_json(const World& world);
World world_from_json(const std::string& text);

}  // namespace pageopt::sim

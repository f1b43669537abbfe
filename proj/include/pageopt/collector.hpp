#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pageopt/domain.hpp"
#include "pageopt/rng.hpp"
#include "pageopt/simulator.hpp"

namespace pageopt::collect {

struct BetaCell {
    double alpha = 1.0;
    double beta = 1.0;
    std::int64_t pending_clicks = 0;
    std::int64_t pending_impressions = 0;
};

// Beta-binomial posterior per (context bucket, module). Read-only while a
// batch of pages ranks against it; updates land between batches.
struct BetaState {
    double prior_alpha = 1.0;
    double prior_beta = 1.0;
    std::map<std::pair<int, int>, BetaCell> cells;

    // Falls back to the prior for unseen pairs.
    BetaCell cell(int bucket, int module_id) const;
    double posterior_mean(int bucket, int module_id) const;
};

struct BatchObservation {
    int bucket = 0;
    int module_id = 0;
    std::int64_t impressions = 0;
    std::int64_t clicks = 0;
};

// Conjugate update: alpha += clicks, beta += impressions - clicks.
BetaState ts_update(BetaState state, const std::vector<BatchObservation>& batch);

enum class DiversityStrategy { none, swap_adjacent, demote };

std::string to_string(DiversityStrategy strategy);

struct CollectorConfig {
    DiversityStrategy strategy = DiversityStrategy::swap_adjacent;
    double demotion_factor = 0.5;  // gamma
    double prior_alpha = 1.0;
    double prior_beta = 1.0;
    int batch_period = 500;        // pages per posterior refresh
    int propensity_samples = 100;  // M replays per logged Thompson page
    std::uint64_t seed = 1;

    void validate() const;
};

// Top-down scan; a consecutive-family violation at position j is fixed by
// swapping j with the nearest lower-ranked module of a different family. A
// violation with no legal swap is left in place so the list length is kept.
std::vector<int> diversify_swap(const std::vector<int>& ranked, const Catalog& catalog);

struct ScoredModule {
    int module_id = 0;
    int family_id = 0;
    double score = 0.0;
};

// Iteratively picks the argmax, then multiplies the remaining rewards of that
// family by gamma. Demotion compounds for each further pick from the family.
std::vector<int> diversify_demote(std::vector<ScoredModule> scored, double gamma);

// Samples one reward per candidate from its beta posterior, ranks, applies the
// diversification strategy, takes the top K. Propensities are not filled here;
// see record_propensity.
PagePresentation ts_rank(const BetaState& state, const PageContext& ctx,
                         const std::vector<ModuleCandidate>& candidates, int k,
                         DiversityStrategy strategy, double gamma, RngStream& rng);

// Ranking by posterior means: the frozen exploitation policy. Deterministic,
// so every slot propensity is exactly 1.
PagePresentation production_rank(const BetaState& state, const PageContext& ctx,
                                 const std::vector<ModuleCandidate>& candidates, int k,
                                 DiversityStrategy strategy, double gamma);

// Uniform K-permutation of the candidates. The marginal probability that a
// given module occupies a given slot is 1/N at every slot (the sequential
// chain (N-1)/N * 1/(N-1) telescopes to 1/N), which is what gets recorded.
PagePresentation uniform_random_rank(const PageContext& ctx,
                                     const std::vector<ModuleCandidate>& candidates, int k,
                                     RngStream& rng);

// Monte-Carlo action propensities for a Thompson page: the fraction of
// `samples` independent ts_rank replays that reproduce each logged slot,
// floored at 1/(2*samples) so downstream inverse weights stay finite.
std::vector<double> record_propensity(const BetaState& state, const PageContext& ctx,
                                      const PagePresentation& chosen,
                                      const std::vector<ModuleCandidate>& candidates,
                                      int samples, DiversityStrategy strategy, double gamma,
                                      RngStream& rng);

// Keeps every positive page, keeps zero-engagement pages with
// negative_keep_rate, then caps production volume at target_ratio times the
// surviving exploration volume. Order of surviving pages is preserved.
std::vector<PagePresentation> downsample(const std::vector<PagePresentation>& pages,
                                         const std::set<std::int64_t>& positive_pages,
                                         double target_ratio, double negative_keep_rate,
                                         RngStream& rng);

// One simulated logging campaign: a uniform-random phase, a Thompson phase
// with batch posterior updates, then a frozen-posterior production phase.
struct CollectionPlan {
    int uniform_pages = 0;
    int thompson_pages = 0;
    int production_pages = 0;
    CollectorConfig collector;
};

struct CollectionResult {
    std::vector<PagePresentation> pages;
    std::vector<EngagementEvent> events;
    BetaState final_state;
    // Page order mirrors `pages`; 1 when the page received any click.
    std::vector<int> page_clicked;
};

CollectionResult run_collection(const sim::World& world, const CollectionPlan& plan,
                                std::uint64_t seed);

}  // namespace pageopt::collect

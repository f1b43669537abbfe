#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pageopt/domain.hpp"

namespace pageopt::infer {

// Slate score update for one more slot: phi' = 1 - (1 - phi)(1 - p), the
// probability that at least one placed module converts.
double beam_score_update(double prev_score, double p_purchase);

// Decode-state handle owned by a scorer. Cloning must be cheap; beams copy
// states when they branch.
struct ScorerState {
    virtual ~ScorerState() = default;
    virtual std::unique_ptr<ScorerState> clone() const = 0;
};

// Scores candidates slot by slot, conditioned on what was already placed.
// A scorer is bound to one page context at construction; slot is 1-based.
class SlateScorer {
public:
    virtual ~SlateScorer() = default;
    virtual std::unique_ptr<ScorerState> begin() const = 0;
    // Probability the slate objective consumes (the purchase head), one per
    // candidate in order.
    virtual std::vector<double> beam_probs(const ScorerState& state,
                                           std::span<const int> candidates, int slot) const = 0;
    virtual std::unique_ptr<ScorerState> advance(const ScorerState& state, int chosen_module,
                                                 int slot) const = 0;
};

// Pass as width for an exhaustive search (no pruning): every legal partial
// slate is kept, so the result equals brute-force enumeration.
inline constexpr int kFullWidth = -1;

struct RankRequest {
    int slate_size = 0;     // K
    int beam_width = 3;     // W, kFullWidth for exhaustive
    int start_slot = 1;     // slots before it are filled greedily
    bool diversity = true;  // no consecutive same-family slots
};

struct SlotTrace {
    int module_id = 0;
    double p_purchase = 0.0;
    double score_after = 0.0;  // phi up to and including this slot
};

struct RankResult {
    std::vector<int> slots;
    double score = 0.0;  // phi of the winning slate
    std::vector<SlotTrace> trace;
    // Set when the diversity constraint had to be relaxed (under two families
    // among candidates, or a beam ran out of legal extensions).
    bool diversity_relaxed = false;
};

// Beam search under the slate objective. Ties in the final selection break by
// higher slot-1 purchase probability, then lexicographically lower module-id
// sequence, making the result a total function of (scorer, context).
RankResult rank_page(const SlateScorer& scorer, const std::vector<int>& candidate_ids,
                     const Catalog& catalog, const RankRequest& request);

struct BoundContext {
    std::int64_t context_id = 0;
    const SlateScorer* scorer = nullptr;
};

struct BeamGreedyRow {
    std::int64_t context_id = 0;
    double greedy_score = 0.0;  // phi at W = 1
    double beam_score = 0.0;    // phi at W = 3
};

struct BeamGreedyReport {
    std::vector<BeamGreedyRow> rows;
    double mean_greedy = 0.0;
    double mean_beam = 0.0;
};

BeamGreedyReport beam_vs_greedy_report(std::span<const BoundContext> contexts,
                                       const std::vector<int>& candidate_ids,
                                       const Catalog& catalog, int slate_size, bool diversity);

}  // namespace pageopt::infer

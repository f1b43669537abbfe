#include "pageopt/inference.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "pageopt/errors.hpp"

namespace pageopt::infer {

double beam_score_update(double prev_score, double p_purchase) {
    if (!(prev_score >= 0.0 && prev_score < 1.0))
        throw DataError("beam_score_update: prev_score outside [0, 1)");
    if (!(p_purchase >= 0.0 && p_purchase <= 1.0))
        throw DataError("beam_score_update: p outside [0, 1]");
    return 1.0 - (1.0 - prev_score) * (1.0 - p_purchase);
}

namespace {

struct Beam {
    std::vector<int> prefix;
    std::unique_ptr<ScorerState> state;
    double score = 0.0;
    double slot1_p = 0.0;
    std::vector<SlotTrace> trace;
};

// Total order on competing beams: higher phi first, then higher slot-1
// purchase probability, then lexicographically smaller module sequence.
bool beam_before(const Beam& a, const Beam& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.slot1_p != b.slot1_p) return a.slot1_p > b.slot1_p;
    return a.prefix < b.prefix;
}

std::vector<int> legal_candidates(const std::vector<int>& candidate_ids,
                                  const std::vector<int>& prefix, const Catalog& catalog,
                                  bool diversity) {
    std::set<int> used(prefix.begin(), prefix.end());
    const int prev_family = prefix.empty() ? -1 : catalog.family_of(prefix.back());
    std::vector<int> legal;
    for (int id : candidate_ids) {
        if (used.count(id)) continue;
        if (diversity && prev_family >= 0 && catalog.family_of(id) == prev_family) continue;
        legal.push_back(id);
    }
    return legal;
}

}  // namespace

RankResult rank_page(const SlateScorer& scorer, const std::vector<int>& candidate_ids,
                     const Catalog& catalog, const RankRequest& request) {
    const int k = request.slate_size;
    if (static_cast<int>(candidate_ids.size()) < k)
        throw DataError("rank_page: fewer candidates than slots");
    if (request.beam_width < 1 && request.beam_width != kFullWidth)
        throw DataError("rank_page: beam width must be >= 1");
    if (request.start_slot < 1 || request.start_slot > k)
        throw DataError("rank_page: start_slot outside [1, K]");

    bool relaxed = false;
    bool diversity = request.diversity;
    if (diversity && k >= 2) {
        std::set<int> families;
        for (int id : candidate_ids) families.insert(catalog.family_of(id));
        if (families.size() < 2) {
            // Infeasible under a single family; fall back and flag it.
            diversity = false;
            relaxed = true;
        }
    }

    Beam root;
    root.state = scorer.begin();
    std::vector<Beam> beams;
    beams.push_back(std::move(root));

    for (int slot = 1; slot <= k; ++slot) {
        // Greedy prefix before start_slot, beam width afterwards.
        const bool greedy_phase = slot < request.start_slot;
        const int width = greedy_phase                       ? 1
                          : request.beam_width == kFullWidth ? std::numeric_limits<int>::max()
                                                             : request.beam_width;

        std::vector<Beam> children;
        for (Beam& beam : beams) {
            std::vector<int> legal =
                legal_candidates(candidate_ids, beam.prefix, catalog, diversity);
            if (legal.empty() && diversity) {
                // Dead end under the constraint: relax this expansion so the
                // slate keeps K slots.
                legal = legal_candidates(candidate_ids, beam.prefix, catalog, false);
                relaxed = true;
            }
            const std::vector<double> probs = scorer.beam_probs(*beam.state, legal, slot);
            for (std::size_t i = 0; i < legal.size(); ++i) {
                Beam child;
                child.prefix = beam.prefix;
                child.prefix.push_back(legal[i]);
                child.score = beam_score_update(std::min(beam.score, 1.0 - 1e-15), probs[i]);
                child.slot1_p = slot == 1 ? probs[i] : beam.slot1_p;
                child.trace = beam.trace;
                child.trace.push_back({legal[i], probs[i], child.score});
                child.state = scorer.advance(*beam.state, legal[i], slot);
                children.push_back(std::move(child));
            }
        }
        if (children.empty()) throw DataError("rank_page: no candidates left to place");
        std::sort(children.begin(), children.end(), beam_before);
        if (static_cast<int>(children.size()) > width) {
            children.resize(static_cast<std::size_t>(width));
        }
        beams = std::move(children);
    }

    Beam& best = beams.front();
    RankResult result;
    result.slots = std::move(best.prefix);
    result.score = best.score;
    result.trace = std::move(best.trace);
    result.diversity_relaxed = relaxed;
    return result;
}

BeamGreedyReport beam_vs_greedy_report(std::span<const BoundContext> contexts,
                                       const std::vector<int>& candidate_ids,
                                       const Catalog& catalog, int slate_size, bool diversity) {
    BeamGreedyReport report;
    for (const BoundContext& ctx : contexts) {
        RankRequest greedy{slate_size, 1, 1, diversity};
        RankRequest beam{slate_size, 3, 1, diversity};
        BeamGreedyRow row;
        row.context_id = ctx.context_id;
        row.greedy_score = rank_page(*ctx.scorer, candidate_ids, catalog, greedy).score;
        row.beam_score = rank_page(*ctx.scorer, candidate_ids, catalog, beam).score;
        report.mean_greedy += row.greedy_score;
        report.mean_beam += row.beam_score;
        report.rows.push_back(row);
    }
    if (!report.rows.empty()) {
        report.mean_greedy /= static_cast<double>(report.rows.size());
        report.mean_beam /= static_cast<double>(report.rows.size());
    }
    return report;
}

}  // namespace pageopt::infer

#include "pageopt/collector.hpp"

#include <algorithm>
#include <cmath>

#include "pageopt/errors.hpp"

namespace pageopt::collect {

BetaCell BetaState::cell(int bucket, int module_id) const {
    auto it = cells.find({bucket, module_id});
    if (it != cells.end()) return it->second;
    BetaCell fresh;
    fresh.alpha = prior_alpha;
    fresh.beta = prior_beta;
    return fresh;
}

double BetaState::posterior_mean(int bucket, int module_id) const {
    const BetaCell c = cell(bucket, module_id);
    return c.alpha / (c.alpha + c.beta);
}

BetaState ts_update(BetaState state, const std::vector<BatchObservation>& batch) {
    for (const BatchObservation& obs : batch) {
        if (obs.impressions < 0 || obs.clicks < 0)
            throw DataError("ts_update: negative counts");
        if (obs.clicks > obs.impressions)
            throw DataError("ts_update: clicks exceed impressions");
        auto [it, inserted] = state.cells.try_emplace({obs.bucket, obs.module_id});
        if (inserted) {
            it->second.alpha = state.prior_alpha;
            it->second.beta = state.prior_beta;
        }
        it->second.alpha += static_cast<double>(obs.clicks);
        it->second.beta += static_cast<double>(obs.impressions - obs.clicks);
    }
    return state;
}

std::string to_string(DiversityStrategy strategy) {
    switch (strategy) {
        case DiversityStrategy::none: return "none";
        case DiversityStrategy::swap_adjacent: return "swap";
        case DiversityStrategy::demote: return "demote";
    }
    return "unknown";
}

void CollectorConfig::validate() const {
    if (!(demotion_factor > 0.0 && demotion_factor < 1.0))
        throw ConfigError("collect: demotion_factor must be in (0, 1)");
    if (!(prior_alpha > 0.0 && prior_beta > 0.0))
        throw ConfigError("collect: beta prior must be positive");
    if (batch_period < 1) throw ConfigError("collect: batch_period must be >= 1");
    if (propensity_samples < 100)
        throw ConfigError("collect: propensity_samples must be >= 100 for logged Thompson traffic");
}

std::vector<int> diversify_swap(const std::vector<int>& ranked, const Catalog& catalog) {
    std::vector<int> out = ranked;
    for (std::size_t j = 1; j < out.size(); ++j) {
        if (catalog.family_of(out[j]) != catalog.family_of(out[j - 1])) continue;
        for (std::size_t l = j + 1; l < out.size(); ++l) {
            if (catalog.family_of(out[l]) != catalog.family_of(out[j])) {
                std::swap(out[j], out[l]);
                break;
            }
        }
        // No different-family module below: the violation stays.
    }
    return out;
}

std::vector<int> diversify_demote(std::vector<ScoredModule> scored, double gamma) {
    std::vector<int> order;
    order.reserve(scored.size());
    while (!scored.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < scored.size(); ++i) {
            if (scored[i].score > scored[best].score ||
                (scored[i].score == scored[best].score &&
                 scored[i].module_id < scored[best].module_id)) {
                best = i;
            }
        }
        const ScoredModule picked = scored[best];
        order.push_back(picked.module_id);
        scored.erase(scored.begin() + static_cast<std::ptrdiff_t>(best));
        for (ScoredModule& m : scored) {
            if (m.family_id == picked.family_id) m.score *= gamma;
        }
    }
    return order;
}

namespace {

std::vector<int> rank_scored(std::vector<ScoredModule> scored, int k,
                             DiversityStrategy strategy, double gamma, const Catalog* catalog) {
    std::sort(scored.begin(), scored.end(), [](const ScoredModule& a, const ScoredModule& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.module_id < b.module_id;
    });
    std::vector<int> order;
    switch (strategy) {
        case DiversityStrategy::none:
            for (const ScoredModule& m : scored) order.push_back(m.module_id);
            break;
        case DiversityStrategy::swap_adjacent: {
            std::vector<int> ids;
            for (const ScoredModule& m : scored) ids.push_back(m.module_id);
            order = diversify_swap(ids, *catalog);
            break;
        }
        case DiversityStrategy::demote:
            order = diversify_demote(std::move(scored), gamma);
            break;
    }
    order.resize(static_cast<std::size_t>(k));
    return order;
}

std::vector<ScoredModule> sample_scores(const BetaState& state, int bucket,
                                        const std::vector<ModuleCandidate>& candidates,
                                        RngStream& rng) {
    std::vector<ScoredModule> scored;
    scored.reserve(candidates.size());
    for (const ModuleCandidate& m : candidates) {
        const BetaCell c = state.cell(bucket, m.module_id);
        scored.push_back({m.module_id, m.family_id, rng.beta(c.alpha, c.beta)});
    }
    return scored;
}

}  // namespace

PagePresentation ts_rank(const BetaState& state, const PageContext& ctx,
                         const std::vector<ModuleCandidate>& candidates, int k,
                         DiversityStrategy strategy, double gamma, RngStream& rng) {
    if (static_cast<int>(candidates.size()) < k)
        throw DataError("ts_rank: fewer candidates than slots");
    // The catalog here only needs family lookups for the swap pass.
    Catalog families({}, candidates);
    PagePresentation page;
    page.context = ctx;
    page.policy_tag = PolicyTag::thompson;
    page.slots = rank_scored(sample_scores(state, ctx.context_bucket, candidates, rng), k,
                             strategy, gamma, &families);
    return page;
}

PagePresentation production_rank(const BetaState& state, const PageContext& ctx,
                                 const std::vector<ModuleCandidate>& candidates, int k,
                                 DiversityStrategy strategy, double gamma) {
    if (static_cast<int>(candidates.size()) < k)
        throw DataError("production_rank: fewer candidates than slots");
    Catalog families({}, candidates);
    std::vector<ScoredModule> scored;
    scored.reserve(candidates.size());
    for (const ModuleCandidate& m : candidates) {
        scored.push_back({m.module_id, m.family_id,
                          state.posterior_mean(ctx.context_bucket, m.module_id)});
    }
    PagePresentation page;
    page.context = ctx;
    page.policy_tag = PolicyTag::production;
    page.slots = rank_scored(std::move(scored), k, strategy, gamma, &families);
    page.slot_propensities.assign(page.slots.size(), 1.0);
    return page;
}

PagePresentation uniform_random_rank(const PageContext& ctx,
                                     const std::vector<ModuleCandidate>& candidates, int k,
                                     RngStream& rng) {
    const std::size_t n = candidates.size();
    if (static_cast<int>(n) < k) throw DataError("uniform_random_rank: fewer candidates than slots");
    std::vector<int> ids;
    ids.reserve(n);
    for (const ModuleCandidate& m : candidates) ids.push_back(m.module_id);
    std::sort(ids.begin(), ids.end());
    // Partial Fisher-Yates: the first k entries are a uniform K-permutation.
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + rng.next_below(n - static_cast<std::size_t>(i));
        std::swap(ids[i], ids[j]);
    }
    PagePresentation page;
    page.context = ctx;
    page.policy_tag = PolicyTag::uniform_random;
    page.slots.assign(ids.begin(), ids.begin() + k);
    page.slot_propensities.assign(static_cast<std::size_t>(k), 1.0 / static_cast<double>(n));
    return page;
}

std::vector<double> record_propensity(const BetaState& state, const PageContext& ctx,
                                      const PagePresentation& chosen,
                                      const std::vector<ModuleCandidate>& candidates,
                                      int samples, DiversityStrategy strategy, double gamma,
                                      RngStream& rng) {
    if (samples < 1) throw DataError("record_propensity: samples must be >= 1");
    std::vector<int> counts(chosen.slots.size(), 0);
    for (int m = 0; m < samples; ++m) {
        RngStream replay = rng.derive("replay", static_cast<std::uint64_t>(m));
        const PagePresentation again =
            ts_rank(state, ctx, candidates, static_cast<int>(chosen.slots.size()), strategy,
                    gamma, replay);
        for (std::size_t s = 0; s < chosen.slots.size(); ++s) {
            if (again.slots[s] == chosen.slots[s]) ++counts[s];
        }
    }
    const double floor = 1.0 / (2.0 * static_cast<double>(samples));
    std::vector<double> propensity(chosen.slots.size());
    for (std::size_t s = 0; s < counts.size(); ++s) {
        propensity[s] =
            std::max(static_cast<double>(counts[s]) / static_cast<double>(samples), floor);
    }
    return propensity;
}

std::vector<PagePresentation> downsample(const std::vector<PagePresentation>& pages,
                                         const std::set<std::int64_t>& positive_pages,
                                         double target_ratio, double negative_keep_rate,
                                         RngStream& rng) {
    if (!(target_ratio > 0.0)) throw DataError("downsample: target_ratio must be > 0");
    if (!(negative_keep_rate > 0.0 && negative_keep_rate <= 1.0))
        throw DataError("downsample: negative_keep_rate must be in (0, 1]");

    std::vector<PagePresentation> kept;
    kept.reserve(pages.size());
    std::size_t exploration = 0;
    for (const PagePresentation& page : pages) {
        const bool positive = positive_pages.count(page.page_id) > 0;
        if (!positive && !rng.bernoulli(negative_keep_rate)) continue;
        if (page.policy_tag != PolicyTag::production && page.policy_tag != PolicyTag::model)
            ++exploration;
        kept.push_back(page);
    }

    std::vector<std::size_t> production_idx;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i].policy_tag == PolicyTag::production ||
            kept[i].policy_tag == PolicyTag::model) {
            production_idx.push_back(i);
        }
    }
    const auto cap = static_cast<std::size_t>(
        std::floor(target_ratio * static_cast<double>(exploration)));
    if (production_idx.size() <= cap) return kept;

    // Uniform subsample of production pages, order preserved.
    std::vector<std::size_t> pick = production_idx;
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + rng.next_below(pick.size() - i);
        std::swap(pick[i], pick[j]);
    }
    pick.resize(cap);
    std::sort(pick.begin(), pick.end());
    std::vector<PagePresentation> out;
    out.reserve(kept.size() - production_idx.size() + cap);
    std::size_t next_pick = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const bool is_production = kept[i].policy_tag == PolicyTag::production ||
                                   kept[i].policy_tag == PolicyTag::model;
        if (is_production) {
            if (next_pick < pick.size() && pick[next_pick] == i) {
                out.push_back(kept[i]);
                ++next_pick;
            }
        } else {
            out.push_back(kept[i]);
        }
    }
    return out;
}

CollectionResult run_collection(const sim::World& world, const CollectionPlan& plan,
                                std::uint64_t seed) {
    plan.collector.validate();
    const sim::SimConfig& sim_cfg = world.config;
    const int k = sim_cfg.slate_size;
    const std::vector<ModuleCandidate>& candidates = world.catalog.modules();
    const double gap_seconds = sim_cfg.session_gap_minutes * 60.0;

    RngStream root(seed);
    CollectionResult result;

    BetaState posterior;
    posterior.prior_alpha = plan.collector.prior_alpha;
    posterior.prior_beta = plan.collector.prior_beta;

    // Pending Thompson observations, flushed every batch_period pages.
    std::map<std::pair<int, int>, BatchObservation> pending;
    int pages_in_batch = 0;

    // Independent per-user clocks; most consecutive pages of a user fall in
    // the same session, some open a new one.
    std::vector<double> user_clock(static_cast<std::size_t>(sim_cfg.users));
    constexpr double kBaseTime = 1.7e9;
    for (std::size_t u = 0; u < user_clock.size(); ++u) {
        user_clock[u] = kBaseTime + static_cast<double>(u) * 7.0;
    }

    const int total_pages = plan.uniform_pages + plan.thompson_pages + plan.production_pages;
    std::int64_t page_id = 0;
    for (int i = 0; i < total_pages; ++i, ++page_id) {
        const auto pid = static_cast<std::uint64_t>(page_id);
        RngStream page_rng = root.derive("page", pid);

        const auto user = static_cast<std::int64_t>(
            page_rng.derive("user").next_below(static_cast<std::uint64_t>(sim_cfg.users)));
        RngStream clock_rng = page_rng.derive("clock");
        double& clock = user_clock[static_cast<std::size_t>(user)];
        if (clock_rng.bernoulli(0.7)) {
            clock += clock_rng.uniform(30.0, 300.0);
        } else {
            clock += gap_seconds + clock_rng.uniform(300.0, 3600.0);
        }

        RngStream ctx_rng = page_rng.derive("context");
        PageContext ctx = sim::sample_page_context(world, ctx_rng);
        ctx.context_id = user;

        PagePresentation page;
        const bool uniform_phase = i < plan.uniform_pages;
        const bool thompson_phase = !uniform_phase && i < plan.uniform_pages + plan.thompson_pages;
        if (uniform_phase) {
            RngStream rank_rng = page_rng.derive("rank");
            page = uniform_random_rank(ctx, candidates, k, rank_rng);
        } else if (thompson_phase) {
            RngStream rank_rng = page_rng.derive("rank");
            page = ts_rank(posterior, ctx, candidates, k, plan.collector.strategy,
                           plan.collector.demotion_factor, rank_rng);
            RngStream prop_rng = page_rng.derive("propensity");
            page.slot_propensities = record_propensity(
                posterior, ctx, page, candidates, plan.collector.propensity_samples,
                plan.collector.strategy, plan.collector.demotion_factor, prop_rng);
        } else {
            page = production_rank(posterior, ctx, candidates, k, plan.collector.strategy,
                                   plan.collector.demotion_factor);
            page.context = ctx;
        }
        page.page_id = page_id;

        RngStream engage_rng = page_rng.derive("engagement");
        std::vector<EngagementEvent> events =
            sim::simulate_engagement(world, page, engage_rng, clock);

        if (thompson_phase) {
            std::set<int> clicked;
            for (const EngagementEvent& e : events) {
                if (e.event_type == EventType::click) clicked.insert(e.slot);
            }
            for (std::size_t s = 0; s < page.slots.size(); ++s) {
                auto& obs = pending[{ctx.context_bucket, page.slots[s]}];
                obs.bucket = ctx.context_bucket;
                obs.module_id = page.slots[s];
                obs.impressions += 1;
                obs.clicks += clicked.count(static_cast<int>(s) + 1) ? 1 : 0;
            }
            if (++pages_in_batch >= plan.collector.batch_period) {
                std::vector<BatchObservation> batch;
                batch.reserve(pending.size());
                for (const auto& [key, obs] : pending) batch.push_back(obs);
                posterior = ts_update(std::move(posterior), batch);
                pending.clear();
                pages_in_batch = 0;
            }
        }

        result.page_clicked.push_back(events.empty() ? 0 : [&] {
            for (const EngagementEvent& e : events) {
                if (e.event_type == EventType::click) return 1;
            }
            return 0;
        }());
        result.pages.push_back(std::move(page));
        result.events.insert(result.events.end(), events.begin(), events.end());
    }

    result.final_state = std::move(posterior);
    return result;
}

}  // namespace pageopt::collect

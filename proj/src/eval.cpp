#include "pageopt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pageopt/errors.hpp"

namespace pageopt::eval {

double ndcg_at_k(const std::vector<double>& gains_in_ranked_order, int k) {
    if (k < 1) throw DataError("ndcg_at_k: k must be >= 1");
    const auto limit = std::min<std::size_t>(gains_in_ranked_order.size(),
                                             static_cast<std::size_t>(k));
    double dcg = 0.0;
    for (std::size_t i = 0; i < limit; ++i) {
        dcg += gains_in_ranked_order[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<double> ideal = gains_in_ranked_order;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < limit; ++i) {
        idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    if (idcg <= 0.0) return 0.0;
    return dcg / idcg;
}

double mrpr(const std::vector<int>& first_purchase_ranks) {
    if (first_purchase_ranks.empty()) return 0.0;
    double sum = 0.0;
    for (int rank : first_purchase_ranks) {
        if (rank < 1) throw DataError("mrpr: ranks are 1-based");
        sum += 1.0 / static_cast<double>(rank);
    }
    return sum / static_cast<double>(first_purchase_ranks.size());
}

BinaryClassStats f1_auc(const std::vector<double>& predictions, const std::vector<int>& labels,
                        double threshold) {
    if (predictions.size() != labels.size())
        throw DataError("f1_auc: prediction/label size mismatch");
    BinaryClassStats stats;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool positive = labels[i] != 0;
        const bool predicted = predictions[i] >= threshold;
        stats.positives += positive ? 1 : 0;
        stats.negatives += positive ? 0 : 1;
        if (predicted && positive) ++tp;
        if (predicted && !positive) ++fp;
        if (!predicted && positive) ++fn;
    }
    stats.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    stats.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    stats.f1 = stats.precision + stats.recall > 0.0
                   ? 2.0 * stats.precision * stats.recall / (stats.precision + stats.recall)
                   : 0.0;

    if (stats.positives == 0 || stats.negatives == 0) return stats;  // AUC undefined

    // Rank statistic with midranks for ties.
    std::vector<std::size_t> idx(predictions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && predictions[idx[j]] == predictions[idx[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t) {
            if (labels[idx[t]] != 0) positive_rank_sum += midrank;
        }
        i = j;
    }
    const double n_pos = static_cast<double>(stats.positives);
    const double n_neg = static_cast<double>(stats.negatives);
    stats.auc = (positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
    return stats;
}

namespace {

double page_value(const std::vector<int>& slots, const std::vector<double>& preds,
                  const std::vector<double>& position_propensity) {
    double survival = 1.0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        if (s >= position_propensity.size())
            throw DataError("off-policy estimate: missing position propensity for slot " +
                            std::to_string(s + 1));
        survival *= 1.0 - position_propensity[s] * preds[s];
    }
    return 1.0 - survival;
}

}  // namespace

double dm_estimate(std::span<const DmDrPage> pages,
                   const std::vector<double>& position_propensity) {
    if (pages.empty()) throw DataError("dm_estimate: no pages");
    double sum = 0.0;
    for (const DmDrPage& page : pages) {
        sum += page_value(page.target_slots, page.model_pred_target, position_propensity);
    }
    return sum / static_cast<double>(pages.size());
}

DrResult dr_estimate(std::span<const DmDrPage> pages,
                     const std::vector<double>& position_propensity, double w_max) {
    if (pages.empty()) throw DataError("dr_estimate: no pages");
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const DmDrPage& page : pages) {
        double survival = 1.0;
        for (std::size_t s = 0; s < page.target_slots.size(); ++s) {
            const double prop = position_propensity.at(s);
            double slot_value = prop * page.model_pred_target[s];
            if (s < page.logged_slots.size() && page.logged_slots[s] == page.target_slots[s]) {
                const double logging = page.logging_propensities.at(s);
                if (!(logging > 0.0))
                    throw DataError("dr_estimate: zero logging propensity at slot " +
                                    std::to_string(s + 1));
                const double w = std::min(1.0 / logging, w_max);
                const double predicted_observed = prop * page.model_pred_logged[s];
                slot_value += w * (static_cast<double>(page.observed[s]) - predicted_observed);
            }
            survival *= 1.0 - slot_value;
        }
        const double value = 1.0 - survival;
        sum += value;
        sum_sq += value * value;
    }
    const double n = static_cast<double>(pages.size());
    DrResult result;
    result.unclipped = sum / n;
    result.clipped = std::clamp(result.unclipped, 0.0, 1.0);
    const double var = std::max(0.0, sum_sq / n - result.unclipped * result.unclipped);
    result.std_error = std::sqrt(var / n);
    return result;
}

void EvalReport::set(const std::string& name, double value, std::int64_t count,
                     double half_width) {
    if (!values.count(name)) order.push_back(name);
    values[name] = value;
    if (count > 0) counts[name] = count;
    if (half_width > 0.0) ci_half_width[name] = half_width;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    for (const std::string& name : order) {
        nlohmann::json entry;
        entry["value"] = values.at(name);
        if (counts.count(name)) entry["count"] = counts.at(name);
        if (ci_half_width.count(name)) entry["ci_half_width"] = ci_half_width.at(name);
        j["metrics"][name] = entry;
    }
    j["metric_order"] = order;
    if (!config_echo.empty()) j["config_echo"] = nlohmann::json::parse(config_echo);
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value,count,ci_half_width\n";
    for (const std::string& name : order) {
        out << name << "," << values.at(name) << ",";
        if (counts.count(name)) out << counts.at(name);
        out << ",";
        if (ci_half_width.count(name)) out << ci_half_width.at(name);
        out << "\n";
    }
    return out.str();
}

}  // namespace pageopt::eval

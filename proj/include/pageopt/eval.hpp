#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pageopt::eval {

// DCG with gain = label and discount 1/log2(1 + rank), normalized by the
// ideal ordering. Pages with no positive gain return 0.
double ndcg_at_k(const std::vector<double>& gains_in_ranked_order, int k);

// Mean of 1/(rank of first purchase) over pages that have one; ranks are
// 1-based. Pages without a purchase are excluded by construction.
double mrpr(const std::vector<int>& first_purchase_ranks);

struct BinaryClassStats {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Absent when the labels are degenerate (one class only).
    std::optional<double> auc;
    std::int64_t positives = 0;
    std::int64_t negatives = 0;
};

// Threshold classification metrics plus rank-statistic AUC (ties count half).
// Predictions at or above the threshold count as positive.
BinaryClassStats f1_auc(const std::vector<double>& predictions, const std::vector<int>& labels,
                        double threshold = 0.5);

// One logged page prepared for off-policy estimation, with the reward model
// and the target policy already applied. `observed` holds the 0/1 reward per
// logged slot at the chosen level (click or purchase).
struct DmDrPage {
    std::vector<int> logged_slots;
    std::vector<double> logging_propensities;  // action propensity per slot
    std::vector<int> observed;
    std::vector<int> target_slots;
    std::vector<double> model_pred_target;  // p-hat per target slot module
    std::vector<double> model_pred_logged;  // p-hat per logged slot module
};

// Direct method: mean over pages of the model-composed page value
// 1 - prod_s (1 - position_propensity(s) * p-hat(target module at s)).
double dm_estimate(std::span<const DmDrPage> pages,
                   const std::vector<double>& position_propensity);

struct DrResult {
    double clipped = 0.0;    // final estimate, clamped to [0, 1]
    double unclipped = 0.0;  // raw mean, retained for the report
    double std_error = 0.0;  // normal-approximation SE of the page mean
};

// Doubly robust: per slot of the target slate, the DM term plus (when the
// logged action matches) the propensity-weighted residual, composed to page
// level with the same 1 - prod structure. Importance weights clip at w_max.
DrResult dr_estimate(std::span<const DmDrPage> pages,
                     const std::vector<double>& position_propensity, double w_max = 20.0);

// Flat metric table with sample counts and normal-approximation CI
// half-widths; serializes to JSON and a fixed-order CSV.
struct EvalReport {
    std::vector<std::string> order;
    std::map<std::string, double> values;
    std::map<std::string, std::int64_t> counts;
    std::map<std::string, double> ci_half_width;
    std::string config_echo;

    void set(const std::string& name, double value, std::int64_t count = 0,
             double half_width = 0.0);
    std::string to_json() const;
    std::string to_csv() const;
};

}  // namespace pageopt::eval

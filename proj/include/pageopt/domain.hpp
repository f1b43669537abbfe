#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace pageopt {

using FeatureVec = std::vector<double>;

// A group of similar recommendation modules; consecutive slots must not share
// a family when diversity is enforced.
struct ModuleFamily {
    int family_id = 0;
    FeatureVec theme_features;
};

// One rankable recommendation module (carousel). Features are the static
// description of the module, fixed for its lifetime.
struct ModuleCandidate {
    int module_id = 0;
    int family_id = 0;
    FeatureVec features;
};

// The full set of families and modules available to rank.
class Catalog {
public:
    Catalog() = default;
    Catalog(std::vector<ModuleFamily> families, std::vector<ModuleCandidate> modules);

    const std::vector<ModuleFamily>& families() const { return families_; }
    const std::vector<ModuleCandidate>& modules() const { return modules_; }

    const ModuleCandidate* find_module(int module_id) const;
    // -1 when the module is unknown.
    int family_of(int module_id) const;
    bool has_module(int module_id) const { return find_module(module_id) != nullptr; }

private:
    std::vector<ModuleFamily> families_;
    std::vector<ModuleCandidate> modules_;
    std::unordered_map<int, std::size_t> index_;
};

enum class PolicyTag { thompson, uniform_random, production, model };

std::string to_string(PolicyTag tag);
std::optional<PolicyTag> policy_tag_from(const std::string& text);

// Everything known about one page request before any module is scored.
// context_id doubles as the user identity for sessionization; context_bucket
// is the coarse key Thompson sampling conditions on.
struct PageContext {
    std::int64_t context_id = 0;
    FeatureVec user_features;
    FeatureVec hero_item_features;
    int platform = 0;
    int context_bucket = 0;
};

// An ordered K-slot slate as shown to a user, plus what the logging policy
// knew at decision time. slots[i] is the module at 1-based slot i+1.
// slot_propensities are the policy's per-slot action probabilities, recorded
// at logging time because they cannot be reconstructed afterwards.
struct PagePresentation {
    std::int64_t page_id = 0;
    PageContext context;
    std::vector<int> slots;
    PolicyTag policy_tag = PolicyTag::model;
    std::vector<double> slot_propensities;
};

enum class EventType { click, watch, add_to_cart, purchase };

std::string to_string(EventType type);
std::optional<EventType> event_type_from(const std::string& text);

// True for the purchase-intent signals (anything between click and purchase).
bool is_intent_event(EventType type);

struct EngagementEvent {
    std::int64_t page_id = 0;
    int slot = 0;  // 1-based
    int module_id = 0;
    EventType event_type = EventType::click;
    double timestamp = 0.0;  // seconds since epoch
};

// One training row: the module shown at a slot with its labels and weights.
struct LabeledSlot {
    int module_id = 0;
    int slot = 0;  // 1-based
    int y_click = 0;
    int y_intent = 0;
    int y_purchase = 0;
    double y_attributed_purchase = 0.0;  // in [0, 1]
    double ips_click = 1.0;
    double ips_purchase = 1.0;
};

struct Violation {
    int slot = 0;  // 1-based slot where the problem sits, 0 for page-level
    std::string kind;
    std::string detail;
};

// Reports every invariant breach as data; never throws. Checks duplicate
// modules, unknown module ids, propensity range, and (when requested) the
// consecutive-family diversity constraint.
std::vector<Violation> validate_presentation(const PagePresentation& page,
                                             const Catalog& catalog,
                                             bool require_diversity);

}  // namespace pageopt

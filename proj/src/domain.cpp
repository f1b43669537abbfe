#include "pageopt/domain.hpp"

#include <set>

namespace pageopt {

Catalog::Catalog(std::vector<ModuleFamily> families, std::vector<ModuleCandidate> modules)
    : families_(std::move(families)), modules_(std::move(modules)) {
    index_.reserve(modules_.size());
    for (std::size_t i = 0; i < modules_.size(); ++i) {
        index_.emplace(modules_[i].module_id, i);
    }
}

const ModuleCandidate* Catalog::find_module(int module_id) const {
    auto it = index_.find(module_id);
    if (it == index_.end()) return nullptr;
    return &modules_[it->second];
}

int Catalog::family_of(int module_id) const {
    const ModuleCandidate* m = find_module(module_id);
    return m ? m->family_id : -1;
}

std::string to_string(PolicyTag tag) {
    switch (tag) {
        case PolicyTag::thompson: return "thompson";
        case PolicyTag::uniform_random: return "uniform_random";
        case PolicyTag::production: return "production";
        case PolicyTag::model: return "model";
    }
    return "unknown";
}

std::optional<PolicyTag> policy_tag_from(const std::string& text) {
    if (text == "thompson") return PolicyTag::thompson;
    if (text == "uniform_random") return PolicyTag::uniform_random;
    if (text == "production") return PolicyTag::production;
    if (text == "model") return PolicyTag::model;
    return std::nullopt;
}

std::string to_string(EventType type) {
    switch (type) {
        case EventType::click: return "click";
        case EventType::watch: return "watch";
        case EventType::add_to_cart: return "add_to_cart";
        case EventType::purchase: return "purchase";
    }
    return "unknown";
}

std::optional<EventType> event_type_from(const std::string& text) {
    if (text == "click") return EventType::click;
    if (text == "watch") return EventType::watch;
    if (text == "add_to_cart") return EventType::add_to_cart;
    if (text == "purchase") return EventType::purchase;
    return std::nullopt;
}

bool is_intent_event(EventType type) {
    return type == EventType::watch || type == EventType::add_to_cart;
}

std::vector<Violation> validate_presentation(const PagePresentation& page,
                                             const Catalog& catalog,
                                             bool require_diversity) {
    std::vector<Violation> violations;
    std::set<int> seen;
    int prev_family = -1;
    for (std::size_t i = 0; i < page.slots.size(); ++i) {
        const int slot = static_cast<int>(i) + 1;
        const int module_id = page.slots[i];
        if (!seen.insert(module_id).second) {
            violations.push_back({slot, "duplicate_module",
                                  "module " + std::to_string(module_id) + " repeated"});
        }
        const ModuleCandidate* module = catalog.find_module(module_id);
        if (module == nullptr) {
            violations.push_back({slot, "unknown_module",
                                  "module " + std::to_string(module_id) + " not in catalog"});
            prev_family = -1;
            continue;
        }
        if (require_diversity && i > 0 && module->family_id == prev_family && prev_family >= 0) {
            violations.push_back({slot, "consecutive_family",
                                  "family " + std::to_string(module->family_id) +
                                      " occupies consecutive slots"});
        }
        prev_family = module->family_id;
    }
    if (!page.slot_propensities.empty() &&
        page.slot_propensities.size() != page.slots.size()) {
        violations.push_back({0, "propensity_length",
                              "slot_propensities length differs from slot count"});
    }
    for (std::size_t i = 0; i < page.slot_propensities.size(); ++i) {
        const double p = page.slot_propensities[i];
        if (!(p > 0.0) || p > 1.0) {
            violations.push_back({static_cast<int>(i) + 1, "propensity_range",
                                  "propensity " + std::to_string(p) + " outside (0,1]"});
        }
    }
    return violations;
}

}  // namespace pageopt

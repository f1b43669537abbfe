#include "pageopt/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pageopt/errors.hpp"

namespace pageopt::io {
namespace {

using nlohmann::json;

template <typename T, typename ParseFn>
std::vector<T> read_jsonl(const std::string& path, ParseFn parse) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("missing input file: " + path);
    std::vector<T> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(parse(line));
        } catch (const SchemaError&) {
            throw;
        } catch (const std::exception& e) {
            throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace

std::string event_to_json(const EngagementEvent& event) {
    json j;
    j["page_id"] = event.page_id;
    j["slot"] = event.slot;
    j["module_id"] = event.module_id;
    j["event_type"] = to_string(event.event_type);
    j["timestamp"] = event.timestamp;
    return j.dump();
}

EngagementEvent event_from_json(const std::string& line) {
    json j = json::parse(line);
    EngagementEvent event;
    event.page_id = j.at("page_id").get<std::int64_t>();
    event.slot = j.at("slot").get<int>();
    event.module_id = j.at("module_id").get<int>();
    auto type = event_type_from(j.at("event_type").get<std::string>());
    if (!type) throw SchemaError("unknown event_type " + j.at("event_type").get<std::string>());
    event.event_type = *type;
    event.timestamp = j.at("timestamp").get<double>();
    return event;
}

std::string page_to_json(const PagePresentation& page) {
    json j;
    j["page_id"] = page.page_id;
    j["context"] = {{"context_id", page.context.context_id},
                    {"bucket", page.context.context_bucket},
                    {"user_features", page.context.user_features},
                    {"hero_features", page.context.hero_item_features},
                    {"platform", page.context.platform}};
    j["slots"] = page.slots;
    j["policy_tag"] = to_string(page.policy_tag);
    j["slot_propensities"] = page.slot_propensities;
    return j.dump();
}

PagePresentation page_from_json(const std::string& line) {
    json j = json::parse(line);
    PagePresentation page;
    page.page_id = j.at("page_id").get<std::int64_t>();
    const json& ctx = j.at("context");
    page.context.context_id = ctx.at("context_id").get<std::int64_t>();
    page.context.context_bucket = ctx.at("bucket").get<int>();
    page.context.user_features = ctx.at("user_features").get<FeatureVec>();
    page.context.hero_item_features = ctx.at("hero_features").get<FeatureVec>();
    page.context.platform = ctx.at("platform").get<int>();
    page.slots = j.at("slots").get<std::vector<int>>();
    auto tag = policy_tag_from(j.at("policy_tag").get<std::string>());
    if (!tag) throw SchemaError("unknown policy_tag " + j.at("policy_tag").get<std::string>());
    page.policy_tag = *tag;
    page.slot_propensities = j.at("slot_propensities").get<std::vector<double>>();
    return page;
}

std::string catalog_to_json(const Catalog& catalog) {
    json families = json::array();
    for (const ModuleFamily& f : catalog.families()) {
        families.push_back({{"family_id", f.family_id}, {"theme_features", f.theme_features}});
    }
    json modules = json::array();
    for (const ModuleCandidate& m : catalog.modules()) {
        modules.push_back(
            {{"module_id", m.module_id}, {"family_id", m.family_id}, {"features", m.features}});
    }
    json j;
    j["families"] = families;
    j["modules"] = modules;
    return j.dump(2);
}

Catalog catalog_from_json(const std::string& text) {
    json j = json::parse(text);
    std::vector<ModuleFamily> families;
    for (const auto& f : j.at("families")) {
        families.push_back(
            {f.at("family_id").get<int>(), f.at("theme_features").get<FeatureVec>()});
    }
    std::vector<ModuleCandidate> modules;
    for (const auto& m : j.at("modules")) {
        modules.push_back({m.at("module_id").get<int>(), m.at("family_id").get<int>(),
                           m.at("features").get<FeatureVec>()});
    }
    return Catalog(std::move(families), std::move(modules));
}

void write_events(const std::string& path, const std::vector<EngagementEvent>& events) {
    std::ofstream out(path);
    if (!out) throw MissingInputError("cannot write " + path);
    for (const EngagementEvent& event : events) out << event_to_json(event) << "\n";
}

std::vector<EngagementEvent> read_events(const std::string& path) {
    return read_jsonl<EngagementEvent>(
        path, [&](const std::string& line) { return event_from_json(line); });
}

void write_pages(const std::string& path, const std::vector<PagePresentation>& pages) {
    std::ofstream out(path);
    if (!out) throw MissingInputError("cannot write " + path);
    for (const PagePresentation& page : pages) out << page_to_json(page) << "\n";
}

std::vector<PagePresentation> read_pages(const std::string& path) {
    return read_jsonl<PagePresentation>(
        path, [&](const std::string& line) { return page_from_json(line); });
}

void write_dataset(const std::string& path, const pipe::Dataset& dataset) {
    std::ofstream out(path);
    if (!out) throw MissingInputError("cannot write " + path);
    for (const pipe::PageExample& page : dataset.pages) {
        out << pipe::dataset_page_to_json(page) << "\n";
    }
}

std::vector<pipe::PageExample> read_dataset_pages(const std::string& path) {
    return read_jsonl<pipe::PageExample>(
        path, [&](const std::string& line) { return pipe::dataset_page_from_json(line); });
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("missing input file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingInputError("cannot write " + path);
    out << content;
}

bool file_exists(const std::string& path) {
    return std::filesystem::exists(path);
}

}  // namespace pageopt::io

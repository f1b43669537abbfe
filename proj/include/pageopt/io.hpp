#pragma once

#include <string>
#include <vector>

#include "pageopt/domain.hpp"
#include "pageopt/pipeline.hpp"

namespace pageopt::io {

// JSONL schemas shared by every stage. One record per line, UTF-8, field
// names fixed:
//   events.jsonl: {page_id, slot, module_id, event_type, timestamp}
//   pages.jsonl:  {page_id, context:{context_id, bucket, user_features,
//                  hero_features, platform}, slots, policy_tag,
//                  slot_propensities}
//   catalog.json: {families:[{family_id, theme_features}],
//                  modules:[{module_id, family_id, features}]}

std::string event_to_json(const EngagementEvent& event);
EngagementEvent event_from_json(const std::string& line);

std::string page_to_json(const PagePresentation& page);
PagePresentation page_from_json(const std::string& line);

std::string catalog_to_json(const Catalog& catalog);
Catalog catalog_from_json(const std::string& text);

void write_events(const std::string& path, const std::vector<EngagementEvent>& events);
std::vector<EngagementEvent> read_events(const std::string& path);

void write_pages(const std::string& path, const std::vector<PagePresentation>& pages);
std::vector<PagePresentation> read_pages(const std::string& path);

void write_dataset(const std::string& path, const pipe::Dataset& dataset);
// Pages from dataset.jsonl; stats/dims come from the norm-stats file.
std::vector<pipe::PageExample> read_dataset_pages(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

}  // namespace pageopt::io

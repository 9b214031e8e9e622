#include "escjudge/role_builder.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <cstdio>
#include <regex>
#include <set>

#include "escjudge/errors.hpp"

namespace escjudge {

std::string_view to_string(Gender g) { return g == Gender::kMan ? "man" : "woman"; }

Gender parse_gender(std::string_view s) {
  if (s == "man") return Gender::kMan;
  if (s == "woman") return Gender::kWoman;
  throw ParseError("unknown gender '" + std::string(s) + "'");
}

namespace {

std::string strip_decoration(std::string_view s) {
  std::string out = trim(s);
  auto strip = [&](const std::string& marks) {
    while (!out.empty() && marks.find(out.front()) != std::string::npos) out.erase(out.begin());
    while (!out.empty() && marks.find(out.back()) != std::string::npos) out.pop_back();
  };
  strip("*_\"` ");
  return trim(out);
}

// "Key: value" with a case-insensitive key; leading list markers are ignored.
std::optional<std::string> key_value(const std::string& line, const std::string& key) {
  std::string l = trim(line);
  while (!l.empty() && (l.front() == '-' || l.front() == '*')) l = trim(l.substr(1));
  if (l.size() <= key.size() || to_lower(l.substr(0, key.size())) != to_lower(key)) return std::nullopt;
  std::string rest = l.substr(key.size());
  while (!rest.empty() && (rest.front() == '*' || rest.front() == ' ')) rest.erase(rest.begin());
  if (rest.empty() || rest.front() != ':') return std::nullopt;
  return strip_decoration(rest.substr(1));
}

template <typename Parse>
auto complete_with_retries(GatewaySession& session, const ChatRequest& req, int retries, Parse parse)
    -> decltype(parse(std::string())) {
  for (int attempt = 0;; ++attempt) {
    ChatResponse resp = session.complete(req);
    try {
      return parse(resp.content);
    } catch (const ParseError& e) {
      if (attempt >= retries) throw;
      spdlog::debug("unparseable generator response (attempt {}): {}", attempt + 1, e.what());
    }
  }
}

ChatRequest single_turn(const RoleBuilderConfig& cfg, std::string prompt) {
  ChatRequest req;
  req.model_id = cfg.model_id;
  req.temperature = cfg.temperature;
  req.top_p = cfg.top_p;
  req.max_tokens = cfg.max_tokens;
  req.messages.push_back({ChatRole::kUser, std::move(prompt)});
  return req;
}

std::string pick_item(const GeneratorResponse& g, int index, const char* what) {
  if (index >= 1 && static_cast<std::size_t>(index) <= g.items.size()) return g.items[index - 1];
  if (g.items.empty() && g.selected && !g.selected->empty()) return *g.selected;
  throw ParseError(std::string("generator response lacks ") + what + " item " + std::to_string(index));
}

}  // namespace

GeneratorResponse parse_generator_response(std::string_view text) {
  static const std::regex numbered(R"(^\s*\**\s*(\d+)\s*[.)]\s*(.*)$)");
  GeneratorResponse out;
  for (const auto& line : split_lines(text)) {
    if (auto sel = key_value(line, "Selected")) {
      out.selected = *sel;
      continue;
    }
    std::smatch m;
    if (std::regex_match(line, m, numbered)) {
      auto n = std::stoul(m[1].str());
      auto item = strip_decoration(m[2].str());
      if (n == out.items.size() + 1 && !item.empty()) out.items.push_back(std::move(item));
    }
  }
  return out;
}

Demographics parse_demographics(std::string_view text, Gender gender) {
  Demographics d;
  d.gender = gender;
  std::optional<std::string> age, familial, occupation, name;
  for (const auto& line : split_lines(text)) {
    if (auto v = key_value(line, "Age")) age = v;
    if (auto v = key_value(line, "Familial status")) familial = v;
    if (auto v = key_value(line, "Occupation")) occupation = v;
    if (auto v = key_value(line, "Name")) name = v;
  }
  if (!age) throw ParseError("demographics response missing field 'Age'");
  if (!familial || familial->empty()) throw ParseError("demographics response missing field 'Familial status'");
  if (!occupation || occupation->empty()) throw ParseError("demographics response missing field 'Occupation'");
  std::smatch m;
  static const std::regex digits(R"((\d{1,3}))");
  if (!std::regex_search(*age, m, digits)) throw ParseError("demographics field 'Age' is not a number: " + *age);
  d.age = std::stoi(m[1].str());
  if (d.age <= 0) throw ParseError("demographics field 'Age' must be positive");
  d.familial_status = *familial;
  d.occupation = *occupation;
  if (name) d.name = *name;
  return d;
}

std::string describe_demographics(const Demographics& d) {
  std::string out;
  if (!d.name.empty()) out += "Name: " + d.name + "\n";
  out += "Gender: " + std::string(to_string(d.gender)) + "\n";
  out += "Age: " + std::to_string(d.age) + "\n";
  out += "Familial status: " + d.familial_status + "\n";
  out += "Occupation: " + d.occupation;
  return out;
}

std::string describe_persona(const Stressor& s, const Demographics& d) {
  return describe_demographics(d) + "\nOngoing challenge: " + s.sub_category + " (" + s.category + ")";
}

std::string describe_life_events(const std::vector<LifeEvent>& events) {
  std::string out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i) out += "\n";
    out += std::to_string(i + 1) + ". [" + events[i].category_label + "] " + events[i].scenario_text;
  }
  return out;
}

std::string describe_traits(const TraitSelection& t) {
  std::string out;
  for (std::size_t i = 0; i < t.picks.size(); ++i) {
    const auto& p = t.picks[i];
    if (i) out += "\n";
    out += "- " + p.sub_category + ": " + p.variant + ". " + p.description;
  }
  return out;
}

Stressor sample_stressor(const StressorCatalog& catalog, Rng& rng) {
  const auto& cat = catalog.categories.at(rng.index(catalog.categories.size()));
  return {cat.name, cat.sub_categories.at(rng.index(cat.sub_categories.size()))};
}

Demographics generate_demographics(const Stressor& stressor, GatewaySession& session, const Catalogs& catalogs,
                                   Rng& rng, const RoleBuilderConfig& cfg) {
  const Gender gender = rng.index(2) == 0 ? Gender::kMan : Gender::kWoman;
  const int nf = rng.uniform_int(1, cfg.nf_total);
  const int no = rng.uniform_int(1, cfg.no_total);
  auto prompt = render_template(catalogs.prompt("demographics"),
                                {{"challenge", stressor.sub_category},
                                 {"gender", std::string(to_string(gender))},
                                 {"nf_total", std::to_string(cfg.nf_total)},
                                 {"no_total", std::to_string(cfg.no_total)},
                                 {"nf", std::to_string(nf)},
                                 {"no", std::to_string(no)}});
  return complete_with_retries(session, single_turn(cfg, std::move(prompt)), cfg.parse_retries,
                               [&](const std::string& text) { return parse_demographics(text, gender); });
}

std::vector<LifeEvent> generate_life_events(const std::string& persona, GatewaySession& session,
                                            const Catalogs& catalogs, Rng& rng, const RoleBuilderConfig& cfg) {
  if (trim(persona).empty()) throw ConfigError("life-event generation needs a non-empty persona");
  const int n = rng.uniform_int(1, cfg.max_life_events);
  std::vector<LifeEvent> events;
  for (int i = 0; i < n; ++i) {
    LifeEvent ev;
    ev.category_index = rng.uniform_int(1, cfg.total_events);
    auto cat_prompt = render_template(catalogs.prompt("life_event_categories"),
                                      {{"persona", persona},
                                       {"total_events", std::to_string(cfg.total_events)},
                                       {"k", std::to_string(ev.category_index)}});
    ev.category_label =
        complete_with_retries(session, single_turn(cfg, std::move(cat_prompt)), cfg.parse_retries,
                              [&](const std::string& text) {
                                return pick_item(parse_generator_response(text), ev.category_index, "category");
                              });

    ev.scenario_index = rng.uniform_int(1, cfg.sub_events);
    auto scen_prompt = render_template(catalogs.prompt("life_event_scenarios"),
                                       {{"persona", persona},
                                        {"category", ev.category_label},
                                        {"sub_events", std::to_string(cfg.sub_events)},
                                        {"m", std::to_string(ev.scenario_index)}});
    ev.scenario_text =
        complete_with_retries(session, single_turn(cfg, std::move(scen_prompt)), cfg.parse_retries,
                              [&](const std::string& text) {
                                return pick_item(parse_generator_response(text), ev.scenario_index, "scenario");
                              });
    events.push_back(std::move(ev));
  }
  return events;
}

TraitSelection sample_traits(const TraitCatalog& catalog, Rng& rng, bool per_subcategory) {
  TraitSelection out;
  for (const auto& cat : catalog.categories) {
    if (per_subcategory) {
      for (const auto& sub : cat.sub_categories) {
        const auto& v = sub.variants.at(rng.index(sub.variants.size()));
        out.picks.push_back({cat.name, sub.name, v.name, v.description});
      }
    } else {
      const auto& sub = cat.sub_categories.at(rng.index(cat.sub_categories.size()));
      const auto& v = sub.variants.at(rng.index(sub.variants.size()));
      out.picks.push_back({cat.name, sub.name, v.name, v.description});
    }
  }
  return out;
}

std::vector<std::string> audit_narrative(const std::string& narrative, const std::string& inputs) {
  std::vector<std::string> notes;
  std::set<std::string> reported;
  static const std::regex number(R"(\b\d+\b)");
  for (std::sregex_iterator it(narrative.begin(), narrative.end(), number), end; it != end; ++it) {
    auto n = it->str();
    if (!std::regex_search(inputs, std::regex("\\b" + n + "\\b")) && reported.insert(n).second)
      notes.push_back("number '" + n + "' does not appear in the role inputs");
  }
  // Capitalised words that start neither a sentence nor a line are treated as names.
  static const std::regex capitalised(R"(([^\s]?)(\s+)([A-Z][a-z]+))");
  for (std::sregex_iterator it(narrative.begin(), narrative.end(), capitalised), end; it != end; ++it) {
    const std::string prev = (*it)[1].str();
    const std::string word = (*it)[3].str();
    if (prev.empty() || prev == "." || prev == "!" || prev == "?" || prev == ":" || prev == "\"") continue;
    if ((*it)[2].str().find('\n') != std::string::npos) continue;
    if (word == "You" || word == "Your" || word == "I") continue;
    if (inputs.find(word) == std::string::npos && reported.insert(word).second)
      notes.push_back("name-like word '" + word + "' does not appear in the role inputs");
  }
  return notes;
}

RoleCard compile_role(const std::string& role_id, std::uint64_t seed, const Stressor& stressor,
                      const Demographics& demographics, const std::vector<LifeEvent>& life_events,
                      const TraitSelection& traits, GatewaySession& session, const Catalogs& catalogs,
                      const RoleBuilderConfig& cfg) {
  if (life_events.empty() || traits.picks.empty()) throw ConfigError("compile_role needs every role part");
  Bindings bindings = {{"stressor_category", stressor.category},
                       {"stressor", stressor.sub_category},
                       {"demographics", describe_demographics(demographics)},
                       {"life_events", describe_life_events(life_events)},
                       {"traits", describe_traits(traits)}};
  const auto req = single_turn(cfg, render_template(catalogs.prompt("consistency"), bindings));

  std::string narrative;
  int rounds = 0;
  std::string last_rejection;
  for (; rounds < 2 && narrative.empty(); ++rounds) {
    auto content = trim(session.complete(req).content);
    if (content.empty()) {
      last_rejection = "empty compilation";
    } else if (to_lower(content.substr(0, 13)) == "inconsistent:") {
      last_rejection = trim(content.substr(13));
    } else {
      narrative = std::move(content);
    }
    if (narrative.empty()) spdlog::warn("{}: consistency agent rejected draft: {}", role_id, last_rejection);
  }
  if (narrative.empty())
    throw ConsistencyError("role " + role_id + " rejected by the consistency agent: " + last_rejection);

  RoleCard role;
  role.role_id = role_id;
  role.seed = seed;
  role.stressor = stressor;
  role.demographics = demographics;
  role.life_events = life_events;
  role.traits = traits;
  role.narrative = std::move(narrative);
  role.provenance = {{"stressor", "stressor_sampler"},
                     {"demographics", "demographic_generator:" + cfg.model_id},
                     {"life_events", "life_event_generator:" + cfg.model_id},
                     {"traits", cfg.traits_per_subcategory ? "trait_sampler:per_subcategory" : "trait_sampler"},
                     {"narrative", "consistency_agent:" + cfg.model_id},
                     {"consistency_rounds", std::to_string(rounds)}};

  std::string inputs;
  for (const auto& [k, v] : bindings) inputs += v + "\n";
  role.audit_notes = audit_narrative(role.narrative, inputs);
  for (const auto& note : role.audit_notes) spdlog::info("{}: audit: {}", role_id, note);
  return role;
}

RoleCard build_role(const std::string& role_id, std::uint64_t seed, const Catalogs& catalogs,
                    GatewaySession& session, const RoleBuilderConfig& cfg) {
  Rng rng(seed);
  auto stressor = sample_stressor(catalogs.stressors, rng);
  auto demographics = generate_demographics(stressor, session, catalogs, rng, cfg);
  auto events = generate_life_events(describe_persona(stressor, demographics), session, catalogs, rng, cfg);
  auto traits = sample_traits(catalogs.traits, rng, cfg.traits_per_subcategory);
  return compile_role(role_id, seed, stressor, demographics, events, traits, session, catalogs, cfg);
}

std::string role_id_for_index(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "role-%03zu", index);
  return buf;
}

Json RoleCard::to_json() const {
  Json events = Json::array();
  for (const auto& e : life_events)
    events.push_back({{"category_index", e.category_index},
                      {"scenario_index", e.scenario_index},
                      {"category_label", e.category_label},
                      {"scenario_text", e.scenario_text}});
  Json picks = Json::array();
  for (const auto& p : traits.picks)
    picks.push_back({{"category", p.category},
                     {"sub_category", p.sub_category},
                     {"variant", p.variant},
                     {"description", p.description}});
  return {{"schema_version", kRoleSchemaVersion},
          {"role_id", role_id},
          {"seed", seed},
          {"stressor", {{"category", stressor.category}, {"sub_category", stressor.sub_category}}},
          {"demographics",
           {{"gender", std::string(to_string(demographics.gender))},
            {"age", demographics.age},
            {"familial_status", demographics.familial_status},
            {"occupation", demographics.occupation},
            {"name", demographics.name}}},
          {"life_events", std::move(events)},
          {"traits", std::move(picks)},
          {"narrative", narrative},
          {"provenance", provenance},
          {"audit_notes", audit_notes}};
}

RoleCard RoleCard::from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kRoleSchemaVersion)
      throw ParseError("unsupported role schema version " + j.at("schema_version").dump());
    RoleCard r;
    r.role_id = j.at("role_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.stressor = {j.at("stressor").at("category").get<std::string>(),
                  j.at("stressor").at("sub_category").get<std::string>()};
    const auto& d = j.at("demographics");
    r.demographics.gender = parse_gender(d.at("gender").get<std::string>());
    r.demographics.age = d.at("age").get<int>();
    r.demographics.familial_status = d.at("familial_status").get<std::string>();
    r.demographics.occupation = d.at("occupation").get<std::string>();
    r.demographics.name = d.value("name", "");
    for (const auto& e : j.at("life_events"))
      r.life_events.push_back({e.at("category_index").get<int>(), e.at("scenario_index").get<int>(),
                               e.at("category_label").get<std::string>(), e.at("scenario_text").get<std::string>()});
    for (const auto& p : j.at("traits"))
      r.traits.picks.push_back({p.at("category").get<std::string>(), p.at("sub_category").get<std::string>(),
                                p.at("variant").get<std::string>(), p.at("description").get<std::string>()});
    r.narrative = j.at("narrative").get<std::string>();
    r.provenance = j.value("provenance", std::map<std::string, std::string>{});
    r.audit_notes = j.value("audit_notes", std::vector<std::string>{});
    return r;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed role file: ") + e.what());
  }
}

std::string serialize_role(const RoleCard& role) { return role.to_json().dump(2) + "\n"; }

RoleCard parse_role(std::string_view text) {
  try {
    return RoleCard::from_json(Json::parse(text));
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("role file is not JSON: ") + e.what());
  }
}

}  // namespace escjudge

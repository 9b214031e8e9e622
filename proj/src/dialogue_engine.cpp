#include "escjudge/dialogue_engine.hpp"

#include <algorithm>

#include "escjudge/errors.hpp"

namespace escjudge {

namespace fs = std::filesystem;

std::string_view to_string(GuidelineMode m) { return m == GuidelineMode::kWithHill ? "with_hill" : "without_hill"; }

GuidelineMode parse_guideline_mode(std::string_view s) {
  if (s == "with_hill") return GuidelineMode::kWithHill;
  if (s == "without_hill") return GuidelineMode::kWithoutHill;
  throw ConfigError("unknown guideline mode '" + std::string(s) + "'");
}

AgentConfig AgentConfig::make(std::string agent_id, std::string model_id, GuidelineMode mode) {
  AgentConfig a;
  a.agent_id = std::move(agent_id);
  a.model_id = std::move(model_id);
  a.guideline_mode = mode;
  a.system_template_id = mode == GuidelineMode::kWithHill ? "helper_with_hill" : "helper_without_hill";
  return a;
}

void AgentConfig::validate() const {
  if (agent_id.empty()) throw ConfigError("agent without id");
  if (model_id.empty()) throw ConfigError("agent '" + agent_id + "' has no model id");
  const char* expected = guideline_mode == GuidelineMode::kWithHill ? "helper_with_hill" : "helper_without_hill";
  if (system_template_id != expected)
    throw ConfigError("agent '" + agent_id + "': guideline mode " + std::string(to_string(guideline_mode)) +
                      " requires template " + expected);
}

Json AgentConfig::to_json() const {
  return {{"agent_id", agent_id},
          {"model_id", model_id},
          {"guideline_mode", std::string(to_string(guideline_mode))},
          {"system_template_id", system_template_id}};
}

AgentConfig AgentConfig::from_json(const Json& j) {
  auto a = make(j.at("agent_id").get<std::string>(), j.at("model_id").get<std::string>(),
                parse_guideline_mode(j.at("guideline_mode").get<std::string>()));
  if (j.contains("system_template_id")) a.system_template_id = j["system_template_id"].get<std::string>();
  return a;
}

std::string_view to_string(Speaker s) { return s == Speaker::kSeeker ? "seeker" : "supporter"; }

Speaker parse_speaker(std::string_view s) {
  if (s == "seeker") return Speaker::kSeeker;
  if (s == "supporter") return Speaker::kSupporter;
  throw ParseError("unknown speaker '" + std::string(s) + "'");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::kBudgetExhausted: return "budget_exhausted";
    case Termination::kEocDetected: return "eoc_detected";
    case Termination::kProviderFailure: return "provider_failure";
  }
  return "?";
}

Termination parse_termination(std::string_view s) {
  if (s == "budget_exhausted") return Termination::kBudgetExhausted;
  if (s == "eoc_detected") return Termination::kEocDetected;
  if (s == "provider_failure") return Termination::kProviderFailure;
  throw ParseError("unknown termination '" + std::string(s) + "'");
}

std::string serialize_transcript(const Transcript& t) {
  std::vector<Json> lines;
  for (const auto& turn : t.turns)
    lines.push_back({{"type", "turn"},
                     {"index", turn.index},
                     {"speaker", std::string(to_string(turn.speaker))},
                     {"text", turn.text},
                     {"created_at", turn.created_at}});
  Json meta = {{"type", "meta"},
               {"schema_version", 1},
               {"session_id", t.session_id},
               {"role_id", t.role_id},
               {"agent", t.agent.to_json()},
               {"termination", std::string(to_string(t.termination))},
               {"eoc_score_at_stop", t.eoc_score_at_stop ? Json(*t.eoc_score_at_stop) : Json(nullptr)},
               {"failure_cause", t.failure_cause}};
  lines.push_back(std::move(meta));
  return to_jsonl(lines);
}

Transcript parse_transcript(std::string_view text) {
  Transcript t;
  bool have_meta = false;
  try {
    for (const auto& line : split_lines(text)) {
      if (trim(line).empty()) continue;
      auto j = Json::parse(line);
      auto type = j.at("type").get<std::string>();
      if (type == "turn") {
        t.turns.push_back({j.at("index").get<int>(), parse_speaker(j.at("speaker").get<std::string>()),
                           j.at("text").get<std::string>(), j.value("created_at", "")});
      } else if (type == "meta") {
        t.session_id = j.at("session_id").get<std::string>();
        t.role_id = j.at("role_id").get<std::string>();
        t.agent = AgentConfig::from_json(j.at("agent"));
        t.termination = parse_termination(j.at("termination").get<std::string>());
        if (!j.at("eoc_score_at_stop").is_null()) t.eoc_score_at_stop = j["eoc_score_at_stop"].get<double>();
        t.failure_cause = j.value("failure_cause", "");
        have_meta = true;
      }
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed transcript: ") + e.what());
  }
  if (!have_meta) throw ParseError("transcript has no metadata record");
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    if (t.turns[i].index != static_cast<int>(i)) throw ParseError("transcript turn indices are not contiguous");
    if (i && t.turns[i].speaker == t.turns[i - 1].speaker) throw ParseError("transcript speakers do not alternate");
  }
  return t;
}

Transcript load_transcript(const fs::path& path) { return parse_transcript(read_file(path)); }

std::vector<Transcript> load_transcripts(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Transcript> out;
  for (const auto& f : files) out.push_back(load_transcript(f));
  return out;
}

Dialogue to_dialogue(const Transcript& t) {
  Dialogue d;
  d.id = t.session_id;
  for (const auto& turn : t.turns) d.utterances.push_back(turn.text);
  return d;
}

Transcript transcript_from_dialogue(const Dialogue& d) {
  Transcript t;
  t.session_id = d.id;
  t.role_id = d.id;
  t.agent = AgentConfig::make("synthetic", "synthetic/template", GuidelineMode::kWithoutHill);
  for (std::size_t i = 0; i < d.utterances.size(); ++i)
    t.turns.push_back({static_cast<int>(i), i % 2 == 0 ? Speaker::kSeeker : Speaker::kSupporter, d.utterances[i], ""});
  t.termination = Termination::kBudgetExhausted;
  return t;
}

std::string render_transcript_text(const Transcript& t) {
  std::string out;
  for (const auto& turn : t.turns) {
    if (!out.empty()) out += "\n";
    out += turn.speaker == Speaker::kSeeker ? "Seeker: " : "Supporter: ";
    out += turn.text;
  }
  return out;
}

Json SessionSettings::to_json() const {
  return {{"max_exchanges", max_exchanges},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens},
          {"seeker_model_id", seeker_model_id}};
}

SessionSettings SessionSettings::from_json(const Json& j) {
  SessionSettings s;
  s.max_exchanges = j.value("max_exchanges", s.max_exchanges);
  s.temperature = j.value("temperature", s.temperature);
  s.top_p = j.value("top_p", s.top_p);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.seeker_model_id = j.value("seeker_model_id", s.seeker_model_id);
  if (s.max_exchanges < 1) throw ConfigError("session.max_exchanges must be >= 1");
  return s;
}

std::string session_id_for(const std::string& role_id, const std::string& agent_id) {
  return role_id + "__" + agent_id;
}

std::string seeker_system_prompt(const RoleCard& role, const Catalogs& catalogs) {
  return render_template(catalogs.prompt("seeker_system"), {{"role_narrative", role.narrative}});
}

namespace {

ChatRequest base_request(const std::string& model, const SessionSettings& s) {
  ChatRequest r;
  r.model_id = model;
  r.temperature = s.temperature;
  r.top_p = s.top_p;
  r.max_tokens = s.max_tokens;
  return r;
}

}  // namespace

Transcript run_session(const RoleCard& role, const AgentConfig& agent, const EocModel* detector,
                       GatewaySession& session, const Catalogs& catalogs, const SessionSettings& settings) {
  agent.validate();
  Transcript t;
  t.session_id = session_id_for(role.role_id, agent.agent_id);
  t.role_id = role.role_id;
  t.agent = agent;

  const std::string seeker_prompt = seeker_system_prompt(role, catalogs);
  const std::string opening = render_template(catalogs.prompt("seeker_opening"), {});
  const std::string helper_prompt = render_template(catalogs.prompt(agent.system_template_id), {});

  auto seeker_request = [&] {
    auto r = base_request(settings.seeker_model_id, settings);
    r.messages.push_back({ChatRole::kSystem, seeker_prompt});
    r.messages.push_back({ChatRole::kUser, opening});
    for (const auto& turn : t.turns)
      r.messages.push_back({turn.speaker == Speaker::kSeeker ? ChatRole::kAssistant : ChatRole::kUser, turn.text});
    return r;
  };
  auto supporter_request = [&] {
    auto r = base_request(agent.model_id, settings);
    r.messages.push_back({ChatRole::kSystem, helper_prompt});
    for (const auto& turn : t.turns)
      r.messages.push_back({turn.speaker == Speaker::kSeeker ? ChatRole::kUser : ChatRole::kAssistant, turn.text});
    return r;
  };
  // Appends one utterance; returns true when the detector ends the session.
  auto speak = [&](Speaker who) {
    ChatResponse resp = session.complete(who == Speaker::kSeeker ? seeker_request() : supporter_request());
    t.turns.push_back({static_cast<int>(t.turns.size()), who, trim(resp.content), resp.created_at});
    if (!detector || t.turns.size() < 2) return false;
    auto c = classify(*detector, make_window(t.turns[t.turns.size() - 2].text, t.turns.back().text));
    if (!c.end_of_conversation) return false;
    t.eoc_score_at_stop = c.probability;
    return true;
  };

  try {
    for (int exchange = 0; exchange < settings.max_exchanges; ++exchange) {
      if (speak(Speaker::kSeeker) || speak(Speaker::kSupporter)) {
        t.termination = Termination::kEocDetected;
        return t;
      }
    }
    t.termination = Termination::kBudgetExhausted;
  } catch (const ProviderError& e) {
    t.termination = Termination::kProviderFailure;
    t.failure_cause = e.what();
  }
  return t;
}

SessionPair run_pair(const RoleCard& role, const AgentConfig& a, const AgentConfig& b, const EocModel* detector,
                     GatewaySession& session_a, GatewaySession& session_b, const Catalogs& catalogs,
                     const SessionSettings& settings) {
  if (a.agent_id == b.agent_id) throw ConfigError("a pair needs two different agents");
  if (&session_a == &session_b) throw ConfigError("paired sessions must not share a gateway session");
  SessionPair p;
  p.a = run_session(role, a, detector, session_a, catalogs, settings);
  p.b = run_session(role, b, detector, session_b, catalogs, settings);
  return p;
}

}  // namespace escjudge

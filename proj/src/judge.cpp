#include "escjudge/judge.hpp"

#include <array>
#include <regex>

#include "escjudge/errors.hpp"

namespace escjudge {

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kA: return "A";
    case Verdict::kB: return "B";
    case Verdict::kTie: return "tie";
  }
  return "?";
}

Verdict parse_verdict_token(std::string_view s) {
  auto l = to_lower(s);
  if (l == "a") return Verdict::kA;
  if (l == "b") return Verdict::kB;
  if (l == "tie") return Verdict::kTie;
  throw ParseError("not a verdict: '" + std::string(s) + "'");
}

Verdict swap_sides(Verdict v) {
  if (v == Verdict::kA) return Verdict::kB;
  if (v == Verdict::kB) return Verdict::kA;
  return Verdict::kTie;
}

std::string_view to_string(FinalVerdict v) {
  switch (v) {
    case FinalVerdict::kA: return "A";
    case FinalVerdict::kB: return "B";
    case FinalVerdict::kTie: return "tie";
    case FinalVerdict::kSkipped: return "skipped";
  }
  return "?";
}

FinalVerdict parse_final_verdict(std::string_view s) {
  if (s == "A") return FinalVerdict::kA;
  if (s == "B") return FinalVerdict::kB;
  if (s == "tie") return FinalVerdict::kTie;
  if (s == "skipped") return FinalVerdict::kSkipped;
  throw ParseError("not a final verdict: '" + std::string(s) + "'");
}

ParsedVerdict parse_verdict(std::string_view raw) {
  static const std::regex verdict_line(R"(^\s*verdict\s*:(.*)$)", std::regex::icase);
  auto lines = split_lines(raw);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

  ParsedVerdict out;
  std::size_t hits = 0;
  for (const auto& l : lines)
    if (std::regex_match(l, verdict_line)) ++hits;
  if (lines.empty() || hits != 1) {
    out.rationale = trim(raw);
    return out;
  }
  std::smatch m;
  if (!std::regex_match(lines.back(), m, verdict_line)) {
    out.rationale = trim(raw);
    return out;
  }
  std::string rationale;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) rationale += lines[i] + "\n";
  out.rationale = trim(rationale);
  auto token = to_lower(trim(m[1].str()));
  if (token == "a") out.verdict = Verdict::kA;
  else if (token == "b") out.verdict = Verdict::kB;
  else if (token == "tie") out.verdict = Verdict::kTie;
  return out;
}

FinalVerdict resolve_final(std::optional<Verdict> original, std::optional<Verdict> swapped_mapped) {
  if (!original || !swapped_mapped) return FinalVerdict::kSkipped;
  if (*original != *swapped_mapped) return FinalVerdict::kTie;
  switch (*original) {
    case Verdict::kA: return FinalVerdict::kA;
    case Verdict::kB: return FinalVerdict::kB;
    case Verdict::kTie: return FinalVerdict::kTie;
  }
  return FinalVerdict::kSkipped;
}

Json JudgeConfig::to_json() const {
  return {{"model_id", model_id},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens},
          {"samples_per_order", samples_per_order},
          {"system_template_id", system_template_id},
          {"prompt_template_id", prompt_template_id}};
}

JudgeConfig JudgeConfig::from_json(const Json& j) {
  JudgeConfig c;
  c.model_id = j.value("model_id", c.model_id);
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.samples_per_order = j.value("samples_per_order", c.samples_per_order);
  c.system_template_id = j.value("system_template_id", c.system_template_id);
  c.prompt_template_id = j.value("prompt_template_id", c.prompt_template_id);
  if (c.samples_per_order < 1) throw ConfigError("judge.samples_per_order must be >= 1");
  return c;
}

namespace {

Json opt_verdict(const std::optional<Verdict>& v) { return v ? Json(std::string(to_string(*v))) : Json("invalid"); }

std::optional<Verdict> read_opt_verdict(const Json& j) {
  auto s = j.get<std::string>();
  if (s == "invalid") return std::nullopt;
  return parse_verdict_token(s);
}

// Plurality over k samples of one presentation order; no strict winner -> tie.
std::optional<Verdict> plurality(const std::vector<ParsedVerdict>& samples) {
  std::array<int, 3> counts{};
  for (const auto& s : samples) {
    if (!s.verdict) return std::nullopt;
    ++counts[static_cast<int>(*s.verdict)];
  }
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (counts[i] > counts[best]) best = i;
  for (int i = 0; i < 3; ++i)
    if (i != best && counts[i] == counts[best]) return Verdict::kTie;
  return static_cast<Verdict>(best);
}

}  // namespace

Json JudgmentRecord::to_json() const {
  return {{"pair_id", pair_id},
          {"dimension", dimension_name},
          {"category", std::string(to_string(category))},
          {"verdict_original", opt_verdict(verdict_original)},
          {"verdict_swapped", opt_verdict(verdict_swapped)},
          {"final", std::string(to_string(final))},
          {"rationale_original", rationale_original},
          {"rationale_swapped", rationale_swapped},
          {"model_id", model_id},
          {"raw_responses", raw_responses},
          {"skip_cause", skip_cause}};
}

JudgmentRecord JudgmentRecord::from_json(const Json& j) {
  JudgmentRecord r;
  r.pair_id = j.at("pair_id").get<std::string>();
  r.dimension_name = j.at("dimension").get<std::string>();
  r.category = parse_category(j.at("category").get<std::string>());
  r.verdict_original = read_opt_verdict(j.at("verdict_original"));
  r.verdict_swapped = read_opt_verdict(j.at("verdict_swapped"));
  r.final = parse_final_verdict(j.at("final").get<std::string>());
  r.rationale_original = j.value("rationale_original", "");
  r.rationale_swapped = j.value("rationale_swapped", "");
  r.model_id = j.value("model_id", "");
  r.raw_responses = j.value("raw_responses", std::vector<std::string>{});
  r.skip_cause = j.value("skip_cause", "");
  return r;
}

std::string pair_id_for(const std::string& role_id, const std::string& agent_a, const std::string& agent_b) {
  return role_id + "__" + agent_a + "__vs__" + agent_b;
}

JudgmentRecord judge_dimension(const std::string& pair_id, const Transcript& t_a, const Transcript& t_b,
                               const RubricDimension& dim, const JudgeConfig& cfg, GatewaySession& session,
                               const Catalogs& catalogs) {
  if (!t_a.complete() || !t_b.complete())
    throw ConfigError("pair " + pair_id + " contains a failed session and cannot be judged");

  JudgmentRecord rec;
  rec.pair_id = pair_id;
  rec.dimension_name = dim.name;
  rec.category = dim.category;
  rec.model_id = cfg.model_id;

  const std::string system = render_template(catalogs.prompt(cfg.system_template_id), {});
  const std::string text_a = render_transcript_text(t_a);
  const std::string text_b = render_transcript_text(t_b);
  auto request = [&](const std::string& first, const std::string& second) {
    ChatRequest r;
    r.model_id = cfg.model_id;
    r.temperature = cfg.temperature;
    r.top_p = cfg.top_p;
    r.max_tokens = cfg.max_tokens;
    r.messages.push_back({ChatRole::kSystem, system});
    r.messages.push_back({ChatRole::kUser, render_template(catalogs.prompt(cfg.prompt_template_id),
                                                           {{"dimension_name", dim.name},
                                                            {"dimension_definition", dim.definition},
                                                            {"transcript_a", first},
                                                            {"transcript_b", second}})});
    return r;
  };

  std::vector<ParsedVerdict> original, swapped;
  try {
    const auto req_original = request(text_a, text_b);
    const auto req_swapped = request(text_b, text_a);
    for (int k = 0; k < cfg.samples_per_order; ++k) {
      auto raw = session.complete(req_original).content;
      rec.raw_responses.push_back(raw);
      original.push_back(parse_verdict(raw));
    }
    for (int k = 0; k < cfg.samples_per_order; ++k) {
      auto raw = session.complete(req_swapped).content;
      rec.raw_responses.push_back(raw);
      swapped.push_back(parse_verdict(raw));
    }
  } catch (const ProviderError& e) {
    rec.final = FinalVerdict::kSkipped;
    rec.skip_cause = std::string("gateway failure: ") + e.what();
    return rec;
  }

  rec.verdict_original = plurality(original);
  rec.verdict_swapped = plurality(swapped);
  rec.rationale_original = original.front().rationale;
  rec.rationale_swapped = swapped.front().rationale;
  std::optional<Verdict> mapped;
  if (rec.verdict_swapped) mapped = swap_sides(*rec.verdict_swapped);
  rec.final = resolve_final(rec.verdict_original, mapped);
  if (rec.final == FinalVerdict::kSkipped) rec.skip_cause = "judge output did not match the verdict template";
  return rec;
}

std::vector<JudgmentRecord> judge_pair(const std::string& pair_id, const Transcript& t_a, const Transcript& t_b,
                                       const Rubric& rubric, const JudgeConfig& cfg, GatewaySession& session,
                                       const Catalogs& catalogs) {
  std::vector<JudgmentRecord> out;
  for (const auto& dim : rubric.dimensions)
    out.push_back(judge_dimension(pair_id, t_a, t_b, dim, cfg, session, catalogs));
  return out;
}

std::string serialize_judgments(const std::vector<JudgmentRecord>& records) {
  std::vector<Json> lines;
  for (const auto& r : records) lines.push_back(r.to_json());
  return to_jsonl(lines);
}

std::vector<JudgmentRecord> parse_judgments(std::string_view text) {
  std::vector<JudgmentRecord> out;
  try {
    for (const auto& line : split_lines(text)) {
      if (trim(line).empty()) continue;
      out.push_back(JudgmentRecord::from_json(Json::parse(line)));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed judgment file: ") + e.what());
  }
  return out;
}

}  // namespace escjudge

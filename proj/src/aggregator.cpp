#include "escjudge/aggregator.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "escjudge/errors.hpp"

namespace escjudge {

double to_double(const Score& s) {
  return static_cast<double>(s.numerator()) / static_cast<double>(s.denominator());
}

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::optional<Score> outcome_from_final(FinalVerdict v) {
  switch (v) {
    case FinalVerdict::kA: return Score(1);
    case FinalVerdict::kB: return Score(0);
    case FinalVerdict::kTie: return Score(1, 2);
    case FinalVerdict::kSkipped: return std::nullopt;
  }
  return std::nullopt;
}

std::optional<CategoryScore> category_score(const std::string& role_id, RubricCategory category,
                                            const std::vector<std::optional<Score>>& outcomes,
                                            const AggregationConfig& cfg) {
  CategoryScore s;
  s.role_id = role_id;
  s.category = category;
  Score sum(0);
  for (const auto& o : outcomes) {
    if (!o) continue;
    sum += *o;
    ++s.n_dims_counted;
  }
  if (s.n_dims_counted == 0) return std::nullopt;
  const auto denom = cfg.denominator == Denominator::kFull ? static_cast<std::int64_t>(outcomes.size())
                                                           : static_cast<std::int64_t>(s.n_dims_counted);
  s.value = sum / denom;
  return s;
}

std::string_view to_string(Preference p) {
  switch (p) {
    case Preference::kAPreferred: return "A_preferred";
    case Preference::kBPreferred: return "B_preferred";
    case Preference::kTie: return "tie";
  }
  return "?";
}

Preference decide(const Score& mean) {
  const Score half(1, 2);
  if (mean > half) return Preference::kAPreferred;
  if (mean < half) return Preference::kBPreferred;
  return Preference::kTie;
}

PreferenceDecision cross_role_mean(RubricCategory category, const std::vector<CategoryScore>& scores) {
  if (scores.empty()) throw ConfigError("cross_role_mean over an empty role set");
  PreferenceDecision d;
  d.category = category;
  Score sum(0);
  for (const auto& s : scores) sum += s.value;
  d.roles_counted = static_cast<int>(scores.size());
  d.mean = sum / static_cast<std::int64_t>(scores.size());
  d.verdict = decide(d.mean);
  return d;
}

PairRef parse_pair_id(const std::string& pair_id) {
  const auto vs = pair_id.find("__vs__");
  const auto first = pair_id.find("__");
  if (vs == std::string::npos || first == std::string::npos || first >= vs)
    throw ParseError("malformed pair id: " + pair_id);
  PairRef p{pair_id.substr(0, first), pair_id.substr(first + 2, vs - first - 2), pair_id.substr(vs + 6)};
  if (p.role_id.empty() || p.agent_a.empty() || p.agent_b.empty()) throw ParseError("malformed pair id: " + pair_id);
  return p;
}

JudgmentRecord mirror(const JudgmentRecord& r) {
  auto flip = [](std::optional<Verdict> v) -> std::optional<Verdict> {
    if (!v) return v;
    return swap_sides(*v);
  };
  JudgmentRecord m = r;
  const auto p = parse_pair_id(r.pair_id);
  m.pair_id = pair_id_for(p.role_id, p.agent_b, p.agent_a);
  m.verdict_original = flip(r.verdict_original);
  m.verdict_swapped = flip(r.verdict_swapped);
  if (r.final == FinalVerdict::kA) m.final = FinalVerdict::kB;
  else if (r.final == FinalVerdict::kB) m.final = FinalVerdict::kA;
  return m;
}

PairingReport aggregate_pairing(const std::string& agent_a, const std::string& agent_b,
                                const std::vector<JudgmentRecord>& records, const Rubric& rubric,
                                const AggregationConfig& cfg) {
  PairingReport report;
  report.agent_a = agent_a;
  report.agent_b = agent_b;

  // role -> dimension -> final, in the (agent_a, agent_b) frame
  std::map<std::string, std::map<std::string, FinalVerdict>> finals;
  for (const auto& r : records) {
    const auto p = parse_pair_id(r.pair_id);
    if (p.agent_a == agent_a && p.agent_b == agent_b) finals[p.role_id][r.dimension_name] = r.final;
    else if (p.agent_a == agent_b && p.agent_b == agent_a) finals[p.role_id][r.dimension_name] = mirror(r).final;
  }

  for (RubricCategory c : kAllCategories) {
    std::vector<CategoryScore> scored;
    for (const auto& [role, dims] : finals) {
      std::vector<std::optional<Score>> outcomes;
      for (const auto* d : rubric.in_category(c)) {
        auto it = dims.find(d->name);
        outcomes.push_back(it == dims.end() ? std::nullopt : outcome_from_final(it->second));
      }
      if (auto s = category_score(role, c, outcomes, cfg)) scored.push_back(*s);
    }
    if (!scored.empty()) report.decisions[c] = cross_role_mean(c, scored);
    report.role_scores.insert(report.role_scores.end(), scored.begin(), scored.end());
  }
  return report;
}

std::vector<PairingReport> winrate_report(const std::vector<JudgmentRecord>& records, const Rubric& rubric,
                                          const AggregationConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> pairings;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : records) {
    const auto p = parse_pair_id(r.pair_id);
    if (seen.count({p.agent_a, p.agent_b}) || seen.count({p.agent_b, p.agent_a})) continue;
    seen.insert({p.agent_a, p.agent_b});
    pairings.emplace_back(p.agent_a, p.agent_b);
  }
  std::vector<PairingReport> out;
  for (const auto& [a, b] : pairings) out.push_back(aggregate_pairing(a, b, records, rubric, cfg));
  return out;
}

std::string winrates_csv(const std::vector<PairingReport>& reports) {
  std::ostringstream out;
  out << "agent_a,agent_b,category,mean_score,verdict,roles_counted\n";
  for (const auto& r : reports)
    for (RubricCategory c : kAllCategories) {
      out << r.agent_a << ',' << r.agent_b << ',' << to_string(c) << ',';
      auto it = r.decisions.find(c);
      if (it == r.decisions.end()) {
        out << ",none,0\n";
        continue;
      }
      out << format_score(to_double(it->second.mean)) << ',' << to_string(it->second.verdict) << ','
          << it->second.roles_counted << '\n';
    }
  return out.str();
}

std::string role_scores_csv(const std::vector<PairingReport>& reports) {
  std::ostringstream out;
  out << "agent_a,agent_b,role_id,category,score,n_dims_counted\n";
  for (const auto& r : reports)
    for (const auto& s : r.role_scores)
      out << r.agent_a << ',' << r.agent_b << ',' << s.role_id << ',' << to_string(s.category) << ','
          << format_score(to_double(s.value)) << ',' << s.n_dims_counted << '\n';
  return out.str();
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string winrates_svg(const std::vector<PairingReport>& reports) {
  constexpr int kRow = 22, kLabel = 360, kBar = 400, kTop = 40;
  const int rows = static_cast<int>(reports.size() * std::size(kAllCategories));
  const int height = kTop + rows * kRow + 20;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLabel + kBar + 80 << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<text x=\"10\" y=\"20\" font-size=\"14\">Category win rate of agent A against agent B</text>\n";
  const int mid = kLabel + kBar / 2;
  out << "<line x1=\"" << mid << "\" y1=\"" << kTop - 6 << "\" x2=\"" << mid << "\" y2=\"" << height - 14
      << "\" stroke=\"#888\" stroke-dasharray=\"4,3\"/>\n";
  int row = 0;
  for (const auto& r : reports) {
    for (RubricCategory c : kAllCategories) {
      const int y = kTop + row * kRow;
      out << "<text x=\"10\" y=\"" << y + 14 << "\">" << xml_escape(r.agent_a) << " vs " << xml_escape(r.agent_b)
          << " / " << to_string(c) << "</text>\n";
      auto it = r.decisions.find(c);
      if (it != r.decisions.end()) {
        const double v = to_double(it->second.mean);
        const char* fill = it->second.verdict == Preference::kAPreferred   ? "#2b7bb9"
                           : it->second.verdict == Preference::kBPreferred ? "#d95f02"
                                                                           : "#999999";
        out << "<rect x=\"" << kLabel << "\" y=\"" << y + 3 << "\" width=\"" << static_cast<int>(v * kBar)
            << "\" height=\"" << kRow - 6 << "\" fill=\"" << fill << "\"/>\n";
        out << "<text x=\"" << kLabel + kBar + 6 << "\" y=\"" << y + 14 << "\">" << format_score(v) << "</text>\n";
      }
      ++row;
    }
  }
  out << "</svg>\n";
  return out.str();
}

Json AnnotationRecord::to_json() const {
  return {{"task_id", task_id},           {"pair_id", pair_id},
          {"dimension", dimension_name},  {"annotator_id", annotator_id},
          {"verdict", std::string(to_string(verdict))}, {"submitted_at", submitted_at}};
}

AnnotationRecord AnnotationRecord::from_json(const Json& j) {
  AnnotationRecord r;
  r.task_id = j.value("task_id", "");
  r.pair_id = j.at("pair_id").get<std::string>();
  r.dimension_name = j.at("dimension").get<std::string>();
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.verdict = parse_verdict_token(j.at("verdict").get<std::string>());
  r.submitted_at = j.value("submitted_at", "");
  return r;
}

std::string serialize_annotations(const std::vector<AnnotationRecord>& records) {
  std::vector<Json> lines;
  for (const auto& r : records) lines.push_back(r.to_json());
  return to_jsonl(lines);
}

std::vector<AnnotationRecord> parse_annotations(std::string_view text) {
  std::vector<AnnotationRecord> out;
  try {
    for (const auto& line : split_lines(text)) {
      if (trim(line).empty()) continue;
      auto j = Json::parse(line);
      if (j.contains("warning")) continue;
      out.push_back(AnnotationRecord::from_json(j));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed annotation file: ") + e.what());
  }
  return out;
}

std::string_view to_string(TiePolicy p) {
  return p == TiePolicy::kEitherSide ? "either_side" : "human_ties_only";
}

TiePolicy parse_tie_policy(std::string_view s) {
  if (s == "either_side") return TiePolicy::kEitherSide;
  if (s == "human_ties_only") return TiePolicy::kHumanTiesOnly;
  throw ConfigError("unknown tie policy: " + std::string(s));
}

std::optional<double> MatchCell::rate() const {
  if (count == 0) return std::nullopt;
  return static_cast<double>(matches) / static_cast<double>(count);
}

namespace {

enum class Side { kA, kB, kTie };

// Returns whether the item is retained; `match` is set when it is.
bool compare(Side judge, Side human, TiePolicy policy, bool& match) {
  if (human == Side::kTie) return false;
  if (judge == Side::kTie && policy == TiePolicy::kEitherSide) return false;
  match = judge == human;
  return true;
}

Side side_of(Verdict v) { return v == Verdict::kA ? Side::kA : v == Verdict::kB ? Side::kB : Side::kTie; }

Side side_of(Preference p) {
  return p == Preference::kAPreferred ? Side::kA : p == Preference::kBPreferred ? Side::kB : Side::kTie;
}

std::optional<Score> outcome_of(Verdict v) {
  return outcome_from_final(v == Verdict::kA ? FinalVerdict::kA : v == Verdict::kB ? FinalVerdict::kB
                                                                                   : FinalVerdict::kTie);
}

}  // namespace

MatchRateTable match_rates(const std::vector<JudgmentRecord>& judge, const std::vector<AnnotationRecord>& human,
                           const Rubric& rubric, TiePolicy policy) {
  using Key = std::pair<std::string, std::string>;
  std::map<Key, FinalVerdict> judged;
  for (const auto& r : judge) judged[{r.pair_id, r.dimension_name}] = r.final;

  std::map<Key, Verdict> labelled;
  for (const auto& h : human) {
    Key k{h.pair_id, h.dimension_name};
    if (labelled.count(k))
      throw ConfigError("more than one human verdict for " + h.pair_id + " / " + h.dimension_name);
    labelled[k] = h.verdict;
  }

  MatchRateTable t;
  for (const auto& d : rubric.dimensions) t.fine[d.name];
  for (RubricCategory c : kAllCategories) {
    t.coarse[c];
    t.aggregated[c];
  }

  // pair -> dimension -> (judge final, human verdict) for joined items
  std::map<std::string, std::map<std::string, std::pair<FinalVerdict, Verdict>>> joined;
  for (const auto& [k, hv] : labelled) {
    auto it = judged.find(k);
    if (it == judged.end()) continue;
    ++t.joined;
    joined[k.first][k.second] = {it->second, hv};
    if (it->second == FinalVerdict::kSkipped) continue;
    const auto cat = rubric.find(k.second).category;
    const Side js = it->second == FinalVerdict::kA ? Side::kA : it->second == FinalVerdict::kB ? Side::kB : Side::kTie;
    bool match = false;
    if (!compare(js, side_of(hv), policy, match)) continue;
    for (MatchCell* cell : {&t.fine[k.second], &t.coarse[cat]}) {
      ++cell->count;
      if (match) ++cell->matches;
    }
  }
  if (t.joined == 0) throw ConfigError("judge and human records share no (pair, dimension) item");

  for (const auto& [pair, dims] : joined) {
    for (RubricCategory c : kAllCategories) {
      std::vector<std::optional<Score>> jo, ho;
      for (const auto* d : rubric.in_category(c)) {
        auto it = dims.find(d->name);
        if (it == dims.end()) continue;
        jo.push_back(outcome_from_final(it->second.first));
        ho.push_back(outcome_of(it->second.second));
      }
      auto js = category_score(pair, c, jo);
      auto hs = category_score(pair, c, ho);
      if (!js || !hs) continue;
      bool match = false;
      if (!compare(side_of(decide(js->value)), side_of(decide(hs->value)), policy, match)) continue;
      ++t.aggregated[c].count;
      if (match) ++t.aggregated[c].matches;
    }
  }
  return t;
}

std::map<std::string, MatchRateTable> match_rate_report(const std::vector<JudgmentRecord>& judge,
                                                        const std::vector<AnnotationRecord>& human,
                                                        const Rubric& rubric, TiePolicy policy) {
  std::map<std::string, std::vector<AnnotationRecord>> by_annotator;
  for (const auto& h : human) by_annotator[h.annotator_id].push_back(h);
  if (by_annotator.empty()) throw ConfigError("no human annotations to compare against");

  std::map<std::string, MatchRateTable> out;
  for (const auto& [annotator, records] : by_annotator) out[annotator] = match_rates(judge, records, rubric, policy);

  std::map<std::pair<std::string, std::string>, std::vector<const AnnotationRecord*>> items;
  for (const auto& h : human) items[{h.pair_id, h.dimension_name}].push_back(&h);
  std::vector<AnnotationRecord> consensus;
  for (const auto& [key, recs] : items) {
    if (recs.size() != by_annotator.size()) continue;
    bool agree = true;
    for (const auto* r : recs) agree = agree && r->verdict == recs.front()->verdict;
    if (!agree) continue;
    AnnotationRecord c = *recs.front();
    c.annotator_id = kConsensusLabeler;
    c.task_id.clear();
    consensus.push_back(c);
  }
  if (!consensus.empty()) {
    try {
      out[kConsensusLabeler] = match_rates(judge, consensus, rubric, policy);
    } catch (const ConfigError&) {
      // consensus items that never joined the judge set; omit the row
    }
  }
  return out;
}

namespace {

std::string rate_field(const MatchCell& c) {
  auto r = c.rate();
  return (r ? format_score(*r) : std::string()) + "," + std::to_string(c.count);
}

}  // namespace

std::string match_rates_fine_csv(const std::map<std::string, MatchRateTable>& report, const Rubric& rubric) {
  std::ostringstream out;
  out << "labeler,dimension,category,match_rate,count\n";
  for (const auto& [labeler, t] : report)
    for (const auto& d : rubric.dimensions)
      out << labeler << ',' << d.name << ',' << to_string(d.category) << ',' << rate_field(t.fine.at(d.name)) << '\n';
  return out.str();
}

std::string match_rates_coarse_csv(const std::map<std::string, MatchRateTable>& report) {
  std::ostringstream out;
  out << "labeler,category,match_rate,count\n";
  for (const auto& [labeler, t] : report)
    for (RubricCategory c : kAllCategories) out << labeler << ',' << to_string(c) << ',' << rate_field(t.coarse.at(c)) << '\n';
  return out.str();
}

std::string match_rates_aggregated_csv(const std::map<std::string, MatchRateTable>& report) {
  std::ostringstream out;
  out << "labeler,category,match_rate,count\n";
  for (const auto& [labeler, t] : report)
    for (RubricCategory c : kAllCategories)
      out << labeler << ',' << to_string(c) << ',' << rate_field(t.aggregated.at(c)) << '\n';
  return out.str();
}

}  // namespace escjudge

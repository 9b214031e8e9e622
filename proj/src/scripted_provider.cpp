#include "escjudge/scripted_provider.hpp"

#include <array>
#include <cstdio>
#include <regex>
#include <sstream>

namespace escjudge {

namespace {

std::uint64_t hash_of(std::string_view s) { return std::stoull(sha256_hex(s).substr(0, 15), nullptr, 16); }

template <typename Arr>
std::string pick(const Arr& options, std::uint64_t h) {
  return options[h % options.size()];
}

int capture_int(const std::string& text, const std::string& pattern, int fallback) {
  std::smatch m;
  if (std::regex_search(text, m, std::regex(pattern))) return std::stoi(m[1].str());
  return fallback;
}

std::string capture_line(const std::string& text, const std::string& prefix) {
  for (const auto& line : split_lines(text))
    if (line.rfind(prefix, 0) == 0) return trim(line.substr(prefix.size()));
  return {};
}

const std::string* last_of(const ChatRequest& req, ChatRole role) {
  for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it)
    if (it->role == role) return &it->content;
  return nullptr;
}

std::string numbered_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i] + "\n";
  return out;
}

std::string demographics(const std::string& prompt, std::uint64_t h) {
  static constexpr std::array kStatuses = {"single, living alone", "married with two children",
                                           "in a long-term relationship", "single parent of one child",
                                           "living with parents", "widowed"};
  static constexpr std::array kBrokenUp = {"recently divorced", "separated from a long-term partner"};
  static constexpr std::array kJobs = {"nurse", "warehouse supervisor", "high school teacher", "software tester",
                                       "bus driver", "accountant", "graduate student", "retail assistant",
                                       "chef", "electrician", "social worker", "freelance designer"};
  static constexpr std::array kFemale = {"Maya", "Elena", "Grace", "Priya", "Hannah", "Lucia"};
  static constexpr std::array kMale = {"Daniel", "Omar", "Lucas", "Samuel", "Kenji", "Mateo"};
  static constexpr std::array kNeutral = {"Alex", "Jordan", "Riley", "Sam", "Robin", "Casey"};

  const std::string challenge = to_lower(capture_line(prompt, "Their ongoing challenge is:"));
  const std::string gender = to_lower(capture_line(prompt, "Their gender is:"));
  const int nf_total = capture_int(prompt, R"(list of (\d+) different familial)", 5);
  const int no_total = capture_int(prompt, R"(list of (\d+) different occupations)", 10);
  std::vector<int> picks;
  static const std::regex take(R"(take item number (\d+))");
  for (std::sregex_iterator it(prompt.begin(), prompt.end(), take), end; it != end; ++it)
    picks.push_back(std::stoi((*it)[1].str()));
  const int nf = picks.size() > 0 ? picks[0] : 1;
  const int no = picks.size() > 1 ? picks[1] : 1;

  const bool broken_up = challenge.find("divorce") != std::string::npos ||
                         challenge.find("breakup") != std::string::npos ||
                         challenge.find("separation") != std::string::npos;
  std::vector<std::string> statuses, jobs;
  for (int i = 0; i < nf_total; ++i)
    statuses.push_back(broken_up ? kBrokenUp[(h + i) % kBrokenUp.size()] + std::string(i ? " (variant " + std::to_string(i + 1) + ")" : "")
                                 : kStatuses[(h + i) % kStatuses.size()]);
  for (int i = 0; i < no_total; ++i) jobs.push_back(kJobs[(h / 7 + i) % kJobs.size()]);
  const std::string status = statuses[static_cast<std::size_t>(std::clamp(nf, 1, nf_total) - 1)];
  const std::string job = jobs[static_cast<std::size_t>(std::clamp(no, 1, no_total) - 1)];
  std::string name = gender == "female" ? pick(kFemale, h / 13) : gender == "male" ? pick(kMale, h / 13)
                                                                                     : pick(kNeutral, h / 13);
  const int age = 22 + static_cast<int>((h / 101) % 40);

  std::ostringstream out;
  out << "1. Familial statuses:\n" << numbered_list(statuses) << "Chosen: " << status << "\n\n";
  out << "2. Occupations:\n" << numbered_list(jobs) << "Chosen: " << job << "\n\n";
  out << "Name: " << name << "\nAge: " << age << "\nFamilial status: " << status << "\nOccupation: " << job << "\n";
  return out.str();
}

std::string life_event_categories(const std::string& prompt, std::uint64_t h) {
  static constexpr std::array kPool = {
      "Childhood experiences", "Family dynamics", "Romantic relationships", "Career milestones",
      "Career setbacks", "Loss and bereavement", "Health events", "Education", "Friendship",
      "Relocation", "Financial hardship", "Parenthood", "Personal achievements", "Caregiving",
      "Conflict with authority", "Community involvement", "Travel", "Spiritual experiences",
      "Accidents", "Legal troubles", "Hobbies and passions", "Sibling relationships",
      "Workplace conflict", "Mentorship"};
  const int n = capture_int(prompt, R"(numbered list of (\d+) distinct categories)", 20);
  const int k = capture_int(prompt, R"(category number (\d+) from)", 1);
  std::vector<std::string> items;
  for (int i = 0; i < n; ++i) {
    std::string item = kPool[(h + i) % kPool.size()];
    if (i >= static_cast<int>(kPool.size())) item += " (later years)";
    items.push_back(item);
  }
  return numbered_list(items) + "Selected: " + items[static_cast<std::size_t>(std::clamp(k, 1, n) - 1)] + "\n";
}

std::string life_event_scenarios(const std::string& prompt, std::uint64_t h) {
  static constexpr std::array kWhen = {"as a child", "in your teenage years", "a few years ago", "last year",
                                       "in your early twenties"};
  static constexpr std::array kWhat = {
      "you went through a turning point related to {c} that you still think about",
      "someone close to you let you down in a moment connected to {c}",
      "you felt proud of yourself after a challenge involving {c}",
      "you had to make a hard choice about {c} without much support",
      "a small moment involving {c} changed how you see yourself"};
  const int n = capture_int(prompt, R"(numbered list of (\d+) distinct, concrete)", 25);
  const int m = capture_int(prompt, R"(scenario number (\d+) from)", 1);
  std::smatch cm;
  std::string category = "this part of life";
  if (std::regex_search(prompt, cm, std::regex(R"(key life events \"([^\"]+)\")"))) category = to_lower(cm[1].str());
  std::vector<std::string> items;
  for (int i = 0; i < n; ++i) {
    std::string what = kWhat[(h + i) % kWhat.size()];
    what.replace(what.find("{c}"), 3, category);
    std::string when = kWhen[(h / 5 + i) % kWhen.size()];
    when[0] = static_cast<char>(std::toupper(when[0]));
    items.push_back(when + ", " + what + " (" + std::to_string(i + 1) + ").");
  }
  return numbered_list(items) + "Selected: " + items[static_cast<std::size_t>(std::clamp(m, 1, n) - 1)] + "\n";
}

std::string section(const std::string& prompt, const std::string& header) {
  auto pos = prompt.find(header + "\n");
  if (pos == std::string::npos) return {};
  pos += header.size() + 1;
  auto end = prompt.find("\n\n", pos);
  return trim(prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
}

std::string consistency(const std::string& prompt) {
  std::smatch m;
  std::string challenge = "a difficult situation";
  if (std::regex_search(prompt, m, std::regex(R"(Ongoing challenge: ([^\n]+) \(category:)"))) challenge = m[1].str();
  std::ostringstream out;
  out << "You are a person facing this ongoing challenge: " << challenge << ".\n";
  out << "Your background:\n" << section(prompt, "Demographics:") << "\n";
  out << "Events that shaped you:\n" << section(prompt, "Key life events:") << "\n";
  out << "How you tend to behave:\n" << section(prompt, "Behavioral traits:") << "\n";
  return out.str();
}

std::string seeker(const ChatRequest& req, std::uint64_t role_hash) {
  static constexpr std::array kOpen = {
      "Hi. I've been having a really hard time lately and I don't know who else to talk to.",
      "Hello. Things have been piling up and I feel overwhelmed most days.",
      "Hey. I'm not sure how to start, but I've been feeling stuck and anxious."};
  static constexpr std::array kMiddle = {
      "It's mostly at night, when everything is quiet and I start replaying it all.",
      "I guess I feel like I should be able to handle it on my own.",
      "My family doesn't really get it, so I keep it to myself.",
      "Sometimes I feel angry, and then I feel guilty for being angry.",
      "I tried to distract myself with work but it keeps coming back.",
      "I think what scares me most is that it won't get better.",
      "When you put it like that, maybe I have been too hard on myself.",
      "I hadn't thought about it that way before."};
  std::size_t own = 0;
  for (const auto& msg : req.messages)
    if (msg.role == ChatRole::kAssistant) ++own;
  const std::size_t closing_at = 4 + role_hash % 5;
  if (own == 0) return pick(kOpen, role_hash);
  if (own + 1 >= closing_at) return "Thank you so much for listening, this really helped. Take care, and talk soon.";
  return kMiddle[(role_hash + own) % kMiddle.size()];
}

std::string supporter(const ChatRequest& req, bool hill, std::uint64_t h) {
  static constexpr std::array kReflect = {
      "It sounds like this has been weighing on you for a while. What feels hardest about it right now?",
      "I'm hearing a lot of pressure in what you describe. How does that feel in your body when it comes up?",
      "That makes sense given everything you've been carrying. Can you tell me more about what happens then?",
      "You mentioned keeping it to yourself. What do you imagine would happen if you shared it?",
      "I wonder if part of you expects to cope alone. Where do you think that expectation comes from?",
      "It seems like you're starting to see this differently. What would a small first step look like for you?"};
  static constexpr std::array kAdvice = {
      "You should try to get more sleep and exercise. It usually helps.",
      "Try making a to-do list and tackling one thing at a time.",
      "It would help to talk to a friend or a professional about this.",
      "Don't be so hard on yourself. Everyone goes through tough times.",
      "Maybe take a break this weekend and do something fun.",
      "Try some breathing exercises when it gets bad."};
  const std::string* last = last_of(req, ChatRole::kUser);
  if (last && contains_ci(*last, "take care")) return "You're very welcome. Take care of yourself, and talk soon.";
  std::size_t own = 0;
  for (const auto& msg : req.messages)
    if (msg.role == ChatRole::kAssistant) ++own;
  return hill ? kReflect[(h + own) % kReflect.size()] : kAdvice[(h + own) % kAdvice.size()];
}

// Counts supporter questions and reflections; the more exploratory transcript wins.
int exploratory_score(const std::string& transcript) {
  int score = 0;
  for (const auto& line : split_lines(transcript)) {
    if (line.rfind("Supporter:", 0) != 0) continue;
    for (char c : line)
      if (c == '?') ++score;
    if (contains_ci(line, "sounds like") || contains_ci(line, "i'm hearing") || contains_ci(line, "makes sense"))
      ++score;
  }
  return score;
}

std::string judge(const std::string& prompt) {
  auto a_pos = prompt.find("Conversation A:\n");
  auto b_pos = prompt.find("Conversation B:\n");
  if (a_pos == std::string::npos || b_pos == std::string::npos) return "I cannot compare these.\nVerdict: tie";
  const std::string a = prompt.substr(a_pos, b_pos - a_pos);
  const std::string b = prompt.substr(b_pos);
  const int sa = exploratory_score(a), sb = exploratory_score(b);
  std::ostringstream out;
  out << "Conversation A: the supporter asks open questions or reflects feelings " << sa << " times.\n";
  out << "Conversation B: the supporter asks open questions or reflects feelings " << sb << " times.\n";
  if (sa == sb) {
    out << "Both supporters engage to a similar degree on this dimension.\nVerdict: tie";
  } else {
    out << "Conversation " << (sa > sb ? "A" : "B")
        << " shows more sustained engagement with the seeker's experience.\nVerdict: " << (sa > sb ? "A" : "B");
  }
  return out.str();
}

int word_count(std::string_view s) {
  int n = 0;
  bool in_word = false;
  for (char c : s) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

ChatResponse ScriptedProvider::send(const ChatRequest& req, const std::string& model) {
  const std::string canonical = canonical_request(req);
  const std::uint64_t h = hash_of(model + "\n" + canonical);
  const std::string* system = last_of(req, ChatRole::kSystem);
  const std::string* user = last_of(req, ChatRole::kUser);
  const std::string sys = system ? *system : "";
  const std::string usr = user ? *user : "";

  std::string content;
  if (usr.find("Familial status: <the chosen") != std::string::npos) content = demographics(usr, h);
  else if (usr.find("distinct categories of key life events") != std::string::npos) content = life_event_categories(usr, h);
  else if (usr.find("distinct, concrete scenarios") != std::string::npos) content = life_event_scenarios(usr, h);
  else if (usr.find("final reviewer of a simulated help-seeker role") != std::string::npos) content = consistency(usr);
  else if (sys.find("role-playing a person who is reaching out") != std::string::npos) content = seeker(req, hash_of(sys));
  else if (sys.find("evaluates emotional support conversations") != std::string::npos) content = judge(usr);
  else if (sys.find("emotional support assistant") != std::string::npos)
    content = supporter(req, sys.find("Clara Hill") != std::string::npos, hash_of(model + sys + (req.messages.size() > 1 ? req.messages[1].content : "")));
  else content = "Okay.";

  ChatResponse resp;
  resp.content = content;
  resp.usage.prompt_tokens = word_count(canonical);
  resp.usage.completion_tokens = word_count(content);
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "2025-01-01T00:%02zu:%02zuZ", (req.messages.size() / 60) % 60,
                req.messages.size() % 60);
  resp.created_at = stamp;
  return resp;
}

}  // namespace escjudge

#include "escjudge/synthetic_dialogues.hpp"

#include <array>
#include <cstdio>
#include <string>

namespace escjudge {

namespace {

constexpr std::array kEmotions = {"anxious", "overwhelmed", "lonely", "exhausted", "angry",
                                  "hopeless", "ashamed", "confused", "scared", "numb"};
constexpr std::array kTopics = {"my job", "my marriage", "my mother", "money", "my health",
                                "school", "my brother", "the move", "my friends", "the diagnosis"};
constexpr std::array kSeekerLines = {
    "I've been feeling {e} ever since things changed with {t}.",
    "Honestly I don't know where to start, {t} has been weighing on me.",
    "Most nights I lie awake thinking about {t} and I feel {e}.",
    "I keep telling myself it's fine but I feel {e} all the time.",
    "My family doesn't really understand what is happening with {t}.",
    "It's hard to explain, I just feel {e} when I think about {t}.",
    "I tried talking to someone about {t} but it didn't help much.",
    "Sometimes I wonder whether it is my fault that {t} went wrong.",
    "I guess I'm just tired of feeling {e}.",
    "Yesterday was a bit better, but today I feel {e} again.",
    "I don't take good care of myself when {t} gets like this.",
    "I can't talk to anyone at home about {t}.",
};
constexpr std::array kSupporterLines = {
    "It sounds like {t} has been really heavy for you. What feels hardest right now?",
    "That must be difficult. Can you tell me more about what happened with {t}?",
    "Feeling {e} makes a lot of sense given what you're going through.",
    "I'm hearing that you feel {e}. When did you first notice that?",
    "Thank you for sharing that with me. How have you been coping?",
    "What would it look like if things with {t} improved a little?",
    "You mentioned feeling {e}. Where do you notice it most?",
    "It takes courage to talk about {t}. What do you need most at the moment?",
    "Let's slow down for a moment. What goes through your mind when you feel {e}?",
    "Have you been able to rest at all with everything around {t}?",
    "Would it help to think through some small steps together?",
    "Who in your life could you lean on while dealing with {t}?",
};
constexpr std::array kSeekerClosings = {
    "Thank you so much for listening. Take care, and talk soon.",
    "This really helped, thanks. Good bye!",
    "I think I have what I need for now. Bye for now.",
    "Thanks, that's all for today.",
    "I feel lighter already. See you later!",
    "Okay, I'll try that. Talk to you later.",
    "It was nice talking to you. Good night.",
    "Thank you. Until next time.",
    "That's it, thanks. Have a great day.",
    "Alright, I'm going to rest now. Bye.",
    "Thanks again, see you soon.",
    "I look forward to our next conversation. Farewell.",
};
constexpr std::array kSupporterClosings = {
    "You're very welcome. Take care of yourself, and reach out anytime. Bye for now.",
    "I'm glad this helped. Take care!",
    "It was good to talk with you. Good bye, and be gentle with yourself.",
    "Anytime. See you later, and look after yourself.",
    "Take care, and talk soon.",
    "Have a great day, and remember you can come back whenever you need.",
    "Good night, rest well.",
    "Catch you later. I'm here whenever you want to talk.",
    "Until next time, take care.",
    "See ya, and well done for reaching out today.",
};

template <std::size_t N>
std::string fill(const std::array<const char*, N>& lines, Rng& rng) {
  std::string s = lines[rng.index(N)];
  const std::string e = kEmotions[rng.index(kEmotions.size())];
  const std::string t = kTopics[rng.index(kTopics.size())];
  for (auto pos = s.find("{e}"); pos != std::string::npos; pos = s.find("{e}")) s.replace(pos, 3, e);
  for (auto pos = s.find("{t}"); pos != std::string::npos; pos = s.find("{t}")) s.replace(pos, 3, t);
  return s;
}

}  // namespace

std::vector<Dialogue> generate_synthetic_dialogues(std::size_t count, std::uint64_t seed,
                                                   const SyntheticCorpusConfig& cfg) {
  Rng rng(seed);
  std::vector<Dialogue> out;
  out.reserve(count);
  for (std::size_t d = 0; d < count; ++d) {
    Dialogue dlg;
    char id[32];
    std::snprintf(id, sizeof id, "synthetic-%05zu", d);
    dlg.id = id;
    const int length = rng.uniform_int(cfg.min_utterances, cfg.max_utterances);
    const bool farewell = rng.uniform01() < cfg.farewell_share;
    // A farewell dialogue spends its last two utterances on the goodbye.
    const int body = farewell ? std::max(length - 2, 1) : length;
    for (int i = 0; i < body; ++i)
      dlg.utterances.push_back(i % 2 == 0 ? fill(kSeekerLines, rng) : fill(kSupporterLines, rng));
    if (farewell) {
      // Keep seeker/supporter alternation: whoever is next says goodbye first.
      bool seeker_next = body % 2 == 0;
      std::string first = seeker_next ? kSeekerClosings[rng.index(kSeekerClosings.size())]
                                      : kSupporterClosings[rng.index(kSupporterClosings.size())];
      std::string second = seeker_next ? kSupporterClosings[rng.index(kSupporterClosings.size())]
                                       : kSeekerClosings[rng.index(kSeekerClosings.size())];
      dlg.utterances.push_back(std::move(first));
      dlg.utterances.push_back(std::move(second));
    }
    out.push_back(std::move(dlg));
  }
  return out;
}

}  // namespace escjudge

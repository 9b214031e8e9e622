#pragma once

#include <cstdint>
#include <vector>

#include "escjudge/eoc_detector.hpp"

namespace escjudge {

struct SyntheticCorpusConfig {
  int min_utterances = 4;
  int max_utterances = 18;
  // Share of dialogues that close with a farewell exchange.
  double farewell_share = 0.6;
};

// Template-generated support dialogues (seeker opens, speakers alternate).
// Farewell dialogues close with phrases from the farewell list; the others stop
// mid-conversation. Deterministic in `seed`.
std::vector<Dialogue> generate_synthetic_dialogues(std::size_t count, std::uint64_t seed,
                                                   const SyntheticCorpusConfig& cfg = {});

}  // namespace escjudge

#pragma once

#include <string>

#include "escjudge/llm_gateway.hpp"

namespace escjudge {

// Offline stand-in for a chat model, addressed as "scripted/<name>". It recognises
// the shipped prompt templates and answers each with plausible, well-formed text
// that is a pure function of the request, so whole pipelines run without network
// access and record byte-stable cassettes.
class ScriptedProvider : public LlmProvider {
 public:
  ChatResponse send(const ChatRequest& req, const std::string& model) override;
};

}  // namespace escjudge

#pragma once

#include <memory>
#include <optional>
#include <string>

#include "icl/prompt.hpp"

namespace icl {

inline constexpr const char* kLlmEndpointEnv = "ICL_LLM_ENDPOINT";

/// Client for the completion endpoint:
///   POST <base>/v1/complete  {"prompt": str, "max_tokens": int, "stop": str|null}
///   200 -> {"text": str}; anything else is a ClientError.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(std::string base_url, int timeout_seconds = 60);

  std::string complete(const std::string& prompt, std::size_t max_tokens,
                       const std::optional<std::string>& stop) const override;

  const std::string& base_url() const noexcept { return base_url_; }

 private:
  std::string base_url_;
  std::string host_;        // scheme://host[:port]
  std::string path_prefix_;  // optional path below the host
  int timeout_seconds_;
};

/// Builds an HttpLlmClient from ICL_LLM_ENDPOINT; throws ArgumentError when unset.
std::shared_ptr<LlmClient> http_client_from_env();

}  // namespace icl

#include "icl/http_client.hpp"

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "icl/error.hpp"

namespace icl {

HttpLlmClient::HttpLlmClient(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  const auto scheme_end = base_url_.find("://");
  if (scheme_end == std::string::npos) throw ArgumentError("LLM endpoint must include a scheme: " + base_url_);
  const auto path_at = base_url_.find('/', scheme_end + 3);
  host_ = base_url_.substr(0, path_at);
  path_prefix_ = path_at == std::string::npos ? "" : base_url_.substr(path_at);
}

std::string HttpLlmClient::complete(const std::string& prompt, std::size_t max_tokens,
                                    const std::optional<std::string>& stop) const {
  nlohmann::json body = {{"prompt", prompt}, {"max_tokens", max_tokens}, {"stop", nullptr}};
  if (stop) body["stop"] = *stop;

  // httplib::Client is not thread-safe; one per call keeps complete() reentrant.
  httplib::Client cli(host_);
  cli.set_connection_timeout(timeout_seconds_, 0);
  cli.set_read_timeout(timeout_seconds_, 0);
  auto res = cli.Post(path_prefix_ + "/v1/complete", body.dump(), "application/json");
  if (!res) throw ClientError("LLM request to " + base_url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ClientError("LLM endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    auto reply = nlohmann::json::parse(res->body);
    return reply.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("LLM endpoint returned a malformed body: ") + e.what());
  }
}

std::shared_ptr<LlmClient> http_client_from_env() {
  const char* url = std::getenv(kLlmEndpointEnv);
  if (!url || !*url) throw ArgumentError(std::string(kLlmEndpointEnv) + " is not set");
  return std::make_shared<HttpLlmClient>(url);
}

}  // namespace icl

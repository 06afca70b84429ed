// SPDX-License-Identifier: Apache-2.0
//
// HTTP completion provider. POSTs {system, user, attachments, model} as
// JSON to a configured endpoint and expects {"text": "..."} back. Kept in
// its own header so only binaries that talk to a live endpoint pay for the
// httplib include. Transport retry policy lives in the caller (run_event);
// submit() reports any failure as a single ProviderError.

#pragma once

#include <cstdlib>
#include <string>

#include "rarecov/agent.hpp"
#include "rarecov/jsonio.hpp"

#include "httplib.h"

namespace rarecov::agent {

struct HttpProviderConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/complete";
  std::string model = "default";
  std::string token;  // empty: read RARECOV_PROVIDER_TOKEN from the environment
  double timeout_s = 60.0;
};

class HttpProvider : public LLMProvider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.token.empty()) {
      const char* env = std::getenv("RARECOV_PROVIDER_TOKEN");
      if (env) cfg_.token = env;
    }
  }

  std::string submit(const PromptBundle& bundle) override {
    httplib::Client client(cfg_.host, cfg_.port);
    client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));

    jsonio::json body{{"system", bundle.system_text},
                      {"user", bundle.user_text},
                      {"attachments", bundle.attachments},
                      {"model", cfg_.model}};
    httplib::Headers headers;
    if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);

    auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
    if (!res)
      throw ProviderError("transport failure contacting " + cfg_.host + ":" +
                          std::to_string(cfg_.port) + cfg_.path);
    if (res->status != 200)
      throw ProviderError("provider returned HTTP " + std::to_string(res->status));
    jsonio::json parsed;
    try {
      parsed = jsonio::json::parse(res->body);
    } catch (const jsonio::json::parse_error&) {
      throw ProviderError("provider response is not JSON");
    }
    if (!parsed.contains("text") || !parsed["text"].is_string())
      throw ProviderError("provider response lacks a 'text' field");
    return parsed["text"].get<std::string>();
  }

  std::string id() const override { return "http:" + cfg_.host + ":" + std::to_string(cfg_.port); }

 private:
  HttpProviderConfig cfg_;
};

}  // namespace rarecov::agent

#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace imdet {

/// Request policy shared by the generator and scorer clients. Transport
/// failures and 5xx answers are retried with exponential backoff; 4xx answers
/// and malformed bodies fail immediately with ErrorKind::protocol.
struct ServicePolicy {
  double timeout_s = 30.0;
  int max_attempts = 3;
  double initial_backoff_s = 0.2;
};

/// True for "mock:..." endpoints, which never touch the network.
bool is_mock_endpoint(const std::string& endpoint);

/// POSTs `body` to `endpoint + route` and returns the parsed JSON answer.
nlohmann::json post_json(const std::string& endpoint, const std::string& route, const nlohmann::json& body,
                         const ServicePolicy& policy);

nlohmann::json get_json(const std::string& endpoint, const std::string& route, const ServicePolicy& policy);

}  // namespace imdet

#include "imdet/service.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

#include "imdet/error.hpp"

namespace imdet {

namespace {

struct SplitEndpoint {
  std::string origin;  // scheme://host:port
  std::string prefix;  // optional path prefix, no trailing slash
};

SplitEndpoint split(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos || endpoint.compare(0, scheme, "http") != 0)
    fail(ErrorKind::config, "endpoint must be http://host:port[/prefix], got '" + endpoint + "'");
  const auto path = endpoint.find('/', scheme + 3);
  SplitEndpoint out;
  out.origin = endpoint.substr(0, path);
  if (path != std::string::npos) {
    out.prefix = endpoint.substr(path);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

template <class Call>
nlohmann::json with_retries(const std::string& endpoint, const std::string& route, const ServicePolicy& policy,
                            Call&& call) {
  const auto target = split(endpoint);
  httplib::Client client(target.origin);
  const auto timeout = std::chrono::duration<double>(policy.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  const int attempts = std::max(1, policy.max_attempts);
  double backoff = policy.initial_backoff_s;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = call(client, target.prefix + route);
    if (!res) {
      last_error = endpoint + route + ": " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = endpoint + route + ": HTTP " + std::to_string(res->status) + " " + res->body;
    } else if (res->status >= 400) {
      std::string detail = res->body;
      try {
        detail = nlohmann::json::parse(res->body).at("error").template get<std::string>();
      } catch (const std::exception&) {
      }
      fail(ErrorKind::protocol, endpoint + route + ": HTTP " + std::to_string(res->status) + ": " + detail);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::protocol, endpoint + route + ": malformed JSON response: " + e.what());
      }
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw TransportError(last_error, attempts);
}

}  // namespace

bool is_mock_endpoint(const std::string& endpoint) { return endpoint.rfind("mock:", 0) == 0; }

nlohmann::json post_json(const std::string& endpoint, const std::string& route, const nlohmann::json& body,
                         const ServicePolicy& policy) {
  const std::string payload = body.dump();
  return with_retries(endpoint, route, policy, [&](httplib::Client& c, const std::string& path) {
    return c.Post(path, payload, "application/json");
  });
}

nlohmann::json get_json(const std::string& endpoint, const std::string& route, const ServicePolicy& policy) {
  return with_retries(endpoint, route, policy,
                      [&](httplib::Client& c, const std::string& path) { return c.Get(path); });
}

}  // namespace imdet

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "cotbench/gateway.hpp"

namespace cotbench {

HttpTransport::HttpTransport(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  scheme_host_ = base_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? std::string() : base_url.substr(path_start);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
  path_ += "/chat/completions";
}

HttpReply HttpTransport::post_chat(const std::string& body) {
  httplib::Client client(scheme_host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) throw std::runtime_error("connection to " + scheme_host_ + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

std::vector<std::uint8_t> http_get_bytes(const std::string& url, std::chrono::seconds timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw GatewayError("URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string host = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(host);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_follow_location(true);
  auto res = client.Get(path);
  if (!res) throw GatewayError("GET " + url + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw GatewayError("GET " + url + " returned HTTP " + std::to_string(res->status));
  return {res->body.begin(), res->body.end()};
}

}  // namespace cotbench

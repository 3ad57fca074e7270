#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/model.hpp"

namespace cotbench {

class GatewayError : public Error {
 public:
  using Error::Error;
};

// 429/5xx (or connection failures) persisted past the retry budget.
class TransientExhausted : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Upstream body could not be parsed, or a non-retryable HTTP status.
class ProtocolError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Replay mode and the request is not in the fixture store.
class FixtureMiss : public GatewayError {
 public:
  FixtureMiss(const std::string& key) : GatewayError("fixture miss for key " + key), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class Role { System, User, Assistant };

struct ImageAttachment {
  std::vector<std::uint8_t> bytes;
  std::string media_type;  // e.g. "image/png"

  bool operator==(const ImageAttachment&) const = default;
};

struct ChatMessage {
  Role role = Role::User;
  std::string text;
  std::optional<ImageAttachment> image;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 512;
  bool want_token_scores = false;
  // Sampling seed; distinguishes repeated draws of the same prompt in the cache.
  std::optional<std::uint64_t> seed;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct ChatResponse {
  std::string text;
  // Log-probabilities of candidate tokens at the first generated position.
  std::optional<std::map<std::string, double>> token_scores;
  Usage usage;
  double latency_ms = 0.0;

  bool operator==(const ChatResponse&) const = default;
};

// Default temperatures for the two kinds of calls the pipelines make.
inline constexpr double kJudgeTemperature = 0.0;
inline constexpr double kGenerationTemperature = 0.7;

std::string_view role_name(Role r);

// Canonical JSON of the fields that identify a request. Object keys are
// sorted, images are represented by their digest.
Json canonical_request_json(const ChatRequest& req);
std::string cache_key(const ChatRequest& req);

// Wire format (chat-completions shape).
std::string encode_chat_request(const ChatRequest& req);
ChatResponse decode_chat_response(std::string_view body);

Json response_to_json(const ChatResponse& r);
ChatResponse response_from_json(const Json& j);

struct HttpReply {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // POSTs a JSON body to the chat-completions route. May throw on connection
  // failure; the gateway treats that like a 5xx.
  virtual HttpReply post_chat(const std::string& body) = 0;
};

// Live transport over HTTP(S). base_url is e.g. "https://host/v1"; requests go
// to base_url + "/chat/completions".
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(120));
  HttpReply post_chat(const std::string& body) override;

 private:
  std::string scheme_host_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

// GET a URL and return the body; throws GatewayError on failure or non-200.
std::vector<std::uint8_t> http_get_bytes(const std::string& url,
                                         std::chrono::seconds timeout = std::chrono::seconds(60));

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::nanoseconds d) = 0;
};

class SystemClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::nanoseconds d) override;
};

// Content-addressed response store, one file per key.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<ChatResponse> get(const std::string& key) const;
  void put(const std::string& key, const ChatResponse& response) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path file_for(const std::string& key) const;
  std::filesystem::path dir_;
};

enum class CacheMode { Off, ReadWrite, Replay };

CacheMode parse_cache_mode(std::string_view s);
std::string_view cache_mode_name(CacheMode m);

struct GatewayPolicy {
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each retry
  double rate_limit = 0.0;                 // requests issued per second; 0 = unlimited
  std::size_t max_in_flight = 4;
  CacheMode cache_mode = CacheMode::Off;
};

struct GatewayStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t upstream_calls = 0;
  std::size_t retries = 0;
};

// Thread-safe chat-completion client. Lookup order: cache (unless Off), then
// the transport under the rate limiter and in-flight bound, with retries on
// transient statuses. Replay mode never touches the transport.
class Gateway {
 public:
  Gateway(GatewayPolicy policy, std::unique_ptr<Transport> transport,
          std::optional<std::filesystem::path> cache_dir = std::nullopt,
          std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

  ChatResponse complete(const ChatRequest& req);

  GatewayStats stats() const;
  const GatewayPolicy& policy() const { return policy_; }

 private:
  ChatResponse call_upstream(const ChatRequest& req);
  void acquire_rate_slot();

  GatewayPolicy policy_;
  std::unique_ptr<Transport> transport_;
  std::optional<ResponseCache> cache_;
  std::shared_ptr<Clock> clock_;

  std::mutex rate_mu_;
  std::deque<Clock::time_point> issued_;

  std::mutex flight_mu_;
  std::condition_variable flight_cv_;
  std::size_t in_flight_ = 0;

  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> upstream_calls_{0};
  std::atomic<std::size_t> retries_{0};
};

}  // namespace cotbench

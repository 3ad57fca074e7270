#include "cotbench/gateway.hpp"

#include <cmath>
#include <thread>

#include "cotbench/dataset_io.hpp"
#include "cotbench/digest.hpp"

namespace cotbench {

namespace fs = std::filesystem;

std::string_view role_name(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Json canonical_request_json(const ChatRequest& req) {
  Json msgs = Json::array();
  for (const auto& m : req.messages) {
    Json jm = {{"role", role_name(m.role)}, {"text", m.text}};
    if (m.image) jm["image"] = {{"media_type", m.image->media_type}, {"sha256", sha256_hex(m.image->bytes)}};
    msgs.push_back(std::move(jm));
  }
  Json j = {{"model_id", req.model_id},
            {"messages", std::move(msgs)},
            {"temperature", req.temperature},
            {"max_tokens", req.max_tokens},
            {"want_token_scores", req.want_token_scores}};
  if (req.seed) j["seed"] = *req.seed;
  return j;
}

std::string cache_key(const ChatRequest& req) { return sha256_hex(canonical_request_json(req).dump()); }

std::string encode_chat_request(const ChatRequest& req) {
  Json msgs = Json::array();
  for (const auto& m : req.messages) {
    Json jm = {{"role", role_name(m.role)}};
    if (m.image) {
      const std::string url = "data:" + m.image->media_type + ";base64," + base64_encode(m.image->bytes);
      jm["content"] = Json::array({Json{{"type", "text"}, {"text", m.text}},
                                   Json{{"type", "image_url"}, {"image_url", {{"url", url}}}}});
    } else {
      jm["content"] = m.text;
    }
    msgs.push_back(std::move(jm));
  }
  Json body = {{"model", req.model_id},
               {"messages", std::move(msgs)},
               {"temperature", req.temperature},
               {"max_tokens", req.max_tokens}};
  if (req.want_token_scores) {
    body["logprobs"] = true;
    body["top_logprobs"] = 20;
  }
  if (req.seed) body["seed"] = *req.seed;
  return body.dump();
}

ChatResponse decode_chat_response(std::string_view body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("unparseable response body: ") + e.what());
  }
  try {
    ChatResponse r;
    const Json& choice = j.at("choices").at(0);
    const Json& content = choice.at("message").at("content");
    r.text = content.is_null() ? std::string() : content.get<std::string>();
    if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
      if (auto c = lp->find("content"); c != lp->end() && c->is_array() && !c->empty()) {
        const Json& first = c->at(0);
        std::map<std::string, double> scores;
        if (auto top = first.find("top_logprobs"); top != first.end())
          for (const auto& t : *top) scores[t.at("token").get<std::string>()] = t.at("logprob").get<double>();
        if (first.contains("token")) scores.emplace(first.at("token").get<std::string>(), first.at("logprob").get<double>());
        r.token_scores = std::move(scores);
      }
    }
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      r.usage.prompt_tokens = u->value("prompt_tokens", 0);
      r.usage.completion_tokens = u->value("completion_tokens", 0);
    }
    return r;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("unexpected response shape: ") + e.what());
  }
}

// Latency is left out so that cache files depend only on the response.
Json response_to_json(const ChatResponse& r) {
  Json j = {{"text", r.text},
            {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}}};
  if (r.token_scores) j["token_scores"] = *r.token_scores;
  return j;
}

ChatResponse response_from_json(const Json& j) {
  ChatResponse r;
  j.at("text").get_to(r.text);
  if (auto it = j.find("token_scores"); it != j.end() && !it->is_null())
    r.token_scores = it->get<std::map<std::string, double>>();
  if (auto u = j.find("usage"); u != j.end()) {
    r.usage.prompt_tokens = u->value("prompt_tokens", 0);
    r.usage.completion_tokens = u->value("completion_tokens", 0);
  }
  r.latency_ms = j.value("latency_ms", 0.0);
  return r;
}

void SystemClock::sleep_for(std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); }

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

fs::path ResponseCache::file_for(const std::string& key) const {
  // Two-level fan-out keeps directories small for large campaigns.
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<ChatResponse> ResponseCache::get(const std::string& key) const {
  const fs::path p = file_for(key);
  std::error_code ec;
  if (!fs::exists(p, ec)) return std::nullopt;
  try {
    return response_from_json(Json::parse(read_file(p)));
  } catch (const Json::exception& e) {
    throw DataError("corrupt cache entry " + p.string() + ": " + e.what());
  }
}

void ResponseCache::put(const std::string& key, const ChatResponse& response) const {
  write_file_atomic(file_for(key), response_to_json(response).dump(2) + "\n");
}

CacheMode parse_cache_mode(std::string_view s) {
  if (s == "off") return CacheMode::Off;
  if (s == "rw" || s == "readwrite") return CacheMode::ReadWrite;
  if (s == "replay") return CacheMode::Replay;
  throw ConfigError("unknown cache mode '" + std::string(s) + "' (expected off|rw|replay)");
}

std::string_view cache_mode_name(CacheMode m) {
  switch (m) {
    case CacheMode::Off: return "off";
    case CacheMode::ReadWrite: return "rw";
    case CacheMode::Replay: return "replay";
  }
  return "off";
}

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayPolicy policy, std::unique_ptr<Transport> transport, std::optional<fs::path> cache_dir,
                 std::shared_ptr<Clock> clock)
    : policy_(policy), transport_(std::move(transport)), clock_(std::move(clock)) {
  if (policy_.cache_mode != CacheMode::Off) {
    if (!cache_dir) throw ConfigError("cache mode '" + std::string(cache_mode_name(policy_.cache_mode)) + "' needs a cache directory");
    if (policy_.cache_mode == CacheMode::Replay && !fs::is_directory(*cache_dir))
      throw ConfigError("fixture store " + cache_dir->string() + " does not exist");
    cache_.emplace(*cache_dir);
  }
  if (policy_.cache_mode != CacheMode::Replay && !transport_)
    throw ConfigError("no endpoint configured and cache mode is not replay");
  if (policy_.max_in_flight == 0) policy_.max_in_flight = 1;
}

GatewayStats Gateway::stats() const {
  return {requests_.load(), cache_hits_.load(), upstream_calls_.load(), retries_.load()};
}

ChatResponse Gateway::complete(const ChatRequest& req) {
  if (req.messages.empty()) throw PreconditionError("chat request without messages");
  if (req.temperature < 0.0 || req.temperature > 2.0) throw PreconditionError("temperature outside [0, 2]");
  if (req.max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
  ++requests_;

  std::string key;
  if (cache_) {
    key = cache_key(req);
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      return *hit;
    }
    if (policy_.cache_mode == CacheMode::Replay) throw FixtureMiss(key);
  }
  ChatResponse r = call_upstream(req);
  if (cache_) cache_->put(key, r);
  return r;
}

void Gateway::acquire_rate_slot() {
  if (policy_.rate_limit <= 0.0) return;
  const auto window = std::chrono::seconds(1);
  const auto cap = static_cast<std::size_t>(std::max(1.0, std::floor(policy_.rate_limit)));
  for (;;) {
    std::chrono::nanoseconds wait{0};
    {
      std::lock_guard lock(rate_mu_);
      const auto now = clock_->now();
      while (!issued_.empty() && now - issued_.front() >= window) issued_.pop_front();
      if (issued_.size() < cap) {
        issued_.push_back(now);
        return;
      }
      wait = issued_.front() + window - now;
    }
    clock_->sleep_for(wait);
  }
}

ChatResponse Gateway::call_upstream(const ChatRequest& req) {
  {
    std::unique_lock lock(flight_mu_);
    flight_cv_.wait(lock, [&] { return in_flight_ < policy_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    Gateway* g;
    ~Release() {
      {
        std::lock_guard lock(g->flight_mu_);
        --g->in_flight_;
      }
      g->flight_cv_.notify_one();
    }
  } release{this};

  const std::string body = encode_chat_request(req);
  std::string last_failure;
  for (int attempt = 0;; ++attempt) {
    acquire_rate_slot();
    ++upstream_calls_;
    const auto start = clock_->now();
    HttpReply reply;
    bool transient = false;
    try {
      reply = transport_->post_chat(body);
      transient = reply.status == 429 || reply.status >= 500;
      if (transient) last_failure = "HTTP " + std::to_string(reply.status);
    } catch (const GatewayError&) {
      throw;
    } catch (const std::exception& e) {
      transient = true;
      last_failure = e.what();
    }
    if (!transient) {
      if (reply.status < 200 || reply.status >= 300)
        throw ProtocolError("HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200));
      ChatResponse r = decode_chat_response(reply.body);
      r.latency_ms = std::chrono::duration<double, std::milli>(clock_->now() - start).count();
      return r;
    }
    if (attempt >= policy_.max_retries)
      throw TransientExhausted("gave up after " + std::to_string(attempt) + " retries: " + last_failure);
    ++retries_;
    clock_->sleep_for(policy_.backoff * (1LL << std::min(attempt, 16)));
  }
}

}  // namespace cotbench

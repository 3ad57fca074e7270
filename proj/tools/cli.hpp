#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cotbench/gateway.hpp"

namespace cotbench::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitConfigError = 2;

struct Environment {
  // Lookup for COTBENCH_LLM_URL / COTBENCH_API_KEY.
  std::map<std::string, std::string> vars;
  // Builds the upstream transport for an endpoint URL and API key.
  std::function<std::unique_ptr<Transport>(const std::string& url, const std::string& api_key)> make_transport;
  std::shared_ptr<Clock> clock;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

// Process environment, HTTP transport, system clock, std streams.
Environment process_environment();

// args excludes the program name.
int run(const std::vector<std::string>& args, Environment& env);

}  // namespace cotbench::cli

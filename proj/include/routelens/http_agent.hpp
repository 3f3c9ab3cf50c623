#pragma once

// Default HTTP transport, split out so the heavy httplib include stays out of
// translation units that only use fakes.

#include <httplib.h>

#include "routelens/agentio.hpp"

namespace routelens {

inline Transport http_transport() {
  return [](const TransportRequest& tr) {
    TransportResult out;
    httplib::Client client(tr.base_url);
    client.set_connection_timeout(tr.timeout_seconds, 0);
    client.set_read_timeout(tr.timeout_seconds, 0);
    httplib::Headers headers;
    if (!tr.api_key.empty()) headers.emplace("Authorization", "Bearer " + tr.api_key);
    auto res = client.Post(tr.path, headers, tr.body, "application/json");
    if (!res) {
      out.transport_ok = false;
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.transport_ok = true;
    out.status = res->status;
    out.body = res->body;
    return out;
  };
}

inline std::string query_agent(const AgentRequest& req, const AgentEndpointConfig& cfg) {
  return query_agent(req, cfg, http_transport());
}

}  // namespace routelens

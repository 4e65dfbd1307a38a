#pragma once

// Thin JSON-over-HTTP helper shared by the external provider clients.

#include <chrono>
#include <string>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <Eigen/Core>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chromalign/core/error.hpp"

namespace chromalign::net {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash

    static Endpoint parse(const std::string& url) {
        const auto scheme = url.find("://");
        if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0)
            throw ContractError("provider URL must start with http://: " + url);
        const auto slash = url.find('/', scheme + 3);
        Endpoint e;
        e.origin = url.substr(0, slash);
        if (slash != std::string::npos) e.prefix = url.substr(slash);
        while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
        return e;
    }

    std::string url() const { return origin + prefix; }
};

class JsonClient {
public:
    explicit JsonClient(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(30))
        : endpoint_(Endpoint::parse(url)), timeout_(timeout) {}

    const Endpoint& endpoint() const noexcept { return endpoint_; }

    // Transport failures and non-2xx replies both mean the provider is unusable.
    nlohmann::json get(const std::string& path) const {
        auto cli = client();
        return reply(cli.Get(endpoint_.prefix + path), path);
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        auto cli = client();
        return reply(cli.Post(endpoint_.prefix + path, body.dump(), "application/json"), path);
    }

private:
    httplib::Client client() const {
        httplib::Client cli(endpoint_.origin);
        cli.set_connection_timeout(std::chrono::seconds(5));
        cli.set_read_timeout(timeout_);
        cli.set_write_timeout(timeout_);
        return cli;
    }

    nlohmann::json reply(const httplib::Result& res, const std::string& path) const {
        const std::string where = endpoint_.url() + path;
        if (!res) throw ProviderUnavailable(where + ": " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw ProviderUnavailable(where + ": HTTP " + std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ProviderUnavailable(where + ": malformed reply: " + e.what());
        }
    }

    Endpoint endpoint_;
    std::chrono::seconds timeout_;
};

}  // namespace chromalign::net

// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/image.hpp"
#include "orbitalsplat/reconstruct.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace orbitalsplat {

/// Environment variable consulted for the default service URL.
inline constexpr const char *kEndpointEnvVar = "ORBITALSPLAT_ENDPOINT";

struct ServiceEndpoint {
    std::string base_url;
    double timeout_s = 30.0;
    int max_retries = 3;
    std::optional<std::string> auth_token;

    void validate() const;
    /// Endpoint with base_url from ORBITALSPLAT_ENDPOINT, or nullopt when the variable is unset
    /// or empty.
    static std::optional<ServiceEndpoint> from_environment();
};

struct RemoteMetrics {
    double lpips = 0.0;
    double clip_similarity = 0.0;

    void validate() const;
};

struct HealthStatus {
    std::string status;
    std::string model;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

using HttpHeaders = std::map<std::string, std::string>;

/// Minimal HTTP surface used by the client. Implementations throw TransportError when no
/// response was received (connection refused, timeout, DNS failure).
class HttpTransport {
  public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const std::string &path, const std::string &body, const HttpHeaders &headers,
                              double timeout_s) = 0;
    virtual HttpResponse get(const std::string &path, const HttpHeaders &headers, double timeout_s) = 0;
};

/// Plain-HTTP transport backed by cpp-httplib. `base_url` is http://host[:port].
std::shared_ptr<HttpTransport> make_http_transport(const std::string &base_url);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ProtocolError on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(const std::string &text);

/// 8-bit RGBA PNG, base64.
std::string encode_image_b64(const ImageRGBA &image);
/// Throws ProtocolError when the payload is not a decodable PNG.
ImageRGBA decode_image_b64(const std::string &text);

/// Delay before retry `attempt` (0-based): base * factor^attempt * (1 + jitter * u), u in [0, 1).
struct RetryPolicy {
    double base_s = 0.5;
    double factor = 2.0;
    double jitter = 0.25;

    double delay(int attempt, double u) const;
};

/// Talks to the guidance/metrics service. Safe to share across threads; calls are serialized.
class GuidanceClient {
  public:
    using Sleeper = std::function<void(double seconds)>;

    /// Without a transport, one is created for endpoint.base_url. The default sleeper blocks
    /// the calling thread.
    GuidanceClient(ServiceEndpoint endpoint, std::shared_ptr<HttpTransport> transport = nullptr,
                   Sleeper sleeper = {}, std::uint64_t seed = std::random_device{}());

    /// POST /v1/guidance. Throws TransportError when every attempt failed and ProtocolError when
    /// the service answered with a client error or a response that violates the schema.
    GuidanceResponse provide_target(const GuidanceRequest &request);
    /// POST /v1/metrics. Throws InvalidArgument before sending when sizes differ.
    RemoteMetrics metrics(const ImageRGBA &a, const ImageRGBA &b);
    /// GET /health.
    HealthStatus health();

    const ServiceEndpoint &endpoint() const { return endpoint_; }
    /// Retries spent by the most recent call.
    int last_retries() const;
    /// Every backoff delay slept so far, seconds.
    std::vector<double> backoff_history() const;

  private:
    HttpResponse send(const std::string &path, const std::string *body, const std::string &request_id);
    std::string next_request_id();

    ServiceEndpoint endpoint_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
    RetryPolicy policy_;
    mutable std::mutex mutex_;
    std::mt19937_64 rng_;
    int last_retries_ = 0;
    std::vector<double> backoff_history_;
};

/// GuidanceProvider backed by the remote service.
class RemoteGuidance : public GuidanceProvider {
  public:
    explicit RemoteGuidance(std::shared_ptr<GuidanceClient> client) : client_(std::move(client)) {}
    GuidanceResponse provide_target(const GuidanceRequest &request) override {
        return client_->provide_target(request);
    }

  private:
    std::shared_ptr<GuidanceClient> client_;
};

} // namespace orbitalsplat

// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/guidance_client.hpp"

#include "orbitalsplat/error.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

namespace orbitalsplat {

using nlohmann::json;

void ServiceEndpoint::validate() const {
    if (base_url.empty()) {
        throw InvalidArgument("service endpoint: base_url is empty");
    }
    if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) {
        throw InvalidArgument("service endpoint: timeout must be positive");
    }
    if (max_retries < 0) {
        throw InvalidArgument("service endpoint: max_retries must be >= 0");
    }
}

std::optional<ServiceEndpoint> ServiceEndpoint::from_environment() {
    const char *url = std::getenv(kEndpointEnvVar);
    if (url == nullptr || *url == '\0') {
        return std::nullopt;
    }
    ServiceEndpoint ep;
    ep.base_url = url;
    return ep;
}

void RemoteMetrics::validate() const {
    if (!std::isfinite(lpips) || lpips < 0.0) {
        throw ProtocolError("metrics response: lpips must be finite and >= 0");
    }
    if (!std::isfinite(clip_similarity) || clip_similarity < -1.0 || clip_similarity > 1.0) {
        throw ProtocolError("metrics response: clip_similarity must lie in [-1, 1]");
    }
}

// ---- base64 ----

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    if (bytes.empty()) {
        return out;
    }
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string &text) {
    if (text.size() % 4 != 0) {
        throw ProtocolError("base64: length is not a multiple of 4");
    }
    if (text.empty()) {
        return {};
    }
    std::size_t padding = 0;
    for (std::size_t i = text.size(); i-- > 0 && text[i] == '=';) {
        ++padding;
    }
    if (padding > 2) {
        throw ProtocolError("base64: bad padding");
    }
    for (std::size_t i = 0; i < text.size() - padding; ++i) {
        const char c = text[i];
        const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
                        c == '/';
        if (!ok) {
            throw ProtocolError("base64: invalid character");
        }
    }
    std::vector<std::uint8_t> out(text.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char *>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) {
        throw ProtocolError("base64: decode failed");
    }
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

std::string encode_image_b64(const ImageRGBA &image) { return base64_encode(encode_png(image)); }

ImageRGBA decode_image_b64(const std::string &text) {
    const auto bytes = base64_decode(text);
    try {
        return decode_png(bytes);
    } catch (const Error &e) {
        throw ProtocolError(std::string("image payload is not a valid PNG: ") + e.what());
    }
}

double RetryPolicy::delay(int attempt, double u) const {
    return base_s * std::pow(factor, attempt) * (1.0 + jitter * u);
}

// ---- client ----

GuidanceClient::GuidanceClient(ServiceEndpoint endpoint, std::shared_ptr<HttpTransport> transport, Sleeper sleeper,
                               std::uint64_t seed)
    : endpoint_(std::move(endpoint)), transport_(std::move(transport)), sleeper_(std::move(sleeper)), rng_(seed) {
    endpoint_.validate();
    if (!transport_) {
        transport_ = make_http_transport(endpoint_.base_url);
    }
    if (!sleeper_) {
        sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
    }
}

int GuidanceClient::last_retries() const {
    std::lock_guard lock(mutex_);
    return last_retries_;
}

std::vector<double> GuidanceClient::backoff_history() const {
    std::lock_guard lock(mutex_);
    return backoff_history_;
}

std::string GuidanceClient::next_request_id() {
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                  static_cast<unsigned long long>(rng_()));
    return buf;
}

namespace {

std::string error_message(const std::string &body) {
    try {
        const json j = json::parse(body);
        if (j.is_object() && j.contains("error") && j["error"].is_string()) {
            return j["error"].get<std::string>();
        }
    } catch (const json::exception &) {
    }
    return body.substr(0, 200);
}

json parse_object(const std::string &body, const char *what) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception &e) {
        throw ProtocolError(std::string(what) + ": response is not JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw ProtocolError(std::string(what) + ": response is not a JSON object");
    }
    return j;
}

const json &require(const json &j, const char *key, const char *what) {
    if (!j.contains(key)) {
        throw ProtocolError(std::string(what) + ": response lacks \"" + key + "\"");
    }
    return j[key];
}

double require_number(const json &j, const char *key, const char *what) {
    const json &v = require(j, key, what);
    if (!v.is_number()) {
        throw ProtocolError(std::string(what) + ": \"" + key + "\" is not a number");
    }
    return v.get<double>();
}

std::string require_string(const json &j, const char *key, const char *what) {
    const json &v = require(j, key, what);
    if (!v.is_string()) {
        throw ProtocolError(std::string(what) + ": \"" + key + "\" is not a string");
    }
    return v.get<std::string>();
}

} // namespace

// Callers hold mutex_.
HttpResponse GuidanceClient::send(const std::string &path, const std::string *body, const std::string &request_id) {
    HttpHeaders headers;
    if (!request_id.empty()) {
        headers["Idempotency-Key"] = request_id;
    }
    if (endpoint_.auth_token) {
        headers["Authorization"] = "Bearer " + *endpoint_.auth_token;
    }
    last_retries_ = 0;
    std::string failure;
    for (int attempt = 0;; ++attempt) {
        try {
            HttpResponse r = body ? transport_->post(path, *body, headers, endpoint_.timeout_s)
                                  : transport_->get(path, headers, endpoint_.timeout_s);
            if (r.status >= 200 && r.status < 300) {
                return r;
            }
            if (r.status < 500) {
                throw ProtocolError(path + ": HTTP " + std::to_string(r.status) + ": " + error_message(r.body));
            }
            failure = "HTTP " + std::to_string(r.status) + ": " + error_message(r.body);
        } catch (const TransportError &e) {
            failure = e.what();
        }
        if (attempt >= endpoint_.max_retries) {
            break;
        }
        std::uniform_real_distribution<double> jitter(0.0, 1.0);
        const double wait = policy_.delay(attempt, jitter(rng_));
        spdlog::warn("{} failed ({}); retry {} of {} in {:.2f} s", path, failure, attempt + 1, endpoint_.max_retries,
                     wait);
        backoff_history_.push_back(wait);
        ++last_retries_;
        sleeper_(wait);
    }
    throw TransportError(endpoint_.base_url + path + ": giving up after " + std::to_string(last_retries_) +
                         " retries: " + failure);
}

GuidanceResponse GuidanceClient::provide_target(const GuidanceRequest &request) {
    request.validate();
    std::lock_guard lock(mutex_);
    const std::string id = next_request_id();
    const json payload = {
        {"rendered_png_b64", encode_image_b64(request.rendered)},
        {"reference_png_b64", encode_image_b64(request.reference)},
        {"delta_elevation_deg", request.relative_pose.delta_elevation_deg},
        {"delta_azimuth_deg", request.relative_pose.delta_azimuth_deg},
        {"delta_radius", request.relative_pose.delta_radius},
        {"step", request.step},
        {"total_steps", request.total_steps},
        {"request_id", id},
    };
    const std::string body = payload.dump();
    const HttpResponse r = send("/v1/guidance", &body, id);
    const json j = parse_object(r.body, "guidance");
    GuidanceResponse out;
    out.target = decode_image_b64(require_string(j, "target_png_b64", "guidance"));
    out.weight = require_number(j, "weight", "guidance");
    if (!out.target.same_size(request.rendered)) {
        throw ProtocolError("guidance: target is " + std::to_string(out.target.width()) + "x" +
                            std::to_string(out.target.height()) + ", expected " +
                            std::to_string(request.rendered.width()) + "x" +
                            std::to_string(request.rendered.height()));
    }
    if (!std::isfinite(out.weight) || out.weight < 0.0) {
        throw ProtocolError("guidance: weight must be finite and >= 0");
    }
    return out;
}

RemoteMetrics GuidanceClient::metrics(const ImageRGBA &a, const ImageRGBA &b) {
    if (a.empty() || !a.same_size(b)) {
        throw InvalidArgument("remote metrics: images must be non-empty and the same size");
    }
    std::lock_guard lock(mutex_);
    const json payload = {{"image_a_png_b64", encode_image_b64(a)}, {"image_b_png_b64", encode_image_b64(b)}};
    const std::string body = payload.dump();
    const HttpResponse r = send("/v1/metrics", &body, next_request_id());
    const json j = parse_object(r.body, "metrics");
    RemoteMetrics m;
    m.lpips = require_number(j, "lpips", "metrics");
    m.clip_similarity = require_number(j, "clip_similarity", "metrics");
    m.validate();
    return m;
}

HealthStatus GuidanceClient::health() {
    std::lock_guard lock(mutex_);
    const HttpResponse r = send("/health", nullptr, "");
    const json j = parse_object(r.body, "health");
    return HealthStatus{require_string(j, "status", "health"), require_string(j, "model", "health")};
}

} // namespace orbitalsplat

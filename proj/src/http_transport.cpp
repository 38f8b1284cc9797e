// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/error.hpp"
#include "orbitalsplat/guidance_client.hpp"

#include <httplib.h>

namespace orbitalsplat {
namespace {

class HttplibTransport : public HttpTransport {
  public:
    explicit HttplibTransport(const std::string &base_url) : base_url_(base_url) {
        if (base_url.rfind("http://", 0) != 0) {
            throw InvalidArgument("service endpoint must be an http:// URL (TLS is not supported): " + base_url);
        }
    }

    HttpResponse post(const std::string &path, const std::string &body, const HttpHeaders &headers,
                      double timeout_s) override {
        httplib::Client cli(base_url_);
        configure(cli, timeout_s);
        return convert(cli.Post(path, to_headers(headers), body, "application/json"), path);
    }

    HttpResponse get(const std::string &path, const HttpHeaders &headers, double timeout_s) override {
        httplib::Client cli(base_url_);
        configure(cli, timeout_s);
        return convert(cli.Get(path, to_headers(headers)), path);
    }

  private:
    static void configure(httplib::Client &cli, double timeout_s) {
        const auto usec = static_cast<long long>(timeout_s * 1e6);
        const auto timeout = std::chrono::microseconds(usec);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
    }

    static httplib::Headers to_headers(const HttpHeaders &headers) {
        return httplib::Headers(headers.begin(), headers.end());
    }

    HttpResponse convert(const httplib::Result &res, const std::string &path) const {
        if (!res) {
            throw TransportError(base_url_ + path + ": " + httplib::to_string(res.error()));
        }
        return HttpResponse{res->status, res->body};
    }

    std::string base_url_;
};

} // namespace

std::shared_ptr<HttpTransport> make_http_transport(const std::string &base_url) {
    return std::make_shared<HttplibTransport>(base_url);
}

} // namespace orbitalsplat

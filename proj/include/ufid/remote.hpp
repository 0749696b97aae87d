#pragma once

// HTTP clients for remote model servers and remote encoders.

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

// httplib's default backlog of 5 drops connections under bursts. Define it
// before any other include of httplib.h (the CMake target does).
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>

#include "ufid/backends.hpp"
#include "ufid/core/error.hpp"
#include "ufid/similarity.hpp"
#include "ufid/wire.hpp"

namespace ufid {

struct RemoteOptions {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds connect_timeout{5};
  std::chrono::seconds read_timeout{120};
  std::ptrdiff_t max_in_flight = 4;
};

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/something", no trailing slash
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorCode::config, "url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) {
    ep.path_prefix = url.substr(path_start);
    while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
  }
  return ep;
}

// POSTs JSON with bounded concurrency; retries transport failures only, with
// exponential backoff.
class HttpJsonClient {
 public:
  HttpJsonClient(const std::string& url, RemoteOptions options)
      : endpoint_(parse_endpoint(url)),
        options_(options),
        slots_(std::make_unique<std::counting_semaphore<>>(options.max_in_flight)) {
    require(options_.attempts >= 1 && options_.max_in_flight >= 1, ErrorCode::config, "bad remote options");
  }

  const Endpoint& endpoint() const noexcept { return endpoint_; }

  std::string post(const std::string& path, const std::string& body) const {
    slots_->acquire();
    struct Release {
      std::counting_semaphore<>* s;
      ~Release() { s->release(); }
    } release{slots_.get()};

    auto backoff = options_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
      httplib::Client client(endpoint_.origin);
      client.set_connection_timeout(options_.connect_timeout);
      client.set_read_timeout(options_.read_timeout);
      auto res = client.Post(endpoint_.path_prefix + path, body, "application/json");
      if (res) {
        if (res->status >= 200 && res->status < 300) return res->body;
        std::string message = res->body;
        try {
          message = wire::json::parse(res->body).at("error").get<std::string>();
        } catch (...) {
        }
        fail(ErrorCode::protocol, endpoint_.origin + path + " returned " + std::to_string(res->status) + ": " + message);
      }
      last_error = httplib::to_string(res.error());
      if (attempt < options_.attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw TransportError(endpoint_.origin + path + ": " + last_error, options_.attempts);
  }

  // Any HTTP answer, even 404, proves the server is reachable.
  void ping() const {
    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(options_.connect_timeout);
    auto res = client.Get(endpoint_.path_prefix + "/");
    if (!res) throw TransportError(endpoint_.origin + " unreachable: " + httplib::to_string(res.error()), 1);
  }

 private:
  Endpoint endpoint_;
  RemoteOptions options_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(std::string url, RemoteOptions options = {}, std::optional<std::uint64_t> seed = std::nullopt,
                         std::optional<int> num_inference_steps = std::nullopt)
      : url_(std::move(url)), client_(url_, options), seed_(seed), steps_(num_inference_steps) {}

  std::string id() const override { return "remote:" + url_; }
  void health_check() const override { client_.ping(); }

  std::vector<Image> generate(std::span<const Query> inputs) const override {
    if (inputs.empty()) return {};
    require_uniform_mode(inputs);
    wire::GenerateRequest req;
    req.mode = inputs.front().mode();
    req.inputs.assign(inputs.begin(), inputs.end());
    req.seed = seed_;
    req.num_inference_steps = steps_;
    auto resp = wire::decode_generate_response(client_.post("/v1/generate", wire::encode_generate_request(req)));
    require(resp.images.size() == inputs.size(), ErrorCode::protocol,
            "backend returned " + std::to_string(resp.images.size()) + " images for " + std::to_string(inputs.size()) +
                " inputs");
    return std::move(resp.images);
  }

 private:
  std::string url_;
  HttpJsonClient client_;
  std::optional<std::uint64_t> seed_;
  std::optional<int> steps_;
};

class RemoteEncoder final : public Encoder {
 public:
  explicit RemoteEncoder(std::string url, RemoteOptions options = {}) : url_(std::move(url)), client_(url_, options) {}

  std::string id() const override { return "remote:" + url_; }

  std::vector<Embedding> embed_images(std::span<const Image> images) const override { return call(images, {}); }

  bool supports_text() const override { return true; }

  std::vector<Embedding> embed_texts(std::span<const std::string> texts) const override { return call({}, texts); }

  // Mixed request: images first, then texts, in one round trip.
  std::vector<Embedding> call(std::span<const Image> images, std::span<const std::string> texts) const {
    const auto resp =
        wire::decode_embed_response(client_.post("/v1/embed", wire::encode_embed_request(images, texts)));
    require(resp.embeddings.size() == images.size() + texts.size(), ErrorCode::protocol,
            "encoder returned wrong embedding count");
    std::vector<Embedding> out;
    out.reserve(resp.embeddings.size());
    for (const auto& v : resp.embeddings) {
      require(!v.empty(), ErrorCode::protocol, "empty embedding");
      for (double x : v) require(std::isfinite(x), ErrorCode::protocol, "non-finite embedding entry");
      out.push_back(normalized(Embedding{v, resp.encoder_id}));
    }
    return out;
  }

 private:
  std::string url_;
  HttpJsonClient client_;
};

}  // namespace ufid

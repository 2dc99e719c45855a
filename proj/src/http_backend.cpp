#include <atomic>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "peb/backend.hpp"
#include "peb/error.hpp"

namespace peb {
namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string base;    // path prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::ConfigError, "bad backend URL " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) {
    e.base = url.substr(path_start);
    while (!e.base.empty() && e.base.back() == '/') e.base.pop_back();
  }
  return e;
}

std::string error_message(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    if (j.contains("error") && j["error"].is_string()) return j["error"].get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  return body;
}

}  // namespace

struct HttpBackend::Impl {
  HttpOptions options;
  Endpoint endpoint;
  std::counting_semaphore<> in_flight;

  explicit Impl(HttpOptions opts)
      : options(std::move(opts)), endpoint(split_url(options.url)),
        in_flight(std::max(1, options.max_in_flight)) {}

  // Issues one idempotent request, retrying connection failures and 5xx
  // responses with exponential backoff.
  std::string call(const std::string& method, const std::string& path, const std::string& body) {
    in_flight.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight};

    std::string last_error;
    bool transport_failure = false;
    auto delay = options.backoff;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      httplib::Client client(endpoint.origin);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      const auto url = endpoint.base + path;
      auto res = method == "GET" ? client.Get(url)
                                 : client.Post(url, body, "application/json");
      if (!res) {
        transport_failure = true;
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) return res->body;
      if (res->status == 400) {
        const auto msg = error_message(res->body);
        if (msg.find("layer") != std::string::npos) throw Error(Errc::LayerOutOfRange, msg);
        throw Error(Errc::ProtocolError, "HTTP 400: " + msg);
      }
      if (res->status >= 500) {
        transport_failure = res->status == 503;
        last_error = "HTTP " + std::to_string(res->status) + ": " + error_message(res->body);
        continue;
      }
      throw Error(Errc::ProtocolError, "HTTP " + std::to_string(res->status) + " from " + url);
    }
    throw Error(transport_failure ? Errc::ConnectFailed : Errc::ProtocolError,
                endpoint.origin + endpoint.base + path + ": " + last_error);
  }
};

HttpBackend::HttpBackend(HttpOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  descriptor_ = decode_info_json(impl_->call("GET", "/info", {}));
  descriptor_.kind = BackendDescriptor::Kind::Http;
  descriptor_.endpoint = impl_->options.url;
}

HttpBackend::~HttpBackend() = default;

HiddenStatesResponse HttpBackend::fetch_hidden_states(const HiddenStatesRequest& request) {
  if (request.layers.empty()) throw Error(Errc::LayerOutOfRange, "no layers requested");
  std::vector<int> layers;
  for (int l : request.layers) layers.push_back(canonical_layer(l, descriptor_.num_layers));

  const auto batch = std::max<std::size_t>(1, impl_->options.batch_size);
  const auto n_batches = (request.prompts.size() + batch - 1) / batch;
  std::vector<HiddenStatesResponse> parts(n_batches);
  std::vector<std::exception_ptr> errors(n_batches);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (auto b = next++; b < n_batches; b = next++) {
      try {
        const auto begin = b * batch;
        const auto end = std::min(request.prompts.size(), begin + batch);
        HiddenStatesRequest sub{{request.prompts.begin() + static_cast<std::ptrdiff_t>(begin),
                                 request.prompts.begin() + static_cast<std::ptrdiff_t>(end)},
                                layers, request.want_offsets};
        const auto body = impl_->call("POST", "/hidden_states", encode_request_json(sub));
        parts[b] = decode_response_json(body, sub.prompts, sub.layers, descriptor_.num_layers);
        for (const auto& s : parts[b]) {
          validate_states(s, descriptor_.hidden_size, sub.want_offsets);
        }
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  };
  {
    const auto n_workers = std::min<std::size_t>(
        n_batches, static_cast<std::size_t>(std::max(1, impl_->options.max_in_flight)));
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n_workers; ++i) pool.emplace_back(worker);
    worker();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  HiddenStatesResponse out;
  out.reserve(request.prompts.size());
  for (auto& p : parts) {
    for (auto& s : p) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace peb

#include "peb/backend.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>

#include <json.hpp>

#include "peb/error.hpp"
#include "text_util.hpp"

namespace peb {
namespace {

using nlohmann::json;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

template <typename T>
void fnv_le(std::uint64_t& h, T value) {
  auto v = static_cast<std::uint64_t>(value);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>(v & 0xff);
    v >>= 8;
  }
  fnv_bytes(h, bytes, sizeof(T));
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

[[noreturn]] void protocol_error(const std::string& what) { throw Error(Errc::ProtocolError, what); }

int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(Errc::ConfigError, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

int canonical_layer(int layer, int num_layers) {
  if (num_layers <= 0) throw Error(Errc::LayerOutOfRange, "backend reports no layers");
  if (layer < 0) {
    if (layer < -num_layers) {
      throw Error(Errc::LayerOutOfRange, "layer " + std::to_string(layer) + " with " +
                                             std::to_string(num_layers) + " layers");
    }
    return layer;
  }
  if (layer >= num_layers) {
    throw Error(Errc::LayerOutOfRange,
                "layer " + std::to_string(layer) + " with " + std::to_string(num_layers) + " layers");
  }
  return layer - num_layers;
}

void validate_states(const PromptStates& s, int hidden_size, bool require_offsets) {
  const auto n = s.tokens.size();
  if ((require_offsets || !s.offsets.empty()) && s.offsets.size() != n) {
    protocol_error("offsets count " + std::to_string(s.offsets.size()) + " != token count " +
                   std::to_string(n));
  }
  std::size_t prev_start = 0;
  for (const auto& [start, end] : s.offsets) {
    if (start > end || end > s.prompt.size() || start < prev_start) {
      protocol_error("offset (" + std::to_string(start) + ", " + std::to_string(end) +
                     ") out of order or outside prompt of length " +
                     std::to_string(s.prompt.size()));
    }
    prev_start = start;
  }
  for (const auto& [layer, vectors] : s.states) {
    if (vectors.size() != n) {
      protocol_error("layer " + std::to_string(layer) + " has " + std::to_string(vectors.size()) +
                     " vectors for " + std::to_string(n) + " tokens");
    }
    for (const auto& v : vectors) {
      if (static_cast<int>(v.size()) != hidden_size) {
        protocol_error("vector length " + std::to_string(v.size()) + " != hidden size " +
                       std::to_string(hidden_size));
      }
      for (float x : v) {
        if (!std::isfinite(x)) {
          throw Error(Errc::NonFiniteValues, "layer " + std::to_string(layer));
        }
      }
    }
  }
}

std::vector<std::pair<std::string, Span>> mock_tokenize(std::string_view prompt,
                                                        std::string_view mask_token) {
  std::vector<std::pair<std::string, Span>> out;
  auto emit = [&](std::size_t begin, std::size_t end) {
    // split [begin, end) around mask occurrences
    while (begin < end) {
      std::size_t at = std::string_view::npos;
      if (!mask_token.empty()) {
        at = prompt.substr(0, end).find(mask_token, begin);
      }
      if (at == std::string_view::npos) {
        out.emplace_back(std::string(prompt.substr(begin, end - begin)), Span{begin, end});
        return;
      }
      if (at > begin) out.emplace_back(std::string(prompt.substr(begin, at - begin)), Span{begin, at});
      out.emplace_back(std::string(mask_token), Span{at, at + mask_token.size()});
      begin = at + mask_token.size();
    }
  };
  std::size_t i = 0;
  while (i < prompt.size()) {
    while (i < prompt.size() && text::is_space(prompt[i])) ++i;
    const auto start = i;
    while (i < prompt.size() && !text::is_space(prompt[i])) ++i;
    if (i > start) emit(start, i);
  }
  return out;
}

std::vector<float> mock_vector(std::uint64_t seed, int layer, std::size_t token_index,
                               std::string_view token, int hidden_size) {
  std::uint64_t h = kFnvOffset;
  fnv_le(h, seed);
  fnv_le(h, static_cast<std::uint32_t>(layer));
  fnv_le(h, static_cast<std::uint64_t>(token_index));
  fnv_bytes(h, token.data(), token.size());

  std::uint64_t state = h;
  std::vector<double> raw(static_cast<std::size_t>(hidden_size));
  double norm2 = 0.0;
  for (auto& x : raw) {
    const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    x = 2.0 * u - 1.0;
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i] / norm);
  return out;
}

PromptStates mock_states(const MockOptions& options, std::string_view prompt,
                         const std::vector<int>& layers) {
  PromptStates s;
  s.prompt = std::string(prompt);
  for (auto& [tok, span] : mock_tokenize(prompt, options.mask_token)) {
    s.tokens.push_back(std::move(tok));
    s.offsets.push_back(span);
  }
  for (int requested : layers) {
    const int layer = canonical_layer(requested, options.num_layers);
    auto& vectors = s.states[layer];
    if (!vectors.empty()) continue;
    vectors.reserve(s.tokens.size());
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      vectors.push_back(mock_vector(options.seed, layer, i, s.tokens[i], options.hidden_size));
    }
  }
  return s;
}

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {
  if (options_.hidden_size <= 0 || options_.num_layers <= 0) {
    throw Error(Errc::ConfigError, "mock backend needs positive dim and layers");
  }
  descriptor_.kind = BackendDescriptor::Kind::Mock;
  descriptor_.model_id = options_.model_id;
  descriptor_.hidden_size = options_.hidden_size;
  descriptor_.num_layers = options_.num_layers;
  descriptor_.mask_token = options_.mask_token;
  descriptor_.fingerprint = "mock seed=" + std::to_string(options_.seed);
}

HiddenStatesResponse MockBackend::fetch_hidden_states(const HiddenStatesRequest& request) {
  if (request.layers.empty()) throw Error(Errc::LayerOutOfRange, "no layers requested");
  for (int l : request.layers) canonical_layer(l, options_.num_layers);
  HiddenStatesResponse out;
  out.reserve(request.prompts.size());
  for (const auto& p : request.prompts) out.push_back(mock_states(options_, p, request.layers));
  return out;
}

std::string encode_request_json(const HiddenStatesRequest& request) {
  json j;
  j["prompts"] = request.prompts;
  j["layers"] = request.layers;
  j["want_offsets"] = request.want_offsets;
  return j.dump();
}

HiddenStatesRequest decode_request_json(std::string_view body) {
  try {
    const auto j = json::parse(body);
    HiddenStatesRequest r;
    r.prompts = j.at("prompts").get<std::vector<std::string>>();
    r.layers = j.at("layers").get<std::vector<int>>();
    r.want_offsets = j.value("want_offsets", true);
    return r;
  } catch (const json::exception& e) {
    protocol_error(std::string("bad request body: ") + e.what());
  }
}

std::string encode_response_json(const HiddenStatesResponse& response) {
  json results = json::array();
  for (const auto& s : response) {
    json r;
    r["tokens"] = s.tokens;
    json offsets = json::array();
    for (const auto& [a, b] : s.offsets) offsets.push_back({a, b});
    r["offsets"] = std::move(offsets);
    json states = json::object();
    for (const auto& [layer, vectors] : s.states) states[std::to_string(layer)] = vectors;
    r["states"] = std::move(states);
    results.push_back(std::move(r));
  }
  return json{{"results", std::move(results)}}.dump();
}

HiddenStatesResponse decode_response_json(std::string_view body,
                                          const std::vector<std::string>& prompts,
                                          const std::vector<int>& layers, int num_layers) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    protocol_error(std::string("response is not JSON: ") + e.what());
  }
  HiddenStatesResponse out;
  try {
    const auto& results = j.at("results");
    if (!results.is_array() || results.size() != prompts.size()) {
      protocol_error("expected " + std::to_string(prompts.size()) + " results");
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      PromptStates s;
      s.prompt = prompts[i];
      s.tokens = r.at("tokens").get<std::vector<std::string>>();
      if (r.contains("offsets") && !r.at("offsets").is_null()) {
        for (const auto& o : r.at("offsets")) {
          if (!o.is_array() || o.size() != 2) protocol_error("offset must be [start, end]");
          const auto a = o[0].get<std::int64_t>();
          const auto b = o[1].get<std::int64_t>();
          if (a < 0 || b < 0) protocol_error("negative offset");
          s.offsets.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
        }
      }
      for (const auto& [key, vectors] : r.at("states").items()) {
        int layer = 0;
        try {
          layer = canonical_layer(parse_int(key), num_layers);
        } catch (const Error&) {
          protocol_error("bad layer key '" + key + "'");
        }
        auto& dst = s.states[layer];
        dst.reserve(vectors.size());
        for (const auto& v : vectors) {
          std::vector<float> row;
          row.reserve(v.size());
          for (const auto& x : v) {
            if (!x.is_number()) protocol_error("state component is not a number");
            row.push_back(static_cast<float>(x.get<double>()));
          }
          dst.push_back(std::move(row));
        }
      }
      for (int l : layers) {
        if (!s.states.contains(l)) protocol_error("layer " + std::to_string(l) + " missing");
      }
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    protocol_error(std::string("schema mismatch: ") + e.what());
  }
  return out;
}

std::string encode_info_json(const BackendDescriptor& d) {
  json j{{"model_id", d.model_id}, {"hidden_size", d.hidden_size}, {"num_layers", d.num_layers}};
  if (!d.mask_token.empty()) j["mask_token"] = d.mask_token;
  if (!d.fingerprint.empty()) j["fingerprint"] = d.fingerprint;
  return j.dump();
}

BackendDescriptor decode_info_json(std::string_view body) {
  BackendDescriptor d;
  try {
    const auto j = json::parse(body);
    d.model_id = j.at("model_id").get<std::string>();
    d.hidden_size = j.at("hidden_size").get<int>();
    d.num_layers = j.at("num_layers").get<int>();
    if (j.contains("mask_token") && j["mask_token"].is_string()) {
      d.mask_token = j["mask_token"].get<std::string>();
    }
    // Anything else the server reports is kept verbatim for provenance.
    json extra = j;
    for (const char* k : {"model_id", "hidden_size", "num_layers", "mask_token"}) extra.erase(k);
    if (!extra.empty()) d.fingerprint = extra.dump();
  } catch (const json::exception& e) {
    protocol_error(std::string("bad /info body: ") + e.what());
  }
  if (d.hidden_size <= 0 || d.num_layers <= 0) {
    protocol_error("/info reports non-positive dimensions");
  }
  return d;
}

std::unique_ptr<Backend> open_backend(const std::string& spec,
                                      std::optional<std::chrono::milliseconds> timeout) {
  if (spec.starts_with("http://") || spec.starts_with("https://")) {
    HttpOptions opts;
    opts.url = spec;
    if (timeout) {
      opts.timeout = *timeout;
    } else if (const char* env = std::getenv("PEB_BACKEND_TIMEOUT_SECS")) {
      opts.timeout = std::chrono::seconds(parse_int(env));
    }
    return std::make_unique<HttpBackend>(std::move(opts));
  }
  if (spec == "mock" || spec.starts_with("mock:")) {
    MockOptions opts;
    if (spec.size() > 5) {
      for (auto field : text::split(std::string_view(spec).substr(5), ',')) {
        if (field.empty()) continue;
        const auto eq = field.find('=');
        if (eq == std::string_view::npos) {
          throw Error(Errc::ConfigError, "mock option needs key=value: '" + std::string(field) + "'");
        }
        const auto key = field.substr(0, eq);
        const auto value = field.substr(eq + 1);
        if (key == "seed") {
          std::uint64_t seed = 0;
          const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
          if (ec != std::errc() || ptr != value.data() + value.size()) {
            throw Error(Errc::ConfigError, "bad mock seed '" + std::string(value) + "'");
          }
          opts.seed = seed;
        } else if (key == "dim") {
          opts.hidden_size = parse_int(value);
        } else if (key == "layers") {
          opts.num_layers = parse_int(value);
        } else if (key == "model") {
          opts.model_id = std::string(value);
        } else if (key == "mask") {
          opts.mask_token = std::string(value);
        } else {
          throw Error(Errc::ConfigError, "unknown mock option '" + std::string(key) + "'");
        }
      }
    }
    return std::make_unique<MockBackend>(std::move(opts));
  }
  throw Error(Errc::ConfigError, "unrecognized backend '" + spec + "'");
}

}  // namespace peb

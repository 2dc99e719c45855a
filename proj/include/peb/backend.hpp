#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace peb {

struct BackendDescriptor {
  enum class Kind { Http, Mock };
  Kind kind = Kind::Mock;
  std::string endpoint;  // http only
  std::string model_id;
  int hidden_size = 0;
  int num_layers = 0;
  // Text the tokenizer emits for a mask token; empty for models without one.
  std::string mask_token;
  // Free-form provenance reported by the server (library versions and so on).
  std::string fingerprint;

  bool mask_capable() const { return !mask_token.empty(); }
};

struct HiddenStatesRequest {
  std::vector<std::string> prompts;
  std::vector<int> layers;  // negative counts from the end, -1 = last
  bool want_offsets = true;
};

using Span = std::pair<std::size_t, std::size_t>;  // [start, end) in bytes

// Hidden states for one rendered prompt. Vectors are 32-bit floats as they
// travel on the wire; metrics widen them when computing.
struct PromptStates {
  std::string prompt;
  std::vector<std::string> tokens;
  std::vector<Span> offsets;
  // Keyed by canonical (negative) layer index.
  std::map<int, std::vector<std::vector<float>>> states;

  const std::vector<std::vector<float>>* layer(int index) const {
    const auto it = states.find(index);
    return it == states.end() ? nullptr : &it->second;
  }
};

using HiddenStatesResponse = std::vector<PromptStates>;

// Maps a layer index onto its negative form. Positive p addresses layer p
// counted from the first, i.e. p - num_layers. Throws LayerOutOfRange.
int canonical_layer(int layer, int num_layers);

// Throws ProtocolError/NonFiniteValues if the per-prompt invariants fail:
// equal token/offset/vector counts (offsets may be absent when not required), offsets non-decreasing within the prompt,
// vectors of hidden_size finite floats.
void validate_states(const PromptStates& states, int hidden_size, bool require_offsets = true);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual HiddenStatesResponse fetch_hidden_states(const HiddenStatesRequest& request) = 0;
};

// Deterministic stand-in for a model. Prompts are split on whitespace, with
// every occurrence of the mask token text split out as its own piece. Each
// vector is a unit-norm pure function of (seed, layer, token index, token
// text): an FNV-1a digest of those fields seeds a splitmix64 stream whose
// outputs become uniform values in [-1, 1), which are then L2-normalized.
std::vector<std::pair<std::string, Span>> mock_tokenize(std::string_view prompt,
                                                        std::string_view mask_token);

std::vector<float> mock_vector(std::uint64_t seed, int layer, std::size_t token_index,
                               std::string_view token, int hidden_size);

struct MockOptions {
  std::uint64_t seed = 0;
  int hidden_size = 32;
  int num_layers = 4;
  std::string model_id = "mock";
  std::string mask_token = "[MASK]";
};

PromptStates mock_states(const MockOptions& options, std::string_view prompt,
                         const std::vector<int>& layers);

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockOptions options);
  const BackendDescriptor& descriptor() const override { return descriptor_; }
  HiddenStatesResponse fetch_hidden_states(const HiddenStatesRequest& request) override;

 private:
  MockOptions options_;
  BackendDescriptor descriptor_;
};

struct HttpOptions {
  std::string url;  // scheme://host:port
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};
  int max_in_flight = 4;
  std::size_t batch_size = 16;
};

// Client for the hidden-states sidecar. Connects on construction by calling
// GET /info. Safe for concurrent use; at most max_in_flight requests are
// outstanding at once.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpOptions options);
  ~HttpBackend() override;

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  HiddenStatesResponse fetch_hidden_states(const HiddenStatesRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  BackendDescriptor descriptor_;
};

// Wire codec, shared by the client and test servers.
std::string encode_request_json(const HiddenStatesRequest& request);
HiddenStatesRequest decode_request_json(std::string_view body);
std::string encode_response_json(const HiddenStatesResponse& response);
// Prompts are not on the wire; they are copied from the request.
HiddenStatesResponse decode_response_json(std::string_view body,
                                          const std::vector<std::string>& prompts,
                                          const std::vector<int>& layers, int num_layers);
std::string encode_info_json(const BackendDescriptor& descriptor);
BackendDescriptor decode_info_json(std::string_view body);

// "mock", "mock:seed=7,dim=64,layers=6,mask=[MASK]" or an http(s) URL.
std::unique_ptr<Backend> open_backend(const std::string& spec,
                                      std::optional<std::chrono::milliseconds> timeout = {});

}  // namespace peb

#include <gtest/gtest.h>

#include <cmath>

#include "fake_sidecar.hpp"
#include "peb/backend.hpp"
#include "peb/error.hpp"

using namespace peb;

namespace {

template <typename Fn>
Errc error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::ConfigError;
}

HttpOptions fast(const std::string& url) {
  HttpOptions o;
  o.url = url;
  o.timeout = std::chrono::seconds(5);
  o.backoff = std::chrono::milliseconds(5);
  return o;
}

}  // namespace

TEST(CanonicalLayer, Indexing) {
  EXPECT_EQ(canonical_layer(-1, 4), -1);
  EXPECT_EQ(canonical_layer(-4, 4), -4);
  EXPECT_EQ(canonical_layer(0, 4), -4);
  EXPECT_EQ(canonical_layer(3, 4), -1);
  EXPECT_EQ(error_of([] { canonical_layer(-5, 4); }), Errc::LayerOutOfRange);
  EXPECT_EQ(error_of([] { canonical_layer(4, 4); }), Errc::LayerOutOfRange);
}

TEST(MockBackend, TokenizesOnWhitespaceAndMasks) {
  const auto toks = mock_tokenize("  ab  c[MASK][MASK] !", "[MASK]");
  ASSERT_EQ(toks.size(), 5u);
  EXPECT_EQ(toks[0].first, "ab");
  EXPECT_EQ(toks[0].second, (Span{2, 4}));
  EXPECT_EQ(toks[1].first, "c");
  EXPECT_EQ(toks[2].first, "[MASK]");
  EXPECT_EQ(toks[2].second, (Span{7, 13}));
  EXPECT_EQ(toks[3].second, (Span{13, 19}));
  EXPECT_EQ(toks[4].first, "!");
}

TEST(MockBackend, DeterministicAndSeedSensitive) {
  MockOptions a;
  a.seed = 1;
  MockOptions b = a;
  b.seed = 2;
  const auto s1 = mock_states(a, "ab", {-1});
  const auto s2 = mock_states(a, "ab", {-1});
  const auto s3 = mock_states(b, "ab", {-1});
  EXPECT_EQ(s1.states, s2.states);
  EXPECT_NE(s1.states, s3.states);
  EXPECT_EQ(s1.tokens, std::vector<std::string>{"ab"});
}

TEST(MockBackend, LengthContractAndUnitNorm) {
  MockOptions o;
  o.hidden_size = 16;
  const auto s = mock_states(o, "one two three four", {-1, -2, 1});
  EXPECT_EQ(s.tokens.size(), 4u);
  EXPECT_EQ(s.states.size(), 3u);  // -1, -2 and 1 == -3
  for (const auto& [layer, vectors] : s.states) {
    ASSERT_EQ(vectors.size(), 4u);
    for (const auto& v : vectors) {
      double n2 = 0;
      for (float x : v) n2 += static_cast<double>(x) * x;
      EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-6);
    }
  }
  EXPECT_NE(s.states.at(-1), s.states.at(-2));
  EXPECT_NO_THROW(validate_states(s, 16));
}

TEST(MockBackend, LayerOutOfRange) {
  MockBackend backend({});
  const int L = backend.descriptor().num_layers;
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"ab"}, {-(L + 1)}, true}); }), Errc::LayerOutOfRange);
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"ab"}, {}, true}); }), Errc::LayerOutOfRange);
}

TEST(MockBackend, BatchEqualsSingles) {
  MockBackend backend({});
  std::vector<std::string> prompts{"a b c", "d e", "[MASK] f", "g"};
  const auto batch = backend.fetch_hidden_states({prompts, {-1, -2}, true});
  ASSERT_EQ(batch.size(), prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto single = backend.fetch_hidden_states({{prompts[i]}, {-1, -2}, true});
    EXPECT_EQ(single[0].states, batch[i].states);
    EXPECT_EQ(single[0].tokens, batch[i].tokens);
    EXPECT_EQ(single[0].offsets, batch[i].offsets);
  }
}

TEST(MockBackend, ResponseInvariantsProperty) {
  std::mt19937_64 rng(41);
  const std::string alphabet = "ab [MASK]\t.\"";
  MockOptions o;
  o.hidden_size = 8;
  for (int trial = 0; trial < 200; ++trial) {
    std::string prompt;
    const auto n = rng() % 30;
    for (std::size_t i = 0; i < n; ++i) prompt += alphabet[rng() % alphabet.size()];
    const auto s = mock_states(o, prompt, {-1});
    EXPECT_NO_THROW(validate_states(s, 8)) << prompt;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      EXPECT_EQ(prompt.substr(s.offsets[i].first, s.offsets[i].second - s.offsets[i].first), s.tokens[i]);
    }
  }
}

TEST(ValidateStates, RejectsBrokenResponses) {
  MockOptions o;
  o.hidden_size = 4;
  auto s = mock_states(o, "a b", {-1});
  auto bad = s;
  bad.offsets.pop_back();
  EXPECT_EQ(error_of([&] { validate_states(bad, 4); }), Errc::ProtocolError);
  bad = s;
  bad.offsets[1] = {0, 1};
  bad.offsets[0] = {2, 3};
  EXPECT_EQ(error_of([&] { validate_states(bad, 4); }), Errc::ProtocolError);
  bad = s;
  bad.offsets[1] = {2, 99};
  EXPECT_EQ(error_of([&] { validate_states(bad, 4); }), Errc::ProtocolError);
  bad = s;
  bad.states[-1][0][0] = std::nanf("");
  EXPECT_EQ(error_of([&] { validate_states(bad, 4); }), Errc::NonFiniteValues);
  EXPECT_EQ(error_of([&] { validate_states(s, 5); }), Errc::ProtocolError);
}

TEST(WireCodec, ResponseRoundTripIsBitExact) {
  MockOptions o;
  o.hidden_size = 12;
  HiddenStatesResponse r{mock_states(o, "x y z", {-1, -3}), mock_states(o, "w", {-1, -3})};
  const auto decoded = decode_response_json(encode_response_json(r), {"x y z", "w"}, {-1, -3}, 4);
  ASSERT_EQ(decoded.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(decoded[i].states, r[i].states);
    EXPECT_EQ(decoded[i].offsets, r[i].offsets);
    EXPECT_EQ(decoded[i].tokens, r[i].tokens);
  }
}

TEST(WireCodec, SchemaMismatches) {
  EXPECT_EQ(error_of([] { decode_response_json("not json", {"a"}, {-1}, 4); }), Errc::ProtocolError);
  EXPECT_EQ(error_of([] { decode_response_json(R"({"results": []})", {"a"}, {-1}, 4); }), Errc::ProtocolError);
  EXPECT_EQ(error_of([] {
              decode_response_json(R"({"results": [{"tokens": ["a"], "offsets": [[0,1]], "states": {}}]})",
                                   {"a"}, {-1}, 4);
            }),
            Errc::ProtocolError);
  EXPECT_EQ(error_of([] {
              decode_response_json(
                  R"({"results": [{"tokens": ["a"], "offsets": [[0,1]], "states": {"-1": [["x"]]}}]})", {"a"},
                  {-1}, 4);
            }),
            Errc::ProtocolError);
  EXPECT_EQ(error_of([] { decode_info_json(R"({"model_id": "m", "hidden_size": 0, "num_layers": 2})"); }),
            Errc::ProtocolError);
}

TEST(OpenBackend, Specs) {
  auto b = open_backend("mock:seed=9,dim=7,layers=3,model=tiny,mask=<mask>");
  EXPECT_EQ(b->descriptor().hidden_size, 7);
  EXPECT_EQ(b->descriptor().num_layers, 3);
  EXPECT_EQ(b->descriptor().model_id, "tiny");
  EXPECT_EQ(b->descriptor().mask_token, "<mask>");
  EXPECT_EQ(error_of([] { open_backend("mock:bogus=1"); }), Errc::ConfigError);
  EXPECT_EQ(error_of([] { open_backend("ftp://x"); }), Errc::ConfigError);
}

TEST(HttpBackend, InfoDimensionsComeFromServer) {
  MockOptions o;
  o.hidden_size = 24;
  o.num_layers = 6;
  o.model_id = "fake-lm";
  test::FakeSidecar sidecar(o);
  HttpBackend backend(fast(sidecar.url()));
  EXPECT_EQ(backend.descriptor().hidden_size, 24);
  EXPECT_EQ(backend.descriptor().num_layers, 6);
  EXPECT_EQ(backend.descriptor().model_id, "fake-lm");
  EXPECT_EQ(backend.descriptor().mask_token, "[MASK]");
  EXPECT_EQ(backend.descriptor().kind, BackendDescriptor::Kind::Http);
}

TEST(HttpBackend, MatchesMockAndPreservesOrder) {
  MockOptions o;
  o.hidden_size = 16;
  test::FakeSidecar sidecar(o);
  auto opts = fast(sidecar.url());
  opts.batch_size = 3;
  opts.max_in_flight = 3;
  HttpBackend http(opts);
  MockBackend mock(o);

  std::vector<std::string> prompts;
  for (int i = 0; i < 20; ++i) prompts.push_back("prompt number " + std::to_string(i) + " [MASK] .");
  const auto remote = http.fetch_hidden_states({prompts, {-1, 0}, true});
  const auto local = mock.fetch_hidden_states({prompts, {-1, 0}, true});
  ASSERT_EQ(remote.size(), prompts.size());
  EXPECT_LE(sidecar.max_batch_seen.load(), 3u);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    EXPECT_EQ(remote[i].prompt, prompts[i]);
    EXPECT_EQ(remote[i].tokens, local[i].tokens);
    EXPECT_EQ(remote[i].offsets, local[i].offsets);
    ASSERT_EQ(remote[i].states.size(), 2u);
    for (const auto& [layer, vectors] : local[i].states) {
      const auto& rv = remote[i].states.at(layer);
      for (std::size_t t = 0; t < vectors.size(); ++t) {
        for (std::size_t k = 0; k < vectors[t].size(); ++k) EXPECT_NEAR(rv[t][k], vectors[t][k], 1e-5);
      }
    }
  }
  // one batch of N equals N batches of one
  for (std::size_t i = 0; i < 3; ++i) {
    const auto single = http.fetch_hidden_states({{prompts[i]}, {-1, 0}, true});
    EXPECT_EQ(single[0].states, remote[i].states);
  }
}

TEST(HttpBackend, RetriesWhileModelLoads) {
  test::FakeSidecar sidecar({});
  sidecar.loading_responses = 2;
  HttpBackend backend(fast(sidecar.url()));
  EXPECT_EQ(sidecar.info_calls.load(), 3);
  sidecar.loading_responses = 1;
  EXPECT_EQ(backend.fetch_hidden_states({{"a b"}, {-1}, true}).size(), 1u);
}

TEST(HttpBackend, GivesUpAfterRetries) {
  test::FakeSidecar sidecar({});
  sidecar.loading_responses = 10;
  EXPECT_EQ(error_of([&] { HttpBackend backend(fast(sidecar.url())); }), Errc::ConnectFailed);
  EXPECT_EQ(sidecar.info_calls.load(), 4);
}

TEST(HttpBackend, ConnectFailed) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto opts = fast("http://127.0.0.1:" + std::to_string(port));
  opts.max_retries = 1;
  opts.timeout = std::chrono::milliseconds(500);
  EXPECT_EQ(error_of([&] { HttpBackend backend(opts); }), Errc::ConnectFailed);
}

TEST(HttpBackend, ServerSideErrors) {
  test::FakeSidecar sidecar({});
  HttpBackend backend(fast(sidecar.url()));
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"a"}, {-99}, true}); }), Errc::LayerOutOfRange);

  sidecar.overflow_values = true;
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"a"}, {-1}, true}); }), Errc::NonFiniteValues);
  sidecar.overflow_values = false;

  sidecar.drop_offsets = true;
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"a"}, {-1}, true}); }), Errc::ProtocolError);
  EXPECT_NO_THROW(backend.fetch_hidden_states({{"a"}, {-1}, false}));
  sidecar.drop_offsets = false;

  sidecar.wrong_result_count = true;
  EXPECT_EQ(error_of([&] { backend.fetch_hidden_states({{"a"}, {-1}, true}); }), Errc::ProtocolError);
}

TEST(HttpBackend, ConcurrentCallers) {
  test::FakeSidecar sidecar({});
  auto opts = fast(sidecar.url());
  opts.max_in_flight = 2;
  HttpBackend backend(opts);
  MockBackend mock({});
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&, t] {
      const std::vector<std::string> prompts{"thread " + std::to_string(t), "x y"};
      const auto r = backend.fetch_hidden_states({prompts, {-1}, true});
      const auto m = mock.fetch_hidden_states({prompts, {-1}, true});
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (r[i].states != m[i].states) ++mismatches;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(mismatches.load(), 0);
}

#include <atomic>
#include <chrono>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <httplib.h>

#include "test_util.hpp"
#include "ufid/remote.hpp"
#include "ufid/wire.hpp"

using namespace ufid;
using namespace std::chrono_literals;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(UFID_SOURCE_DIR) + "/tests/fixtures/" + name, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// In-process model server on an ephemeral port.
class FakeServer {
 public:
  FakeServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Noise inputs come back clamped; prompts come back as a flat image whose
// value encodes the prompt length.
std::string echo_generate(const std::string& body) {
  const auto req = wire::decode_generate_request(body);
  wire::GenerateResponse resp;
  resp.model_id = "echo";
  for (const auto& q : req.inputs) {
    if (q.mode() == QueryMode::unconditional) {
      std::vector<float> d(q.noise().data().begin(), q.noise().data().end());
      for (auto& x : d) x = std::clamp(x, 0.0f, 1.0f);
      resp.images.emplace_back(q.noise().shape(), ImageKind::pixel, std::move(d));
    } else {
      resp.images.push_back(Image::filled({2, 2, 3}, ImageKind::pixel, float(q.prompt().size()) / 100.0f));
    }
  }
  return wire::encode_generate_response(resp);
}

// A port that was just released, so connects are refused.
int dead_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

RemoteOptions fast_options() {
  RemoteOptions o;
  o.initial_backoff = 10ms;
  o.connect_timeout = 2s;
  o.read_timeout = 5s;
  return o;
}

}  // namespace

TEST(WireFixtures, UnconditionalRequestRoundTripsByteExactly) {
  const std::string bytes = fixture("generate_request_unconditional.json");
  const auto req = wire::decode_generate_request(bytes);
  EXPECT_EQ(req.mode, QueryMode::unconditional);
  ASSERT_EQ(req.inputs.size(), 1u);
  EXPECT_EQ(req.inputs[0].id(), "in/0");
  EXPECT_EQ(req.inputs[0].noise().data()[0], 0.5f);
  EXPECT_EQ(req.seed, 7u);
  EXPECT_FALSE(req.num_inference_steps);
  EXPECT_EQ(wire::encode_generate_request(req), bytes);
}

TEST(WireFixtures, ConditionalRequestRoundTripsByteExactly) {
  const std::string bytes = fixture("generate_request_conditional.json");
  const auto req = wire::decode_generate_request(bytes);
  ASSERT_EQ(req.inputs.size(), 2u);
  EXPECT_EQ(req.inputs[1].prompt(), "Iron Man");
  EXPECT_EQ(req.num_inference_steps, 50);
  EXPECT_EQ(wire::encode_generate_request(req), bytes);
}

TEST(WireFixtures, ResponsesRoundTripByteExactly) {
  const std::string gen = fixture("generate_response.json");
  const auto resp = wire::decode_generate_response(gen);
  ASSERT_EQ(resp.images.size(), 1u);
  EXPECT_EQ(resp.images[0], Image(Shape{1, 1, 3}, ImageKind::pixel, {0.0f, 0.5f, 1.0f}));
  EXPECT_EQ(resp.model_id, "fake-sd");
  EXPECT_EQ(wire::encode_generate_response(resp), gen);

  const std::string emb = fixture("embed_response.json");
  const auto e = wire::decode_embed_response(emb);
  EXPECT_EQ(e.embeddings, (std::vector<std::vector<double>>{{0.6, 0.8}, {1.0, 0.0}}));
  EXPECT_EQ(wire::encode_embed_response(e), emb);
}

TEST(WireFixtures, EmbedRequestMatchesFixture) {
  const std::vector<Image> images{Image(Shape{1, 1, 3}, ImageKind::pixel, {0.0f, 0.5f, 1.0f})};
  const std::vector<std::string> texts{"a cat"};
  EXPECT_EQ(wire::encode_embed_request(images, texts), fixture("embed_request.json"));
}

TEST(Wire, MalformedRequestsAreProtocolErrors) {
  const char* bad[] = {
      "not json",
      "[]",
      R"({"inputs":[]})",
      R"({"mode":"sideways","inputs":[]})",
      R"({"mode":"unconditional"})",
      R"({"mode":"unconditional","inputs":[{"prompt":"x"}]})",
      R"({"mode":"conditional","inputs":[{"image":{"shape":[1,1,1],"kind":"noise","data_b64":"AAAAPw=="}}]})",
      R"({"mode":"conditional","inputs":[{"prompt":""}]})",
      R"({"mode":"unconditional","inputs":[{"image":{"shape":[1,1,1],"kind":"pixel","data_b64":"AAAAPw=="}}]})",
      R"({"mode":"unconditional","inputs":[{"image":{"shape":[1,1,2],"kind":"noise","data_b64":"AAAAPw=="}}]})",
      R"({"mode":"unconditional","inputs":[{"image":{"shape":[1,1],"kind":"noise","data_b64":"AAAAPw=="}}]})",
      R"({"mode":"unconditional","inputs":[{"image":{"shape":[1,1,1],"kind":"noise","data_b64":"!!"}}]})",
      R"({"mode":"conditional","inputs":[{"prompt":"x"}],"seed":-1})",
      R"({"mode":"conditional","inputs":[{"prompt":"x"}],"num_inference_steps":"many"})",
  };
  for (const char* body : bad) {
    SCOPED_TRACE(body);
    EXPECT_UFID_ERROR(wire::decode_generate_request(body), ErrorCode::protocol);
  }
  EXPECT_UFID_ERROR(wire::decode_generate_response(R"({"images":[]})"), ErrorCode::protocol);
  EXPECT_UFID_ERROR(wire::decode_generate_response(fixture("generate_request_unconditional.json")), ErrorCode::protocol);
  EXPECT_UFID_ERROR(wire::decode_embed_response(R"({"embeddings":[["a"]],"encoder_id":"x"})"), ErrorCode::protocol);
}

TEST(Wire, EncodeRejectsMixedModes) {
  wire::GenerateRequest req;
  req.mode = QueryMode::conditional;
  req.inputs.push_back(Query::unconditional("u", Image::filled({1, 1, 1}, ImageKind::noise, 0.f)));
  EXPECT_UFID_ERROR(wire::encode_generate_request(req), ErrorCode::mode_mismatch);
}

TEST(Endpoint, SplitsOriginAndPrefix) {
  const auto a = parse_endpoint("http://host:8080/models/sd/");
  EXPECT_EQ(a.origin, "http://host:8080");
  EXPECT_EQ(a.path_prefix, "/models/sd");
  EXPECT_EQ(parse_endpoint("http://host").path_prefix, "");
  EXPECT_UFID_ERROR(parse_endpoint("host:8080"), ErrorCode::config);
}

TEST(RemoteBackend, GeneratesInInputOrderAndSendsWireBytes) {
  FakeServer fake;
  std::string seen;
  std::mutex m;
  fake.server().Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(m);
      seen = req.body;
    }
    res.set_content(echo_generate(req.body), "application/json");
  });
  const RemoteBackend backend(fake.url(), fast_options(), 7);
  const std::vector<Query> qs{Query::unconditional("a", Image::filled({1, 1, 1}, ImageKind::noise, 0.5f))};
  const auto imgs = backend.generate(qs);
  ASSERT_EQ(imgs.size(), 1u);
  EXPECT_EQ(imgs[0].kind(), ImageKind::pixel);
  EXPECT_EQ(seen, fixture("generate_request_unconditional.json"));

  const std::vector<Query> prompts{Query::conditional("p0", "a"), Query::conditional("p1", "abcd"),
                                   Query::conditional("p2", "ab")};
  const auto out = RemoteBackend(fake.url(), fast_options()).generate(prompts);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_FLOAT_EQ(out[0].data()[0], 0.01f);
  EXPECT_FLOAT_EQ(out[1].data()[0], 0.04f);
  EXPECT_FLOAT_EQ(out[2].data()[0], 0.02f);
  EXPECT_NO_THROW(backend.health_check());
  EXPECT_TRUE(backend.generate({}).empty());
}

TEST(RemoteBackend, PathPrefixIsHonoured) {
  FakeServer fake;
  fake.server().Post("/m/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    res.set_content(echo_generate(req.body), "application/json");
  });
  const std::vector<Query> qs{Query::conditional("p", "cat")};
  EXPECT_EQ(RemoteBackend(fake.url() + "/m/", fast_options()).generate(qs).size(), 1u);
}

TEST(RemoteBackend, TransportFailureRetriesThreeTimesWithBackoff) {
  const RemoteBackend backend("http://127.0.0.1:" + std::to_string(dead_port()), fast_options());
  const std::vector<Query> qs{Query::conditional("p", "cat")};
  const auto start = std::chrono::steady_clock::now();
  try {
    backend.generate(qs);
    FAIL() << "expected a transport error";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
    EXPECT_EQ(e.attempts(), 3);
  }
  // Backoff 10 ms then 20 ms between the three attempts.
  EXPECT_GE(std::chrono::steady_clock::now() - start, 30ms);
  EXPECT_UFID_ERROR(backend.health_check(), ErrorCode::transport);
}

TEST(RemoteBackend, HttpErrorIsNotRetried) {
  FakeServer fake;
  std::atomic<int> hits{0};
  fake.server().Post("/v1/generate", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
    res.set_content(wire::encode_error("out of memory"), "application/json");
  });
  const std::vector<Query> qs{Query::conditional("p", "cat")};
  try {
    RemoteBackend(fake.url(), fast_options()).generate(qs);
    FAIL() << "expected a protocol error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::protocol);
    EXPECT_NE(std::string(e.what()).find("out of memory"), std::string::npos);
  }
  EXPECT_EQ(hits.load(), 1);
}

TEST(RemoteBackend, WrongImageCountOrKindIsProtocolError) {
  FakeServer fake;
  fake.server().Post("/v1/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(fixture("generate_response.json"), "application/json");
  });
  fake.server().Post("/bad/v1/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"images":[{"shape":[1,1,1],"kind":"noise","data_b64":"AAAAPw=="}],"model_id":"x"})",
                    "application/json");
  });
  const std::vector<Query> two{Query::conditional("a", "cat"), Query::conditional("b", "dog")};
  EXPECT_UFID_ERROR(RemoteBackend(fake.url(), fast_options()).generate(two), ErrorCode::protocol);
  const std::vector<Query> one{Query::conditional("a", "cat")};
  EXPECT_UFID_ERROR(RemoteBackend(fake.url() + "/bad", fast_options()).generate(one), ErrorCode::protocol);
}

TEST(RemoteBackend, InFlightRequestsAreBounded) {
  FakeServer fake;
  std::atomic<int> in_flight{0}, peak{0};
  fake.server().Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(40ms);
    --in_flight;
    res.set_content(echo_generate(req.body), "application/json");
  });
  auto opts = fast_options();
  opts.max_in_flight = 2;
  const RemoteBackend backend(fake.url(), opts);
  std::vector<std::future<std::size_t>> futures;
  for (int i = 0; i < 8; ++i)
    futures.push_back(std::async(std::launch::async, [&backend, i] {
      const std::vector<Query> qs{Query::conditional("p" + std::to_string(i), "cat")};
      return backend.generate(qs).size();
    }));
  for (auto& f : futures) EXPECT_EQ(f.get(), 1u);
  EXPECT_LE(peak.load(), 2);
  EXPECT_GE(peak.load(), 1);
}

TEST(RemoteEncoder, MixedRequestReturnsNormalizedEmbeddings) {
  FakeServer fake;
  std::string seen;
  fake.server().Post("/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.body;
    res.set_content(R"({"embeddings":[[3.0,4.0],[0.0,2.0]],"encoder_id":"clip-fake"})", "application/json");
  });
  const RemoteEncoder enc(fake.url(), fast_options());
  const std::vector<Image> images{Image(Shape{1, 1, 3}, ImageKind::pixel, {0.0f, 0.5f, 1.0f})};
  const std::vector<std::string> texts{"a cat"};
  const auto out = enc.call(images, texts);
  EXPECT_EQ(seen, fixture("embed_request.json"));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].values[0], 0.6);
  EXPECT_DOUBLE_EQ(out[0].values[1], 0.8);
  EXPECT_EQ(out[1].values, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(out[0].encoder_id, "clip-fake");
  EXPECT_TRUE(enc.supports_text());
  EXPECT_UFID_ERROR(enc.embed_images(images), ErrorCode::protocol);  // count mismatch: 2 for 1
}

TEST(RemoteEncoder, ZeroEmbeddingAndTransportErrors) {
  FakeServer fake;
  fake.server().Post("/v1/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embeddings":[[0.0,0.0]],"encoder_id":"z"})", "application/json");
  });
  const std::vector<Image> images{Image::filled({1, 1, 3}, ImageKind::pixel, 0.2f)};
  EXPECT_UFID_ERROR(RemoteEncoder(fake.url(), fast_options()).embed_images(images), ErrorCode::zero_vector);
  const RemoteEncoder down("http://127.0.0.1:" + std::to_string(dead_port()), fast_options());
  EXPECT_UFID_ERROR(down.embed_images(images), ErrorCode::transport);
}

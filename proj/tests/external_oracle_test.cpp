#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "smoothcert/certify.hpp"
#include "smoothcert/external_oracle.hpp"

extern char** environ;

using namespace smoothcert;
namespace fs = std::filesystem;

namespace {

class ExternalOracleTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("smoothcert_ext_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    std::mt19937_64 gen(99);
    std::normal_distribution<double> g;
    model_ = LinearModel{5, 16, std::vector<double>(5 * 16), std::vector<double>(5)};
    for (auto& w : model_.weights) w = g(gen);
    for (auto& b : model_.bias) b = 0.3 * g(gen);
    model_path_ = (dir_ / "model.txt").string();
    write_linear_model(model_, model_path_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  OracleEndpoint exec(const std::string& fault = "none") const {
    auto e = OracleEndpoint::exec(std::string(TEST_ADAPTER_PATH) + " --model " + model_path_ +
                                  " --fault " + fault);
    e.handshake_timeout = std::chrono::seconds(10);
    return e;
  }

  std::vector<double> random_rows(std::size_t rows, std::uint64_t seed) const {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(rows * model_.dim);
    for (auto& x : v) x = u(gen);
    return v;
  }

  fs::path dir_;
  LinearModel model_;
  std::string model_path_;
};

// Runs the adapter as a TCP server for the lifetime of the object.
class TcpAdapter {
 public:
  TcpAdapter(const std::string& model, const fs::path& dir) {
    const std::string port_file = (dir / "port").string();
    std::vector<std::string> args = {TEST_ADAPTER_PATH, "--model", model, "--tcp", "0",
                                     "--port-file", port_file};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    if (::posix_spawn(&pid_, TEST_ADAPTER_PATH, nullptr, nullptr, argv.data(), environ) != 0) {
      throw std::runtime_error("spawn failed");
    }
    for (int i = 0; i < 500 && !fs::exists(port_file); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    std::ifstream(port_file) >> port_;
    if (port_ == 0) throw std::runtime_error("adapter did not publish a port");
  }
  ~TcpAdapter() {
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
  std::uint16_t port() const { return port_; }

 private:
  pid_t pid_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace

TEST(WireFormat, RequestRoundTripsDoublesExactly) {
  const std::vector<double> data = {0.1, -1e-300, 1.0 / 3.0, 12345.678901234567, 0.0};
  const auto line = encode_classify_request(7, 1, 5, data);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["type"], "classify");
  EXPECT_EQ(j["id"], 7);
  EXPECT_EQ(j["count"], 1);
  EXPECT_EQ(j["dim"], 5);
  EXPECT_EQ(j["data"].get<std::vector<double>>(), data);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_THROW(encode_classify_request(1, 1, 1, std::vector<double>{NAN}), DomainError);
}

TEST(WireFormat, DecodeValidatesResponses) {
  EXPECT_EQ(decode_labels_response(R"({"type":"labels","id":3,"labels":[0,2,1]})", 3, 3, 3),
            (std::vector<int>{0, 2, 1}));
  EXPECT_THROW(decode_labels_response(R"({"type":"labels","id":4,"labels":[0,2,1]})", 3, 3, 3),
               MalformedResponse);
  EXPECT_THROW(decode_labels_response(R"({"type":"labels","id":3,"labels":[0,2]})", 3, 3, 3),
               MalformedResponse);
  EXPECT_THROW(decode_labels_response(R"({"type":"labels","id":3,"labels":[0,3,1]})", 3, 3, 3),
               MalformedResponse);
  EXPECT_THROW(decode_labels_response(R"({"type":"labels","id":3,"labels":[0,-1,1]})", 3, 3, 3),
               MalformedResponse);
  EXPECT_THROW(decode_labels_response("{not json", 3, 3, 3), MalformedResponse);
  EXPECT_THROW(decode_labels_response(R"({"type":"error","id":3,"msg":"boom"})", 3, 3, 3),
               RemoteError);
}

TEST_F(ExternalOracleTest, LabelsMatchInProcessModel) {
  ExternalOracle oracle(exec());
  EXPECT_EQ(oracle.num_classes(), 5u);
  EXPECT_EQ(oracle.input_dim(), 16u);
  const auto rows = random_rows(256, 1);
  EXPECT_EQ(oracle.classify_batch(rows), linear_classify_batch(model_, rows));
  // A second request on the same connection.
  const auto more = random_rows(31, 2);
  EXPECT_EQ(oracle.classify_batch(more), linear_classify_batch(model_, more));
}

TEST_F(ExternalOracleTest, TcpTransportMatchesInProcessModel) {
  TcpAdapter server(model_path_, dir_);
  auto oracle = external_oracle(OracleEndpoint::tcp("127.0.0.1", server.port()));
  const auto rows = random_rows(256, 3);
  EXPECT_EQ(oracle->classify_batch(rows), linear_classify_batch(model_, rows));
  auto handle = oracle->worker_handle();
  EXPECT_NE(handle.get(), oracle.get());
  std::vector<std::uint64_t> counts(5, 0);
  handle->count_votes(rows, counts);
  std::vector<std::uint64_t> want(5, 0);
  for (int l : linear_classify_batch(model_, rows)) ++want[static_cast<std::size_t>(l)];
  EXPECT_EQ(counts, want);
}

TEST_F(ExternalOracleTest, WorkerHandlesAreIndependentProcesses) {
  auto oracle = external_oracle(exec());
  auto a = oracle->worker_handle();
  auto b = oracle->worker_handle();
  const auto rows = random_rows(64, 4);
  const auto want = linear_classify_batch(model_, rows);
  std::vector<int> got_a, got_b;
  std::thread ta([&] { got_a = static_cast<ExternalOracle&>(*a).classify_batch(rows); });
  std::thread tb([&] { got_b = static_cast<ExternalOracle&>(*b).classify_batch(rows); });
  ta.join();
  tb.join();
  EXPECT_EQ(got_a, want);
  EXPECT_EQ(got_b, want);
}

TEST_F(ExternalOracleTest, CertificatesMatchInProcessOracle) {
  const Shape3 s{1, 4, 4};
  std::vector<double> px(16);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = 0.05 * static_cast<double>(i % 7) + 0.3;
  const auto x = ImageTensor::clean(s, px);
  const auto idx = make_diagonal_partition(4, 4);
  CertifyParams p;
  p.sigma = 0.25;
  p.n0 = 50;
  p.n = 3000;
  p.batch_size = 400;
  OraclePool local(std::make_shared<LinearOracle>(model_), 3);
  OraclePool remote(external_oracle(exec()), 3);
  const auto want = certify_drs(local, local, x, idx, p, RandomStream(5, 9));
  const auto got = certify_drs(remote, remote, x, idx, p, RandomStream(5, 9));
  EXPECT_EQ(got, want);
  EXPECT_EQ(certify_rs(remote, x, p, RandomStream(6)), certify_rs(local, x, p, RandomStream(6)));
}

TEST_F(ExternalOracleTest, HandshakeMismatchIsReported) {
  auto e = exec("wrong-dim");
  e.expected_dim = 16;
  EXPECT_THROW(ExternalOracle{e}, HandshakeMismatch);
  auto c = exec();
  c.expected_classes = 4;
  EXPECT_THROW(ExternalOracle{c}, HandshakeMismatch);
}

TEST_F(ExternalOracleTest, DeclaredDimensionMismatchSurfacesInSampling) {
  ExternalOracle oracle(exec("wrong-dim"));
  EXPECT_EQ(oracle.input_dim(), 17u);
  // The adapter rejects rows of the size it declared.
  EXPECT_THROW(oracle.classify_batch(std::vector<double>(17, 0.0)), RemoteError);
}

TEST_F(ExternalOracleTest, MalformedResponsesAreReported) {
  const auto rows = random_rows(4, 5);
  for (const char* fault : {"garbage", "wrong-id", "short", "truncate"}) {
    ExternalOracle oracle(exec(fault));
    EXPECT_THROW(oracle.classify_batch(rows), MalformedResponse) << fault;
  }
}

TEST_F(ExternalOracleTest, RemoteErrorCarriesMessage) {
  ExternalOracle oracle(exec("error"));
  try {
    oracle.classify_batch(random_rows(2, 6));
    FAIL() << "expected RemoteError";
  } catch (const RemoteError& e) {
    EXPECT_NE(std::string(e.what()).find("model exploded"), std::string::npos);
  }
}

TEST_F(ExternalOracleTest, StalledAdapterTimesOut) {
  auto e = exec("stall");
  e.request_timeout = std::chrono::milliseconds(300);
  ExternalOracle oracle(e);
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(oracle.classify_batch(random_rows(2, 7)), OracleTimeout);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST_F(ExternalOracleTest, DeadAdapterIsTransportError) {
  ExternalOracle oracle(exec("crash"));
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_THROW(oracle.classify_batch(random_rows(2, 8)), TransportError);
  EXPECT_THROW(ExternalOracle{OracleEndpoint::exec("exit 0")}, TransportError);
  EXPECT_THROW(ExternalOracle{OracleEndpoint::exec("/nonexistent/adapter")}, TransportError);
}

TEST_F(ExternalOracleTest, UnreachableTcpEndpointIsTransportError) {
  // Bind an ephemeral port, then close it so nothing listens there.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  EXPECT_THROW(ExternalOracle{OracleEndpoint::tcp("127.0.0.1", ntohs(addr.sin_port))},
               TransportError);
  EXPECT_THROW(ExternalOracle{OracleEndpoint::tcp("no-such-host.invalid", 1)}, TransportError);
}

TEST_F(ExternalOracleTest, WorkerFailureRethrownFromSampling) {
  OraclePool pool(external_oracle(exec("error")), 4);
  const auto x = ImageTensor::filled({1, 4, 4}, 0.5);
  CertifyParams p;
  p.sigma = 0.25;
  p.n0 = 10;
  p.n = 100;
  EXPECT_THROW(certify_rs(pool, x, p, RandomStream(1)), RemoteError);
}

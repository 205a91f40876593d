#include "cmr/remote.hpp"

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <future>
#include <thread>
#include <unordered_map>

#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include "cmr/error.hpp"

namespace cmr {

using nlohmann::json;

namespace {

std::string errno_message(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Connected stream socket; optionally owns a child process on the far end.
class SocketChannel final : public LineChannel {
 public:
  SocketChannel(int fd, pid_t child) : fd_(fd), child_(child) {}

  ~SocketChannel() override {
    shutdown();
    ::close(fd_);
    reap();
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf.push_back('\n');
    std::lock_guard lock(write_mu_);
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = ::send(fd_, buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_message("send"));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line() override {
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (shut_) return std::nullopt;
        throw TransportError(errno_message("recv"));
      }
      if (n == 0) {
        if (buffer_.empty()) return std::nullopt;
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void shutdown() override {
    if (!shut_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void reap() {
    if (child_ <= 0) return;
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(child_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, nullptr, 0);
  }

  int fd_;
  pid_t child_;
  std::atomic<bool> shut_{false};
  std::mutex write_mu_;
  std::string buffer_;
};

std::unique_ptr<LineChannel> connect_tcp(const std::string& hostport) {
  const auto colon = hostport.rfind(':');
  if (colon == std::string::npos) throw ValidationError("tcp address needs HOST:PORT");
  const std::string host = hostport.substr(0, colon);
  const std::string port = hostport.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw TransportError(std::string("getaddrinfo: ") + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + hostport);
  return std::make_unique<SocketChannel>(fd, -1);
}

std::unique_ptr<LineChannel> connect_unix(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof addr.sun_path) throw ValidationError("unix socket path too long");
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(errno_message("socket"));
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw TransportError(errno_message(("connect " + path).c_str()));
  }
  return std::make_unique<SocketChannel>(fd, -1);
}

std::unique_ptr<LineChannel> spawn(const std::string& command) {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) throw TransportError(errno_message("socketpair"));
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw TransportError(errno_message("fork"));
  }
  if (pid == 0) {
    ::dup2(sv[1], STDIN_FILENO);
    ::dup2(sv[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(sv[1]);
  return std::make_unique<SocketChannel>(sv[0], pid);
}

}  // namespace

std::unique_ptr<LineChannel> connect_channel(std::string_view address) {
  const auto colon = address.find(':');
  if (colon == std::string_view::npos) throw ValidationError("generator address needs a scheme: " + std::string(address));
  const std::string_view scheme = address.substr(0, colon);
  const std::string rest(address.substr(colon + 1));
  if (scheme == "tcp") return connect_tcp(rest);
  if (scheme == "unix") return connect_unix(rest);
  if (scheme == "exec") return spawn(rest);
  throw ValidationError("unknown generator address scheme '" + std::string(scheme) + "'");
}

json make_request(std::string_view id, const SerializedInstance& instance, const GenerationParams& params) {
  return {{"id", id},
          {"input", instance.input_text},
          {"max_length", params.max_length},
          {"num_beams", params.num_beams},
          {"return_logprobs", params.return_logprobs}};
}

ModelOutput parse_response(const json& response, const GenerationParams& params) {
  if (!response.is_object()) throw MalformedResponseError("response is not an object");
  if (auto it = response.find("error"); it != response.end())
    throw RemoteError("generator error: " + (it->is_string() ? it->get<std::string>() : it->dump()));
  ModelOutput out;
  auto output = response.find("output");
  if (output == response.end() || !output->is_string()) throw MalformedResponseError("response lacks 'output'");
  out.text = output->get<std::string>();
  auto truncated = response.find("truncated");
  if (truncated == response.end() || !truncated->is_boolean())
    throw MalformedResponseError("response lacks boolean 'truncated'");
  out.truncated = truncated->get<bool>();
  try {
    if (auto it = response.find("tokens"); it != response.end() && !it->is_null())
      out.tokens = it->get<std::vector<std::string>>();
    if (auto it = response.find("logprobs"); it != response.end() && !it->is_null())
      out.logprobs = it->get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("bad tokens/logprobs: ") + e.what());
  }
  if (out.tokens && out.logprobs && out.tokens->size() != out.logprobs->size())
    throw MalformedResponseError("tokens and logprobs differ in length");
  const auto budget = static_cast<std::size_t>(params.max_length);
  if ((out.tokens && out.tokens->size() > budget) || (out.logprobs && out.logprobs->size() > budget))
    throw MalformedResponseError("response exceeds max_length");
  return out;
}

struct RemoteGenerator::Slots {
  explicit Slots(std::size_t n) : free(n) {}
  void acquire() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return free > 0; });
    --free;
  }
  void release() {
    {
      std::lock_guard lock(mu);
      ++free;
    }
    cv.notify_one();
  }
  std::mutex mu;
  std::condition_variable cv;
  std::size_t free;
};

struct RemoteGenerator::Session {
  std::unique_ptr<LineChannel> channel;
  std::mutex mu;
  std::unordered_map<std::string, std::pair<std::promise<ModelOutput>, GenerationParams>> pending;
  bool broken = false;
  std::atomic<std::size_t> unrouted{0};
  std::thread reader;

  void fail_all(const std::string& why) {
    std::lock_guard lock(mu);
    broken = true;
    for (auto& [id, entry] : pending) entry.first.set_exception(std::make_exception_ptr(TransportError(why)));
    pending.clear();
  }

  void dispatch(const std::string& line) {
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      ++unrouted;
      return;
    }
    auto id = j.is_object() ? j.find("id") : j.end();
    if (!j.is_object() || id == j.end() || !id->is_string()) {
      ++unrouted;
      return;
    }
    std::lock_guard lock(mu);
    auto it = pending.find(id->get<std::string>());
    if (it == pending.end()) {
      ++unrouted;
      return;
    }
    try {
      it->second.first.set_value(parse_response(j, it->second.second));
    } catch (...) {
      it->second.first.set_exception(std::current_exception());
    }
    pending.erase(it);
  }

  void run() {
    try {
      while (auto line = channel->read_line()) {
        if (!line->empty()) dispatch(*line);
      }
      fail_all("generator closed the connection");
    } catch (const std::exception& e) {
      fail_all(e.what());
    }
  }
};

RemoteGenerator::RemoteGenerator(std::string address, RemoteOptions opts)
    : RemoteGenerator([address] { return connect_channel(address); }, opts) {}

RemoteGenerator::RemoteGenerator(Connector connect, RemoteOptions opts)
    : connect_(std::move(connect)), opts_(opts), slots_(std::make_unique<Slots>(std::max<std::size_t>(1, opts.max_in_flight))) {
  if (opts_.max_in_flight == 0) opts_.max_in_flight = 1;
}

RemoteGenerator::~RemoteGenerator() {
  std::lock_guard lock(mu_);
  if (session_) {
    session_->channel->shutdown();
    if (session_->reader.joinable()) session_->reader.join();
  }
}

std::size_t RemoteGenerator::unrouted_lines() const {
  std::lock_guard lock(mu_);
  return session_ ? session_->unrouted.load() : 0;
}

std::shared_ptr<RemoteGenerator::Session> RemoteGenerator::session() {
  // Caller holds mu_.
  if (session_) {
    bool broken;
    {
      std::lock_guard lock(session_->mu);
      broken = session_->broken;
    }
    if (!broken) return session_;
    session_->channel->shutdown();
    if (session_->reader.joinable()) session_->reader.join();
    session_.reset();
  }
  auto s = std::make_shared<Session>();
  s->channel = connect_();
  s->reader = std::thread([raw = s.get()] { raw->run(); });
  session_ = s;
  return s;
}

ModelOutput RemoteGenerator::generate(const SerializedInstance& instance, const GenerationParams& params) {
  params.validate();
  slots_->acquire();
  struct Release {
    Slots* s;
    ~Release() { s->release(); }
  } release{slots_.get()};

  std::shared_ptr<Session> s;
  std::string id;
  {
    std::lock_guard lock(mu_);
    s = session();
    id = "req-" + std::to_string(next_id_++);
  }
  std::future<ModelOutput> result;
  {
    std::lock_guard lock(s->mu);
    if (s->broken) throw TransportError("generator connection lost");
    auto& entry = s->pending[id];
    entry.second = params;
    result = entry.first.get_future();
  }
  try {
    s->channel->write_line(make_request(id, instance, params).dump());
  } catch (const TransportError&) {
    {
      std::lock_guard lock(s->mu);
      s->pending.erase(id);
    }
    s->channel->shutdown();
    throw;
  }
  if (result.wait_for(opts_.timeout) != std::future_status::ready) {
    std::lock_guard lock(s->mu);
    s->pending.erase(id);
    throw TransportError("generator timed out on " + id);
  }
  return result.get();
}

}  // namespace cmr

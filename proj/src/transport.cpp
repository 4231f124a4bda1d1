#include "evodt/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>

#include "evodt/errors.hpp"
#include "evodt/wire.hpp"

namespace evodt::dist {

namespace {

using Clock = std::chrono::steady_clock;

class InProcMaster final : public MasterLink {
 public:
  InProcMaster(std::shared_ptr<BlockingQueue<Inbound>> inbox,
               std::vector<std::shared_ptr<BlockingQueue<Bytes>>> outboxes)
      : inbox_(std::move(inbox)), outboxes_(std::move(outboxes)) {}

  ~InProcMaster() override {
    for (auto& q : outboxes_) q->close();
  }

  std::size_t worker_count() const override { return outboxes_.size(); }

  void send(std::size_t worker, const Bytes& frame) override { outboxes_.at(worker)->push(frame); }

  std::optional<Inbound> receive(Millis timeout) override { return inbox_->pop(timeout); }

 private:
  std::shared_ptr<BlockingQueue<Inbound>> inbox_;
  std::vector<std::shared_ptr<BlockingQueue<Bytes>>> outboxes_;
};

class InProcWorker final : public WorkerLink {
 public:
  InProcWorker(std::size_t index, std::shared_ptr<BlockingQueue<Inbound>> master_inbox,
               std::shared_ptr<BlockingQueue<Bytes>> inbox)
      : index_(index), master_inbox_(std::move(master_inbox)), inbox_(std::move(inbox)) {}

  void send(const Bytes& frame) override { master_inbox_->push({index_, frame}); }

  std::optional<Bytes> receive(Millis timeout) override {
    auto v = inbox_->pop(timeout);
    if (!v && inbox_->closed()) throw TransportError("master link closed");
    return v;
  }

 private:
  std::size_t index_;
  std::shared_ptr<BlockingQueue<Inbound>> master_inbox_;
  std::shared_ptr<BlockingQueue<Bytes>> inbox_;
};

[[noreturn]] void fail(const std::string& what) { throw TransportError(what + ": " + std::strerror(errno)); }

// Waits until fd is readable. false on timeout.
bool wait_readable(int fd, Millis timeout) {
  pollfd p{fd, POLLIN, 0};
  while (true) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) fail("poll");
    return rc > 0;
  }
}

// false on orderly EOF before any byte was read.
bool read_exact(int fd, std::uint8_t* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t rc = ::recv(fd, dst + got, n - got, 0);
    if (rc == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail("recv");
    }
    got += static_cast<std::size_t>(rc);
  }
  return true;
}

std::optional<Bytes> read_frame(int fd) {
  Bytes frame(4);
  if (!read_exact(fd, frame.data(), 4)) return std::nullopt;
  const auto len = wire::peek_length(frame);
  frame.resize(4 + *len);
  if (*len > 0 && !read_exact(fd, frame.data() + 4, *len)) throw TransportError("connection closed mid-frame");
  return frame;
}

void write_all(int fd, const Bytes& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t rc = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail("send");
    }
    sent += static_cast<std::size_t>(rc);
  }
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw TransportError("cannot resolve host '" + e.host + "'");
  }
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(e.port);
  return addr;
}

class TcpMaster final : public MasterLink {
 public:
  explicit TcpMaster(std::vector<int> fds) : fds_(std::move(fds)), send_mu_(fds_.size()) {
    for (std::size_t i = 0; i < fds_.size(); ++i) {
      readers_.emplace_back([this, i] { read_loop(i); });
    }
  }

  ~TcpMaster() override {
    for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    for (auto& t : readers_) t.join();
    for (int fd : fds_) ::close(fd);
  }

  std::size_t worker_count() const override { return fds_.size(); }

  void send(std::size_t worker, const Bytes& frame) override {
    std::lock_guard lock(send_mu_.at(worker));
    write_all(fds_[worker], frame);
  }

  std::optional<Inbound> receive(Millis timeout) override { return inbox_.pop(timeout); }

 private:
  void read_loop(std::size_t i) {
    try {
      while (auto frame = read_frame(fds_[i])) inbox_.push({i, std::move(*frame)});
    } catch (const std::exception&) {
      // Connection gone; the master notices through its timeout.
    }
  }

  std::vector<int> fds_;
  std::vector<std::mutex> send_mu_;
  std::vector<std::thread> readers_;
  BlockingQueue<Inbound> inbox_;
};

class TcpWorker final : public WorkerLink {
 public:
  explicit TcpWorker(int fd) : fd_(fd) {}
  ~TcpWorker() override { ::close(fd_); }

  void send(const Bytes& frame) override { write_all(fd_, frame); }

  std::optional<Bytes> receive(Millis timeout) override {
    if (!wait_readable(fd_, timeout)) return std::nullopt;
    auto frame = read_frame(fd_);
    if (!frame) throw TransportError("master closed the connection");
    return frame;
  }

 private:
  int fd_;
};

}  // namespace

InProcLinks make_inproc_links(std::size_t n_workers) {
  auto inbox = std::make_shared<BlockingQueue<Inbound>>();
  std::vector<std::shared_ptr<BlockingQueue<Bytes>>> outboxes;
  InProcLinks links;
  for (std::size_t i = 0; i < n_workers; ++i) {
    auto q = std::make_shared<BlockingQueue<Bytes>>();
    outboxes.push_back(q);
    links.workers.push_back(std::make_unique<InProcWorker>(i, inbox, q));
  }
  links.master = std::make_unique<InProcMaster>(inbox, std::move(outboxes));
  return links;
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("address '" + text + "' is not host:port");
  }
  Endpoint e;
  e.host = text.substr(0, colon);
  try {
    const unsigned long p = std::stoul(text.substr(colon + 1));
    if (p > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw ConfigError("address '" + text + "' has an invalid port");
  }
  return e;
}

TcpListener::TcpListener(const Endpoint& where) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) fail("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(where);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd_);
    fail("bind " + where.host + ":" + std::to_string(where.port));
  }
  if (::listen(fd_, 64) < 0) {
    ::close(fd_);
    fail("listen");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<MasterLink> TcpListener::accept_workers(std::size_t n, const std::string& config_text,
                                                         Millis timeout) {
  const auto deadline = Clock::now() + timeout;
  auto remaining = [&] {
    return std::max(Millis(0), std::chrono::duration_cast<Millis>(deadline - Clock::now()));
  };
  std::vector<std::pair<std::uint32_t, int>> registered;
  try {
    while (registered.size() < n) {
      if (!wait_readable(fd_, remaining())) throw TransportError("timed out waiting for workers to connect");
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) {
        if (errno == EINTR) continue;
        fail("accept");
      }
      set_nodelay(c);
      registered.emplace_back(0, c);
      if (!wait_readable(c, remaining())) throw TransportError("worker connected but never registered");
      auto frame = read_frame(c);
      if (!frame) throw TransportError("worker closed before registering");
      const auto msg = wire::decode(*frame);
      const auto* hello = std::get_if<wire::Hello>(&msg);
      if (hello == nullptr) throw TransportError("expected Hello from worker");
      if (hello->protocol_version != wire::kProtocolVersion) {
        throw TransportError("worker speaks protocol version " + std::to_string(hello->protocol_version));
      }
      registered.back().first = hello->worker_id;
      write_all(c, wire::encode(wire::Welcome{config_text}));
    }
  } catch (...) {
    for (auto& [id, fd] : registered) ::close(fd);
    throw;
  }
  std::stable_sort(registered.begin(), registered.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> fds;
  for (auto& [id, fd] : registered) fds.push_back(fd);
  return std::make_unique<TcpMaster>(std::move(fds));
}

TcpConnection tcp_connect(const Endpoint& master, std::uint32_t worker_id, Millis timeout) {
  const auto deadline = Clock::now() + timeout;
  const sockaddr_in addr = resolve(master);
  int fd = -1;
  while (true) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) fail("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
    ::close(fd);
    if (Clock::now() >= deadline) fail("connect " + master.host + ":" + std::to_string(master.port));
    std::this_thread::sleep_for(Millis(50));
  }
  set_nodelay(fd);
  auto link = std::make_unique<TcpWorker>(fd);
  link->send(wire::encode(wire::Hello{worker_id, wire::kProtocolVersion}));
  const auto left = std::max(Millis(1), std::chrono::duration_cast<Millis>(deadline - Clock::now()));
  auto frame = link->receive(left);
  if (!frame) throw TransportError("master did not answer the registration");
  const auto msg = wire::decode(*frame);
  const auto* welcome = std::get_if<wire::Welcome>(&msg);
  if (welcome == nullptr) throw TransportError("expected Welcome from master");
  return {std::move(link), welcome->config_text};
}

}  // namespace evodt::dist

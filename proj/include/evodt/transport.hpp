#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "evodt/bytes.hpp"

namespace evodt::dist {

using Millis = std::chrono::milliseconds;

struct Inbound {
  std::size_t worker = 0;  // master-side index of the sender
  Bytes frame;
};

// Master end: one logical connection per worker, one shared inbox.
class MasterLink {
 public:
  virtual ~MasterLink() = default;

  virtual std::size_t worker_count() const = 0;
  virtual void send(std::size_t worker, const Bytes& frame) = 0;
  /// nullopt on timeout.
  virtual std::optional<Inbound> receive(Millis timeout) = 0;
};

class WorkerLink {
 public:
  virtual ~WorkerLink() = default;

  virtual void send(const Bytes& frame) = 0;
  /// nullopt on timeout; throws TransportError once the master is gone.
  virtual std::optional<Bytes> receive(Millis timeout) = 0;
};

template <typename T>
class BlockingQueue {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  std::optional<T> pop(Millis timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; })) return std::nullopt;
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

struct InProcLinks {
  std::unique_ptr<MasterLink> master;
  std::vector<std::unique_ptr<WorkerLink>> workers;
};

InProcLinks make_inproc_links(std::size_t n_workers);

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port"; throws ConfigError when malformed.
Endpoint parse_endpoint(const std::string& text);

// Listening socket on the master. Registration handshake: each worker
// sends Hello{id, version 1}; the master answers with Welcome{config}.
class TcpListener {
 public:
  explicit TcpListener(const Endpoint& where);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }

  /// Blocks until n workers registered; workers are ordered by id.
  std::unique_ptr<MasterLink> accept_workers(std::size_t n, const std::string& config_text, Millis timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

struct TcpConnection {
  std::unique_ptr<WorkerLink> link;
  std::string config_text;
};

/// Connects (retrying until timeout), registers and returns the master's config.
TcpConnection tcp_connect(const Endpoint& master, std::uint32_t worker_id, Millis timeout);

}  // namespace evodt::dist

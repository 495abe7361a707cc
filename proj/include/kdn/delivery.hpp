// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kdn/codec.hpp"
#include "kdn/protocol.hpp"
#include "kdn/store.hpp"

namespace kdn {

struct LinkModel {
  double bandwidth = 1e9;  // bytes per second, > 0
  double latency = 0.0;    // seconds per frame, >= 0

  void validate() const;
};

// latency + bytes / bandwidth.
double simulate_transfer(const LinkModel& link, std::uint64_t bytes);

// Server side of one connection. Bytes go in through feed(); every response
// frame is handed to the sink as one encoded buffer. Decode errors and
// malformed requests produce an ERR frame and the session keeps going; one
// ERR is sent per run of unparseable bytes.
class ServerSession {
 public:
  using Sink = std::function<void(const Bytes& frame)>;

  ServerSession(Store& store, Sink sink);

  void feed(ByteView data);

  std::size_t requests_served() const { return served_; }
  std::size_t errors_sent() const { return errors_; }

 private:
  void handle(const Frame& frame);
  void send(const Frame& frame);
  void send_error(WireError code, const std::string& message);

  Store& store_;
  Sink sink_;
  FrameDecoder decoder_;
  bool in_garbage_ = false;
  std::size_t served_ = 0;
  std::size_t errors_ = 0;
};

// Bidirectional byte stream.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send(ByteView data) = 0;
  // Blocks until some bytes arrive. Returns 0 once the peer has closed.
  virtual std::size_t recv(std::span<std::uint8_t> buf) = 0;
};

// In-process connection to a ServerSession; responses are queued on send.
class LoopbackConnection : public Connection {
 public:
  explicit LoopbackConnection(Store& store);
  void send(ByteView data) override;
  std::size_t recv(std::span<std::uint8_t> buf) override;

 protected:
  virtual void deliver(const Bytes& frame);
  std::deque<std::uint8_t> inbox_;

 private:
  ServerSession session_;
};

// Deterministic virtual clock: each frame in either direction occupies the
// link for latency + bytes / bandwidth, one after another.
class SimulatedLink : public LoopbackConnection {
 public:
  SimulatedLink(Store& store, LinkModel link);
  void send(ByteView data) override;

  double now() const { return now_; }
  std::size_t frames() const { return frames_; }
  std::uint64_t bytes() const { return bytes_; }

 protected:
  void deliver(const Bytes& frame) override;

 private:
  void occupy(std::size_t n);

  LinkModel link_;
  double now_ = 0.0;
  std::size_t frames_ = 0;
  std::uint64_t bytes_ = 0;
};

struct FetchedChunk {
  CompressedChunk chunk;
  KvCache cache;  // decompressed; chain chunks rebased to consecutive positions
};

struct FetchResult {
  std::vector<FetchedChunk> chunks;  // in the server's (token) order
  TokenSeq miss_suffix;
  std::vector<ChunkKey> missing_keys;
  std::size_t frames = 0;              // frames received
  std::uint64_t chunk_bytes = 0;       // serialized chunk bytes received
  std::size_t retries = 0;
};

// Client side. Decompression runs on a worker thread so chunk i can be
// decompressed while chunk i+1 is still arriving. A checksum failure
// (frame or chunk) repeats the request once before failing.
class Client {
 public:
  explicit Client(Connection& conn) : conn_(conn) {}

  FetchResult fetch(std::uint64_t model_id, std::span<const Token> tokens, KeyMode mode);
  FetchResult fetch_keys(std::span<const ChunkKey> keys);

 private:
  FetchResult exchange(const Frame& request, bool rebase_chain);
  FetchResult attempt(const Frame& request, bool rebase_chain);

  Connection& conn_;
};

// POSIX TCP transport.
class TcpConnection : public Connection {
 public:
  explicit TcpConnection(int fd) : fd_(fd) {}
  ~TcpConnection() override;
  TcpConnection(const TcpConnection&) = delete;
  TcpConnection& operator=(const TcpConnection&) = delete;

  static std::unique_ptr<TcpConnection> connect(const std::string& host, std::uint16_t port);

  void send(ByteView data) override;
  std::size_t recv(std::span<std::uint8_t> buf) override;

 private:
  int fd_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  // Paces responses to this many bytes per second when set.
  std::optional<double> bandwidth;
};

// Listens and serves each connection on its own thread until stop() is
// called or the stop flag is raised.
class TcpServer {
 public:
  TcpServer(Store& store, ServeOptions options);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  // Accept loop; returns after stop().
  void run();
  void stop();

 private:
  void serve_connection(int fd);

  Store& store_;
  ServeOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> active_{0};
};

}  // namespace kdn

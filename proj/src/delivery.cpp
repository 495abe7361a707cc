// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdn/delivery.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <mutex>
#include <thread>

#include "kdn/error.hpp"

namespace kdn {
namespace {

struct ChecksumFailure {
  std::string message;
};

Error sys_error(const std::string& what) {
  return Error(ErrorCode::kIo, what + ": " + std::strerror(errno));
}

// Decompresses chunks in arrival order on a worker thread.
class Decompressor {
 public:
  Decompressor() : worker_([this] { loop(); }) {}
  ~Decompressor() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  void push(CompressedChunk chunk) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(chunk));
    }
    cv_.notify_all();
  }

  // Waits for the queue to drain and returns the decompressed chunks.
  std::vector<FetchedChunk> finish() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
    if (error_) std::rethrow_exception(error_);
    return std::move(done_);
  }

 private:
  void loop() {
    std::unique_lock lock(mu_);
    for (;;) {
      cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
      if (queue_.empty()) return;
      auto chunk = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      lock.unlock();
      std::optional<FetchedChunk> out;
      std::exception_ptr err;
      try {
        auto cache = decompress_cache(chunk);
        out = FetchedChunk{std::move(chunk), std::move(cache)};
      } catch (...) {
        err = std::current_exception();
      }
      lock.lock();
      busy_ = false;
      if (out) done_.push_back(std::move(*out));
      if (err && !error_) error_ = err;
      idle_cv_.notify_all();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<CompressedChunk> queue_;
  std::vector<FetchedChunk> done_;
  std::exception_ptr error_;
  bool busy_ = false;
  bool closed_ = false;
  std::thread worker_;
};

}  // namespace

void LinkModel::validate() const {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw Error(ErrorCode::kInvalidArgument, "link bandwidth must be a positive number");
  }
  if (!(latency >= 0.0) || !std::isfinite(latency)) {
    throw Error(ErrorCode::kInvalidArgument, "link latency must be >= 0");
  }
}

double simulate_transfer(const LinkModel& link, std::uint64_t bytes) {
  link.validate();
  return link.latency + static_cast<double>(bytes) / link.bandwidth;
}

// ---------------------------------------------------------------- server

ServerSession::ServerSession(Store& store, Sink sink) : store_(store), sink_(std::move(sink)) {}

void ServerSession::feed(ByteView data) {
  decoder_.feed(data);
  while (auto res = decoder_.next()) {
    if (res->status == DecodeStatus::kError) {
      if (!in_garbage_) send_error(res->error, res->message);
      // Unknown types are complete frames, so the next bytes start fresh.
      in_garbage_ = res->error != WireError::kUnknownType;
      continue;
    }
    in_garbage_ = false;
    handle(res->frame);
  }
}

void ServerSession::send(const Frame& frame) { sink_(encode_frame(frame)); }

void ServerSession::send_error(WireError code, const std::string& message) {
  ++errors_;
  send(make_frame(ErrMessage{static_cast<std::uint16_t>(code), message}));
}

void ServerSession::handle(const Frame& frame) {
  try {
    switch (frame.type) {
      case FrameType::kReqTokens: {
        const auto req = parse_tokens_request(frame.payload);
        auto found = store_.retrieve_text(req.model_id, req.tokens, req.mode);
        for (const auto& hit : found.hits) send({FrameType::kChunk, serialize_chunk(hit.chunk)});
        send(make_frame(EndMessage{std::move(found.miss_suffix), std::move(found.missing_keys)}));
        break;
      }
      case FrameType::kReqKeys: {
        const auto req = parse_keys_request(frame.payload);
        EndMessage end;
        for (const auto& key : req.keys) {
          if (auto chunk = store_.get(key)) {
            send({FrameType::kChunk, serialize_chunk(*chunk)});
          } else {
            end.missing_keys.push_back(key);
          }
        }
        send(make_frame(end));
        break;
      }
      default:
        send_error(WireError::kMalformedRequest,
                   std::string(to_string(frame.type)) + " is not a request frame");
        return;
    }
    ++served_;
  } catch (const Error& e) {
    send_error(e.code() == ErrorCode::kProtocol ? WireError::kMalformedRequest
                                                : WireError::kInternal,
               e.what());
  }
}

// ---------------------------------------------------------------- loopback

LoopbackConnection::LoopbackConnection(Store& store)
    : session_(store, [this](const Bytes& frame) { deliver(frame); }) {}

void LoopbackConnection::send(ByteView data) { session_.feed(data); }

void LoopbackConnection::deliver(const Bytes& frame) {
  inbox_.insert(inbox_.end(), frame.begin(), frame.end());
}

std::size_t LoopbackConnection::recv(std::span<std::uint8_t> buf) {
  const std::size_t n = std::min(buf.size(), inbox_.size());
  std::copy_n(inbox_.begin(), n, buf.begin());
  inbox_.erase(inbox_.begin(), inbox_.begin() + static_cast<std::ptrdiff_t>(n));
  return n;
}

SimulatedLink::SimulatedLink(Store& store, LinkModel link) : LoopbackConnection(store), link_(link) {
  link_.validate();
}

void SimulatedLink::occupy(std::size_t n) {
  now_ += simulate_transfer(link_, n);
  ++frames_;
  bytes_ += n;
}

void SimulatedLink::send(ByteView data) {
  occupy(data.size());
  LoopbackConnection::send(data);
}

void SimulatedLink::deliver(const Bytes& frame) {
  occupy(frame.size());
  LoopbackConnection::deliver(frame);
}

// ---------------------------------------------------------------- client

FetchResult Client::fetch(std::uint64_t model_id, std::span<const Token> tokens, KeyMode mode) {
  TokensRequest req{model_id, mode, TokenSeq(tokens.begin(), tokens.end())};
  return exchange(make_frame(req), mode == KeyMode::kChain);
}

FetchResult Client::fetch_keys(std::span<const ChunkKey> keys) {
  KeysRequest req{std::vector<ChunkKey>(keys.begin(), keys.end())};
  return exchange(make_frame(req), false);
}

FetchResult Client::exchange(const Frame& request, bool rebase_chain) {
  try {
    return attempt(request, rebase_chain);
  } catch (const ChecksumFailure&) {
  }
  try {
    auto out = attempt(request, rebase_chain);
    out.retries = 1;
    return out;
  } catch (const ChecksumFailure& f) {
    throw Error(ErrorCode::kChecksumMismatch, "checksum failure persisted after retry: " + f.message);
  }
}

FetchResult Client::attempt(const Frame& request, bool rebase_chain) {
  conn_.send(encode_frame(request));

  FetchResult out;
  std::optional<std::string> checksum_error;
  FrameDecoder decoder;
  Decompressor worker;
  std::uint8_t buf[65536];
  bool ended = false;
  while (!ended) {
    const std::size_t n = conn_.recv(buf);
    if (n == 0) {
      if (checksum_error) break;
      throw Error(ErrorCode::kIo, "connection closed before END");
    }
    decoder.feed(ByteView(buf, n));
    while (auto res = decoder.next()) {
      if (res->status == DecodeStatus::kError) {
        if (res->error == WireError::kBadCrc) {
          if (!checksum_error) checksum_error = res->message;
          continue;
        }
        if (res->error == WireError::kBadMagic && checksum_error) continue;  // tail of a bad frame
        throw Error(ErrorCode::kProtocol, std::string("response stream: ") + res->message);
      }
      ++out.frames;
      const auto& f = res->frame;
      if (f.type == FrameType::kChunk) {
        out.chunk_bytes += f.payload.size();
        try {
          worker.push(parse_chunk(f.payload));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kChecksumMismatch) throw;
          if (!checksum_error) checksum_error = e.what();
        }
      } else if (f.type == FrameType::kEnd) {
        auto end = parse_end(f.payload);
        out.miss_suffix = std::move(end.miss_suffix);
        out.missing_keys = std::move(end.missing_keys);
        ended = true;
        break;
      } else if (f.type == FrameType::kErr) {
        const auto err = parse_err(f.payload);
        throw Error(ErrorCode::kProtocol, "server error " + std::to_string(err.code) + ": " +
                                              err.message);
      } else {
        throw Error(ErrorCode::kProtocol,
                    std::string("unexpected ") + to_string(f.type) + " frame from server");
      }
    }
  }

  try {
    out.chunks = worker.finish();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kChecksumMismatch) throw;
    if (!checksum_error) checksum_error = e.what();
  }
  if (checksum_error) throw ChecksumFailure{*checksum_error};

  if (rebase_chain) {
    std::uint64_t at = 0;
    for (auto& c : out.chunks) {
      c.cache.set_start_pos(at);
      at += c.cache.n_tokens();
    }
  }
  return out;
}

// ---------------------------------------------------------------- tcp

TcpConnection::~TcpConnection() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpConnection> TcpConnection::connect(const std::string& host,
                                                      std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) {
    throw Error(ErrorCode::kIo, "resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw sys_error("connect " + host + ":" + std::to_string(port));
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  timeval tv{30, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  return std::make_unique<TcpConnection>(fd);
}

void TcpConnection::send(ByteView data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw sys_error("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::size_t TcpConnection::recv(std::span<std::uint8_t> buf) {
  for (;;) {
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      throw Error(ErrorCode::kIo, "recv timed out");
    }
    throw sys_error("recv");
  }
}

TcpServer::TcpServer(Store& store, ServeOptions options)
    : store_(store), options_(std::move(options)) {
  if (options_.bandwidth && !(*options_.bandwidth > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "--bw must be positive");
  }
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw sys_error("socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kInvalidArgument, "bad listen address " + options_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const auto err = sys_error("listen on " + options_.host + ":" + std::to_string(options_.port));
    ::close(listen_fd_);
    throw err;
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
  stop();
  while (active_.load() > 0) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ::close(listen_fd_);
}

void TcpServer::stop() { stopping_ = true; }

void TcpServer::run() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    ++active_;
    std::thread([this, fd] {
      serve_connection(fd);
      --active_;
    }).detach();
  }
}

void TcpServer::serve_connection(int fd) {
  TcpConnection conn(fd);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  ServerSession session(store_, [&](const Bytes& frame) {
    if (options_.bandwidth) {
      std::this_thread::sleep_for(
          std::chrono::duration<double>(static_cast<double>(frame.size()) / *options_.bandwidth));
    }
    conn.send(frame);
  });
  std::uint8_t buf[65536];
  try {
    while (!stopping_) {
      pollfd p{fd, POLLIN, 0};
      const int rc = ::poll(&p, 1, 100);
      if (rc <= 0) continue;
      const std::size_t n = conn.recv(buf);
      if (n == 0) return;
      session.feed(ByteView(buf, n));
    }
  } catch (const Error&) {
    // Peer went away mid-response; nothing left to tell it.
  }
}

}  // namespace kdn

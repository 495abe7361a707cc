// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "kdn/delivery.hpp"
#include "kdn/error.hpp"
#include "kdn/store.hpp"
#include "test_support.hpp"

namespace kdn {
namespace {

using testing::TempDir;

StoreConfig config_at(const std::filesystem::path& root, std::uint32_t chunk = 8) {
  StoreConfig c;
  c.root = root;
  c.chunk_size = chunk;
  c.durable = false;
  c.on_warning = [](const std::string&) {};
  return c;
}

TokenSeq iota_tokens(std::size_t n, Token first = 0) {
  TokenSeq t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Token>((first + i) % 32);
  return t;
}

// Flips one payload byte in the first `count` CHUNK frames it delivers.
class CorruptingLoopback : public LoopbackConnection {
 public:
  CorruptingLoopback(Store& store, int count, bool frame_level)
      : LoopbackConnection(store), remaining_(count), frame_level_(frame_level) {}

 protected:
  void deliver(const Bytes& frame) override {
    if (remaining_ > 0 && frame[4] == static_cast<std::uint8_t>(FrameType::kChunk)) {
      --remaining_;
      Bytes bad = frame;
      if (frame_level_) {
        bad[kFrameHeaderSize + 100] ^= 0x01;
      } else {
        // Rewrite a chunk payload byte and re-seal the frame so only the
        // chunk checksum can notice.
        Frame f{FrameType::kChunk, Bytes(frame.begin() + kFrameHeaderSize, frame.end() - 4)};
        f.payload[kChunkHeaderSize + 3] ^= 0x01;
        bad = encode_frame(f);
      }
      LoopbackConnection::deliver(bad);
      return;
    }
    LoopbackConnection::deliver(frame);
  }

 private:
  int remaining_;
  bool frame_level_;
};

class DeliveryTest : public ::testing::Test {
 protected:
  TempDir dir;
  Store store{config_at(dir.path())};
  Model model{ModelConfig{}};
  std::uint64_t model_id = ModelConfig{}.model_id();
  CodecProfile profile = parse_profile("q8-deflate");
};

TEST(Transfer, Arithmetic) {
  EXPECT_DOUBLE_EQ(simulate_transfer({1e9, 0.0}, 1000000000), 1.0);
  EXPECT_DOUBLE_EQ(simulate_transfer({1e9, 0.25}, 0), 0.25);
  const double gib = 1024.0 * 1024.0 * 1024.0;
  EXPECT_DOUBLE_EQ(simulate_transfer({8 * gib, 0.0}, static_cast<std::uint64_t>(2 * gib)), 0.25);
  EXPECT_THROW(LinkModel({0.0, 0.0}).validate(), Error);
  EXPECT_THROW(LinkModel({1.0, -1.0}).validate(), Error);
}

TEST_F(DeliveryTest, UnstoredTextIsAllMiss) {
  LoopbackConnection conn(store);
  Client client(conn);
  const auto tokens = iota_tokens(20);
  const auto r = client.fetch(model_id, tokens, KeyMode::kChain);
  EXPECT_TRUE(r.chunks.empty());
  EXPECT_EQ(r.miss_suffix, tokens);
  EXPECT_EQ(r.frames, 1u);
}

TEST_F(DeliveryTest, StoredTextArrivesElementExact) {
  const auto tokens = iota_tokens(30, 4);
  store.store_text(model, tokens, KeyMode::kChain, profile);
  LoopbackConnection conn(store);
  Client client(conn);
  const auto r = client.fetch(model_id, tokens, KeyMode::kChain);
  ASSERT_EQ(r.chunks.size(), 4u);
  EXPECT_TRUE(r.miss_suffix.empty());
  EXPECT_EQ(r.frames, 5u);
  const auto local = store.retrieve_text(model_id, tokens, KeyMode::kChain);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < r.chunks.size(); ++i) {
    EXPECT_EQ(r.chunks[i].chunk, local.hits[i].chunk);
    EXPECT_EQ(r.chunks[i].cache, decompress_cache(local.hits[i].chunk));
    EXPECT_EQ(r.chunks[i].cache.start_pos(), offset);
    offset += r.chunks[i].cache.n_tokens();
  }
}

TEST_F(DeliveryTest, PartialHitReportsSuffix) {
  const auto head = iota_tokens(16);
  store.store_text(model, head, KeyMode::kChain, profile);
  TokenSeq query = head;
  for (Token t : {30u, 31u, 29u}) query.push_back(t);
  LoopbackConnection conn(store);
  const auto r = Client(conn).fetch(model_id, query, KeyMode::kChain);
  EXPECT_EQ(r.chunks.size(), 2u);
  EXPECT_EQ(r.miss_suffix, (TokenSeq{30, 31, 29}));
  EXPECT_EQ(r.missing_keys.size(), 1u);
}

TEST_F(DeliveryTest, FetchByKeys) {
  const auto keys = store.store_text(model, iota_tokens(16), KeyMode::kStandalone, profile).keys;
  ChunkKey absent;
  absent.digest[5] = 9;
  absent.mode = KeyMode::kStandalone;
  const std::vector<ChunkKey> ask{keys[1], absent, keys[0]};
  LoopbackConnection conn(store);
  const auto r = Client(conn).fetch_keys(ask);
  ASSERT_EQ(r.chunks.size(), 2u);
  EXPECT_EQ(r.chunks[0].chunk.key, keys[1]);
  EXPECT_EQ(r.chunks[1].chunk.key, keys[0]);
  EXPECT_EQ(r.missing_keys, (std::vector<ChunkKey>{absent}));
}

TEST_F(DeliveryTest, GarbageGetsOneErrorThenRecovers) {
  std::vector<Frame> out;
  ServerSession session(store, [&](const Bytes& b) { out.push_back(decode_frame(b).frame); });
  const Bytes garbage{'n', 'o', 'i', 's', 'e', 0, 1, 2, 'K', 'D'};
  session.feed(garbage);
  session.feed(Bytes{'x', 'y'});
  const auto req = encode_frame(make_frame(TokensRequest{model_id, KeyMode::kChain, {1, 2}}));
  session.feed(req);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].type, FrameType::kErr);
  EXPECT_EQ(parse_err(out[0].payload).code, static_cast<std::uint16_t>(WireError::kBadMagic));
  EXPECT_EQ(out[1].type, FrameType::kEnd);
  EXPECT_EQ(parse_end(out[1].payload).miss_suffix, (TokenSeq{1, 2}));
  EXPECT_EQ(session.errors_sent(), 1u);
  EXPECT_EQ(session.requests_served(), 1u);
}

TEST_F(DeliveryTest, MalformedRequestKeepsConnectionUsable) {
  std::vector<Frame> out;
  ServerSession session(store, [&](const Bytes& b) { out.push_back(decode_frame(b).frame); });
  session.feed(encode_frame(Frame{FrameType::kReqTokens, {1, 2, 3}}));
  session.feed(encode_frame(make_frame(EndMessage{})));  // not a request
  session.feed(encode_frame(make_frame(KeysRequest{})));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(parse_err(out[0].payload).code, static_cast<std::uint16_t>(WireError::kMalformedRequest));
  EXPECT_EQ(parse_err(out[1].payload).code, static_cast<std::uint16_t>(WireError::kMalformedRequest));
  EXPECT_EQ(out[2].type, FrameType::kEnd);
}

TEST_F(DeliveryTest, OutOfVocabularyTokensAreHarmless) {
  // Keys are content hashes; the server need not know the vocabulary.
  LoopbackConnection conn(store);
  const TokenSeq odd{4000000000u, 7};
  const auto r = Client(conn).fetch(model_id, odd, KeyMode::kStandalone);
  EXPECT_EQ(r.miss_suffix, odd);
}

TEST_F(DeliveryTest, ServerErrorSurfacesAsProtocolError) {
  class ErrLoopback : public LoopbackConnection {
   public:
    using LoopbackConnection::LoopbackConnection;
    void send(ByteView) override { deliver(encode_frame(make_frame(ErrMessage{6, "boom"}))); }
  };
  ErrLoopback conn(store);
  try {
    Client(conn).fetch(model_id, iota_tokens(3), KeyMode::kChain);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST_F(DeliveryTest, ChecksumFailureRetriesOnce) {
  const auto tokens = iota_tokens(24);
  store.store_text(model, tokens, KeyMode::kChain, profile);
  for (bool frame_level : {true, false}) {
    CorruptingLoopback conn(store, 1, frame_level);
    const auto r = Client(conn).fetch(model_id, tokens, KeyMode::kChain);
    EXPECT_EQ(r.retries, 1u) << frame_level;
    EXPECT_EQ(r.chunks.size(), 3u);
    EXPECT_TRUE(r.miss_suffix.empty());
  }
}

TEST_F(DeliveryTest, PersistentChecksumFailureFails) {
  const auto tokens = iota_tokens(24);
  store.store_text(model, tokens, KeyMode::kChain, profile);
  for (bool frame_level : {true, false}) {
    CorruptingLoopback conn(store, 100, frame_level);
    try {
      Client(conn).fetch(model_id, tokens, KeyMode::kChain);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kChecksumMismatch);
    }
  }
}

TEST_F(DeliveryTest, SimulatedLinkChargesEveryFrame) {
  const auto tokens = iota_tokens(40);
  store.store_text(model, tokens, KeyMode::kChain, profile);
  const LinkModel link{1e6, 0.002};
  SimulatedLink conn(store, link);
  const auto r = Client(conn).fetch(model_id, tokens, KeyMode::kChain);
  EXPECT_EQ(conn.frames(), r.frames + 1);  // plus the request
  EXPECT_NEAR(conn.now(), static_cast<double>(conn.bytes()) / link.bandwidth + conn.frames() * link.latency, 1e-12);
}

TEST_F(DeliveryTest, FuzzedInputNeverCrashesServer) {
  store.store_text(model, iota_tokens(16), KeyMode::kChain, profile);
  std::size_t frames = 0;
  ServerSession session(store, [&](const Bytes&) { ++frames; });
  std::mt19937_64 rng(77);
  const auto valid = encode_frame(make_frame(TokensRequest{model_id, KeyMode::kChain, iota_tokens(16)}));
  for (int i = 0; i < 2000; ++i) {
    Bytes b = valid;
    for (int e = 0; e < 3; ++e) b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
    if (rng() % 3 == 0) b.resize(rng() % b.size());
    session.feed(b);
  }
  EXPECT_GT(frames, 0u);
  EXPECT_GT(session.errors_sent(), 0u);
  std::vector<Frame> out;
  ServerSession fresh(store, [&](const Bytes& b) { out.push_back(decode_frame(b).frame); });
  fresh.feed(valid);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.back().type, FrameType::kEnd);
}

TEST_F(DeliveryTest, TcpEndToEnd) {
  const auto tokens = iota_tokens(20, 9);
  store.store_text(model, tokens, KeyMode::kChain, profile);
  TcpServer server(store, ServeOptions{});
  std::thread loop([&] { server.run(); });
  {
    auto conn = TcpConnection::connect("127.0.0.1", server.port());
    Client client(*conn);
    const auto r = client.fetch(model_id, tokens, KeyMode::kChain);
    ASSERT_EQ(r.chunks.size(), 3u);
    const auto local = store.retrieve_text(model_id, tokens, KeyMode::kChain);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.chunks[i].chunk, local.hits[i].chunk);
    // Same connection serves a second request.
    EXPECT_EQ(client.fetch(model_id, iota_tokens(3, 1), KeyMode::kChain).miss_suffix.size(), 3u);
  }
  server.stop();
  loop.join();
}

TEST(Tcp, ConnectRefusedIsIoError) {
  try {
    TcpConnection::connect("127.0.0.1", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

}  // namespace
}  // namespace kdn

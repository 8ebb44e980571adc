#pragma once

// Split-inference link. Every message is
//
//   u8 type | u32 length | payload[length]
//
// over one TCP stream. A session is HELLO -> WELCOME | REJECT, then any number
// of FRAME -> ACK | NACK exchanges, then BYE.

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isinv/core/binary_io.hpp"
#include "isinv/harness/is_format.hpp"
#include "isinv/lm/model.hpp"
#include "isinv/lm/tokenizer.hpp"

namespace isinv {

enum class MsgType : std::uint8_t { hello = 1, welcome = 2, reject = 3, frame = 4, ack = 5, nack = 6, bye = 7 };

inline constexpr std::uint16_t kProtocolVersion = 1;

struct SplitServerOptions {
    std::string host = "127.0.0.1";
    /// 0 picks a free port; see SplitServer::port().
    std::uint16_t port = 0;
    std::size_t l_split = 1;
    /// Persist every accepted frame for later offline attacks.
    bool curious = false;
    std::string persist_path;
    /// Stop after this many sessions; 0 serves until stop().
    std::size_t max_sessions = 0;
};

struct ServerStats {
    std::size_t sessions = 0;
    std::size_t frames_accepted = 0;
    std::size_t frames_rejected = 0;
    std::size_t handshakes_rejected = 0;
};

/// Holds layers l_split+1..L. Sessions are served one per connection on
/// their own thread; persisted frames are appended in arrival order.
class SplitServer {
public:
    SplitServer(const TransformerWeights& weights, SplitServerOptions opts);
    ~SplitServer();
    SplitServer(const SplitServer&) = delete;
    SplitServer& operator=(const SplitServer&) = delete;

    std::uint16_t port() const;
    /// Blocks until max_sessions sessions finished or stop() is called.
    void run();
    void stop();

    ServerStats stats() const;
    /// Raw frame bytes persisted in curious mode.
    std::vector<ISRecord> persisted() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct FrameReply {
    bool accepted = false;
    /// Next-token prediction of the full model for accepted frames.
    int next_token = -1;
    std::string error;
};

class SplitClient {
public:
    SplitClient(const std::string& host, std::uint16_t port);
    ~SplitClient();
    SplitClient(const SplitClient&) = delete;
    SplitClient& operator=(const SplitClient&) = delete;

    /// Throws IoError when the server rejects the handshake.
    void handshake(std::size_t l_split, std::size_t d_in, std::uint16_t version = kProtocolVersion);
    FrameReply send_frame(std::span<const std::uint8_t> frame);
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct ClientSession {
    std::vector<Bytes> sent;
    std::vector<FrameReply> replies;
};

/// Computes layer-l_split states of each text locally and sends them.
ClientSession split_client(const std::string& host, std::uint16_t port, std::span<const std::string> texts,
                           const TransformerWeights& weights, const Tokenizer& tok, std::size_t l_split);

}  // namespace isinv

#include "isinv/harness/split.hpp"

#include <boost/asio.hpp>

#include <mutex>
#include <thread>

#include "isinv/core/errors.hpp"
#include "isinv/lm/capture.hpp"

namespace isinv {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

constexpr std::uint32_t kMaxMessage = 256u << 20;

struct Message {
    MsgType type{};
    Bytes payload;
};

void write_msg(tcp::socket& s, MsgType type, std::span<const std::uint8_t> payload) {
    ByteWriter w;
    w.put<std::uint8_t>(static_cast<std::uint8_t>(type));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(payload.size()));
    w.put_bytes(payload);
    asio::write(s, asio::buffer(w.bytes()));
}

Message read_msg(tcp::socket& s) {
    std::uint8_t header[5];
    asio::read(s, asio::buffer(header));
    ByteReader r(header);
    Message m;
    m.type = static_cast<MsgType>(r.get<std::uint8_t>());
    const auto len = r.get<std::uint32_t>();
    if (len > kMaxMessage) throw FormatError("message of " + std::to_string(len) + " bytes exceeds limit");
    m.payload.resize(len);
    asio::read(s, asio::buffer(m.payload));
    return m;
}

Bytes string_payload(const std::string& s) { return Bytes(s.begin(), s.end()); }

int predict_next(const TransformerWeights& w, const Tensor& states, std::size_t from) {
    ad::Tape tape;
    BoundModel m = bind(tape, w);
    ad::Var h = forward_layers(m, tape.constant(states), from, w.config.n_layers);
    const Tensor& logits = lm_logits(m, h).value();
    const auto last = logits.row(logits.rows() - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < last.size(); ++j) {
        if (last[j] > last[best]) best = j;
    }
    return static_cast<int>(best);
}

}  // namespace

struct SplitServer::Impl {
    const TransformerWeights& weights;
    SplitServerOptions opts;
    asio::io_context io;
    tcp::acceptor acceptor;
    std::vector<std::thread> workers;
    mutable std::mutex mu;
    ServerStats stats;
    std::vector<ISRecord> persisted;
    std::size_t started = 0;

    Impl(const TransformerWeights& w, SplitServerOptions o)
        : weights(w), opts(std::move(o)), acceptor(io, tcp::endpoint(asio::ip::make_address(opts.host), opts.port)) {}

    void accept_next() {
        acceptor.async_accept([this](const boost::system::error_code& ec, tcp::socket socket) {
            if (ec) return;
            ++started;
            workers.emplace_back([this, s = std::move(socket)]() mutable { session(std::move(s)); });
            if (opts.max_sessions == 0 || started < opts.max_sessions) accept_next();
        });
    }

    void session(tcp::socket s) {
        try {
            Message hello = read_msg(s);
            if (hello.type != MsgType::hello) throw FormatError("expected HELLO");
            ByteReader r(hello.payload);
            const auto version = r.get<std::uint16_t>();
            const auto l_split = r.get<std::uint16_t>();
            const auto d_in = r.get<std::uint32_t>();
            std::string reason;
            if (version != kProtocolVersion) {
                reason = "protocol version " + std::to_string(version) + " unsupported";
            } else if (l_split != opts.l_split) {
                reason = "split layer " + std::to_string(l_split) + " != " + std::to_string(opts.l_split);
            } else if (d_in != weights.config.d_model) {
                reason = "width " + std::to_string(d_in) + " != " + std::to_string(weights.config.d_model);
            }
            if (!reason.empty()) {
                write_msg(s, MsgType::reject, string_payload(reason));
                std::lock_guard lock(mu);
                ++stats.handshakes_rejected;
                ++stats.sessions;
                return;
            }
            write_msg(s, MsgType::welcome, {});

            for (std::uint32_t index = 0;; ++index) {
                Message m = read_msg(s);
                if (m.type == MsgType::bye) break;
                if (m.type != MsgType::frame) throw FormatError("unexpected message type");
                ByteWriter reply;
                reply.put<std::uint32_t>(index);
                try {
                    ISFrame f = decode_frame(m.payload);
                    if (f.layer != opts.l_split || f.h.cols() != weights.config.d_model) {
                        throw FormatError("frame does not match the negotiated split");
                    }
                    if (f.h.rows() == 0) throw FormatError("empty frame");
                    const int next = predict_next(weights, f.h, opts.l_split);
                    {
                        std::lock_guard lock(mu);
                        ++stats.frames_accepted;
                        if (opts.curious) {
                            persisted.push_back({std::string(), m.payload});
                            if (!opts.persist_path.empty()) export_is(opts.persist_path, persisted);
                        }
                    }
                    reply.put<std::int32_t>(next);
                    write_msg(s, MsgType::ack, reply.bytes());
                } catch (const Error& e) {
                    {
                        std::lock_guard lock(mu);
                        ++stats.frames_rejected;
                    }
                    reply.put_string(e.what());
                    write_msg(s, MsgType::nack, reply.bytes());
                }
            }
        } catch (const std::exception&) {
            // Peer vanished or spoke garbage; the session simply ends.
        }
        std::lock_guard lock(mu);
        ++stats.sessions;
    }
};

SplitServer::SplitServer(const TransformerWeights& weights, SplitServerOptions opts) {
    if (opts.l_split == 0 || opts.l_split > weights.config.n_layers) {
        throw ConfigError("split layer " + std::to_string(opts.l_split) + " outside model depth");
    }
    try {
        impl_ = std::make_unique<Impl>(weights, std::move(opts));
    } catch (const boost::system::system_error& e) {
        throw IoError(std::string("cannot listen: ") + e.what());
    }
}

SplitServer::~SplitServer() {
    stop();
    for (auto& t : impl_->workers) {
        if (t.joinable()) t.join();
    }
}

std::uint16_t SplitServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void SplitServer::run() {
    impl_->accept_next();
    impl_->io.run();
    for (auto& t : impl_->workers) {
        if (t.joinable()) t.join();
    }
}

void SplitServer::stop() {
    asio::post(impl_->io, [this] {
        boost::system::error_code ec;
        impl_->acceptor.close(ec);
    });
}

ServerStats SplitServer::stats() const {
    std::lock_guard lock(impl_->mu);
    return impl_->stats;
}

std::vector<ISRecord> SplitServer::persisted() const {
    std::lock_guard lock(impl_->mu);
    return impl_->persisted;
}

struct SplitClient::Impl {
    asio::io_context io;
    tcp::socket socket{io};
};

SplitClient::SplitClient(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
    try {
        tcp::resolver resolver(impl_->io);
        asio::connect(impl_->socket, resolver.resolve(host, std::to_string(port)));
    } catch (const boost::system::system_error& e) {
        throw IoError("cannot connect to " + host + ":" + std::to_string(port) + ": " + e.what());
    }
}

SplitClient::~SplitClient() {
    try {
        close();
    } catch (...) {
    }
}

void SplitClient::handshake(std::size_t l_split, std::size_t d_in, std::uint16_t version) {
    ByteWriter w;
    w.put<std::uint16_t>(version);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(l_split));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d_in));
    try {
        write_msg(impl_->socket, MsgType::hello, w.bytes());
        Message m = read_msg(impl_->socket);
        if (m.type == MsgType::reject) {
            throw IoError("handshake rejected: " + std::string(m.payload.begin(), m.payload.end()));
        }
        if (m.type != MsgType::welcome) throw IoError("handshake: unexpected reply");
    } catch (const boost::system::system_error& e) {
        throw IoError(std::string("handshake failed: ") + e.what());
    }
}

FrameReply SplitClient::send_frame(std::span<const std::uint8_t> frame) {
    try {
        write_msg(impl_->socket, MsgType::frame, frame);
        Message m = read_msg(impl_->socket);
        ByteReader r(m.payload);
        r.get<std::uint32_t>();
        FrameReply reply;
        if (m.type == MsgType::ack) {
            reply.accepted = true;
            reply.next_token = r.get<std::int32_t>();
        } else if (m.type == MsgType::nack) {
            reply.error = r.get_string();
        } else {
            throw IoError("unexpected reply to frame");
        }
        return reply;
    } catch (const boost::system::system_error& e) {
        throw IoError(std::string("send_frame: ") + e.what());
    }
}

void SplitClient::close() {
    if (!impl_->socket.is_open()) return;
    boost::system::error_code ec;
    try {
        write_msg(impl_->socket, MsgType::bye, {});
    } catch (const boost::system::system_error&) {
    }
    impl_->socket.shutdown(tcp::socket::shutdown_both, ec);
    impl_->socket.close(ec);
}

ClientSession split_client(const std::string& host, std::uint16_t port, std::span<const std::string> texts,
                           const TransformerWeights& weights, const Tokenizer& tok, std::size_t l_split) {
    SplitClient client(host, port);
    client.handshake(l_split, weights.config.d_model);
    ClientSession out;
    for (const auto& c : capture_is(texts, l_split, weights, tok)) {
        out.sent.push_back(encode_frame(c.states.h, l_split));
        out.replies.push_back(client.send_frame(out.sent.back()));
    }
    client.close();
    return out;
}

}  // namespace isinv
